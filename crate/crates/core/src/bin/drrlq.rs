use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drrlq::cli::{self, Overrides, Run};

#[derive(Parser)]
#[command(name = "drrlq", version, about = "Distributionally robust regret-optimal LQ control")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `disturbance.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "DRRLQ_THREADS")]
    threads: Option<usize>,
    /// Relative duality gap tolerance (overrides `solver.tol_relgap`).
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance.
    Solve,
    /// Controller comparison over radii, correlations and trials.
    Benchmark,
    /// Duality-gap traces over a list of horizons.
    Convergence,
    /// Project a matrix onto a Schatten ball.
    Project,
    /// Write the SDP reformulation in sparse SDPA format.
    ExportSdp {
        /// External gain (row,col,value CSV) to certify against the first-order solution.
        #[arg(long)]
        gain: Option<PathBuf>,
    },
    /// Monte Carlo evaluation of a solved or supplied gain.
    Simulate {
        /// Gain (row,col,value CSV) to evaluate instead of solving.
        #[arg(long)]
        gain: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: Args) -> drrlq::Result<()> {
    let config = args.config.ok_or_else(|| drrlq::Error::Config {
        path: "--config".into(),
        reason: "a configuration file is required".into(),
    })?;
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| drrlq::Error::Config {
                path: "--threads".into(),
                reason: e.to_string(),
            })?;
    }
    let gain = match &args.command {
        Command::ExportSdp { gain } | Command::Simulate { gain } => gain.clone(),
        _ => None,
    };
    let ov = Overrides {
        out: args.out,
        seed: args.seed,
        tol: args.tol,
        gain,
    };
    let run = Run::from_path(&config, &ov)?;
    match args.command {
        Command::Solve => {
            let s = cli::cmd_solve(&run)?;
            let r = &s.report;
            println!(
                "f = {:.6e}  g = {:.6e}  relgap = {:.3e}  iterations = {}  ({})  {:.3} s",
                r.f_best,
                r.g_best,
                r.relgap_best,
                r.iterations(),
                r.termination.as_str(),
                r.wall_time.as_secs_f64()
            );
        }
        Command::Benchmark => {
            let rows = cli::cmd_benchmark(&run)?;
            println!("{} rows written to {}", rows.len(), run.out.join("benchmark.csv").display());
        }
        Command::Convergence => {
            for c in cli::cmd_convergence(&run)? {
                println!(
                    "T = {:3}  trial {}  iterations = {:5}  relgap = {:.3e}  {:.3} s",
                    c.horizon,
                    c.trial,
                    c.report.iterations(),
                    c.report.relgap_best,
                    c.report.wall_time.as_secs_f64()
                );
            }
        }
        Command::Project => {
            let m = cli::cmd_project(&run)?;
            println!("{m}");
        }
        Command::ExportSdp { .. } => {
            let e = cli::cmd_export_sdp(&run)?;
            println!(
                "{} variables, {} blocks; first-order f = {:.9e}",
                e.model.var_count(),
                e.model.blocks.len(),
                e.report.f_best
            );
            if let Some(gap) = e.certificate {
                println!("external gain: f_ext - f_best = {gap:.3e}");
            }
        }
        Command::Simulate { .. } => {
            for row in cli::cmd_simulate(&run)? {
                let mc = row.eval.monte_carlo.expect("sampled");
                println!(
                    "rho = {:5}  MC mean = {:.6e} ± {:.2e}  closed form = {:.6e}",
                    row.rho, mc.mean, mc.std_err, row.eval.expected_cost
                );
            }
        }
    }
    Ok(())
}
