//! Experiment harness behind the `drrlq` binary: one function per
//! subcommand, each reading an [`ExperimentConfig`] and writing CSV files
//! into an output directory.
//!
//! CSV bodies depend only on the configuration and seed. Wall times and
//! other run metadata go to `*_meta.csv` sidecars.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ambiguity::{self, derive_seed, AmbiguitySet, DisturbanceModel};
use crate::config::ExperimentConfig;
use crate::dual_solver::{self, SolveReport};
use crate::error::{Error, Result};
use crate::evaluate;
use crate::inner_qp::{controller_opt_causal, controller_saa, InnerOptions};
use crate::io;
use crate::lifting::{build_lifted, AffinePolicy, LiftedSystem, LtvSystem};
use crate::linalg::SchattenOrder;
use crate::projections::{project_schatten, SchattenBall};
use crate::sdp_export;

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    /// Only used by the `simulate` and `export-sdp` subcommands.
    pub gain: Option<PathBuf>,
}

/// A loaded configuration with its output directory created.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<Self> {
        if let Some(seed) = ov.seed {
            cfg.disturbance.seed = seed;
        }
        if let Some(tol) = ov.tol {
            if !(tol > 0.0) {
                return Err(Error::Config {
                    path: "--tol".into(),
                    reason: "must be positive".into(),
                });
            }
            cfg.solver.tol_relgap = tol;
        }
        if let Some(gain) = &ov.gain {
            cfg.simulate.gain_file = Some(gain.clone());
        }
        let out = ov
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(|p| cfg.resolve(p)))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run { cfg, out })
    }

    pub fn from_path(config: &Path, ov: &Overrides) -> Result<Self> {
        Run::new(ExperimentConfig::from_path(config)?, ov)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Nominal moments and the ambiguity set for a single-instance command.
pub struct Instance {
    pub sys: LtvSystem,
    pub ls: LiftedSystem,
    pub amb: AmbiguitySet,
    pub model: DisturbanceModel,
}

/// Builds the plant and estimates `(μ̂, Σ̂)` from the sample file or from
/// AR(1) draws with the first configured `ρ`.
pub fn instance(cfg: &ExperimentConfig, p: SchattenOrder) -> Result<Instance> {
    let sys = cfg.system()?;
    let ls = build_lifted(&sys)?;
    let dims = ls.dims;
    let model = DisturbanceModel::new(cfg.disturbance.rho[0], dims.nx, dims.horizon, cfg.disturbance.seed)?;
    let samples = match &cfg.disturbance.sample_file {
        Some(file) => {
            let (s, nx, t) = io::read_samples(&cfg.resolve(file))?;
            if (nx, t) != (dims.nx, dims.horizon) {
                return Err(Error::Config {
                    path: "disturbance.sample_file".into(),
                    reason: format!("samples have nx={nx}, T={t} but the system has nx={}, T={}", dims.nx, dims.horizon),
                });
            }
            s
        }
        None => ambiguity::sample_ar1(&model, cfg.disturbance.samples.unwrap_or(dims.n + 1))?,
    };
    let (mu, sigma) = ambiguity::empirical_moments(&samples, cfg.disturbance.center)?;
    let amb = AmbiguitySet::new(mu, sigma, cfg.ambiguity.r1, cfg.solve_radius(dims.horizon), p)?;
    Ok(Instance { sys, ls, amb, model })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `key,value` run metadata.
fn write_meta(path: &Path, started: Instant, extra: &[(&str, String)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["key", "value"])?;
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let rows: Vec<(&str, String)> = vec![
        ("crate_version", env!("CARGO_PKG_VERSION").to_string()),
        ("finished_unix", unix.to_string()),
        ("wall_time_s", started.elapsed().as_secs_f64().to_string()),
        ("threads", rayon::current_num_threads().to_string()),
        ("rng", ambiguity::RNG_ALGORITHM.to_string()),
    ];
    for (k, v) in rows.iter().chain(extra) {
        w.write_record([*k, v.as_str()])?;
    }
    finish(w, path)
}

fn fmt_opt(x: Option<SchattenOrder>) -> String {
    x.map(|p| p.to_string()).unwrap_or_default()
}

/// Result of [`cmd_solve`].
#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub report: SolveReport,
    pub files: Vec<PathBuf>,
}

/// Single solve. Writes `solve_trace.csv`, `solve_summary.csv`,
/// `k_best.csv`, `k_best.bin` and the `solve_meta.csv` sidecar.
pub fn cmd_solve(run: &Run) -> Result<SolveSummary> {
    let started = Instant::now();
    let cfg = &run.cfg;
    let inst = instance(cfg, cfg.ambiguity.p[0])?;
    let scfg = cfg.solver_config(inst.amb.r1, inst.amb.r2);
    let report = dual_solver::solve(&inst.ls, &inst.amb, &scfg)?;

    let trace = run.path("solve_trace.csv");
    let mut w = csv_writer(&trace)?;
    w.write_record(["iteration", "f", "g", "relgap_best", "eta"])?;
    for r in &report.records {
        w.write_record([r.iteration.to_string(), r.f.to_string(), r.g.to_string(), r.relgap_best.to_string(), r.eta.to_string()])?;
    }
    finish(w, &trace)?;

    let timing = run.path("solve_trace_timing.csv");
    let mut w = csv_writer(&timing)?;
    w.write_record(["iteration", "millis"])?;
    for r in &report.records {
        w.write_record([r.iteration.to_string(), r.millis.to_string()])?;
    }
    finish(w, &timing)?;

    let summary = run.path("solve_summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record(["horizon", "p", "r1", "r2", "f", "g", "relgap", "iterations", "termination"])?;
    w.write_record([
        inst.ls.dims.horizon.to_string(),
        inst.amb.p.to_string(),
        inst.amb.r1.to_string(),
        inst.amb.r2.to_string(),
        report.f_best.to_string(),
        report.g_best.to_string(),
        report.relgap_best.to_string(),
        report.iterations().to_string(),
        report.termination.as_str().to_string(),
    ])?;
    finish(w, &summary)?;

    let k_csv = run.path("k_best.csv");
    io::write_gain_csv(&k_csv, &report.k_best, &inst.ls.mask)?;
    let k_bin = run.path("k_best.bin");
    io::write_matrix_bin(&k_bin, &report.k_best)?;
    let meta = run.path("solve_meta.csv");
    write_meta(&meta, started, &[("solver_wall_time_s", report.wall_time.as_secs_f64().to_string())])?;
    Ok(SolveSummary {
        report,
        files: vec![trace, timing, summary, k_csv, k_bin, meta],
    })
}

/// One line of the benchmark CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub controller: &'static str,
    pub p: Option<SchattenOrder>,
    pub r: f64,
    pub rho: f64,
    pub trial: usize,
    pub expected_cost: f64,
    pub exante_regret: f64,
    /// Empty for the non-robust baselines.
    pub relgap: Option<f64>,
    pub iterations: Option<usize>,
    /// Solver bounds behind `relgap` (not written to the CSV).
    pub certificate: Option<Certificate>,
}

/// Final bounds of a dual solve and the smallest `λ_min(Λ₂ − Σ̂)` seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub f_best: f64,
    pub g_best: f64,
    pub min_cone_margin: f64,
}

impl Certificate {
    pub fn of(report: &SolveReport) -> Self {
        Certificate {
            f_best: report.f_best,
            g_best: report.g_best,
            min_cone_margin: report.records.iter().map(|r| r.cone_margin).fold(f64::INFINITY, f64::min),
        }
    }
}

pub const BENCHMARK_HEADER: [&str; 9] = ["controller", "p", "r", "rho", "trial", "expected_cost", "exante_regret", "relgap", "iterations"];

impl BenchmarkRow {
    fn record(&self) -> [String; 9] {
        [
            self.controller.to_string(),
            fmt_opt(self.p),
            self.r.to_string(),
            self.rho.to_string(),
            self.trial.to_string(),
            self.expected_cost.to_string(),
            self.exante_regret.to_string(),
            self.relgap.map(|g| g.to_string()).unwrap_or_default(),
            self.iterations.map(|i| i.to_string()).unwrap_or_default(),
        ]
    }
}

/// One `(ρ, trial)` cell of the benchmark: fresh training data, every
/// controller across the radius grid, closed-form evaluation under the truth.
pub fn benchmark_trial(cfg: &ExperimentConfig, ls: &LiftedSystem, rho_idx: usize, trial: usize) -> Result<Vec<BenchmarkRow>> {
    let dims = ls.dims;
    let rho = cfg.disturbance.rho[rho_idx];
    let seed = derive_seed(cfg.disturbance.seed, &[rho_idx as u64, trial as u64]);
    let model = DisturbanceModel::new(rho, dims.nx, dims.horizon, seed)?;
    let samples = ambiguity::sample_ar1(&model, cfg.disturbance.samples.unwrap_or(dims.n + 1))?;
    let (mu_hat, sigma_hat) = ambiguity::empirical_moments(&samples, cfg.disturbance.center)?;
    let (mu, sigma) = ambiguity::true_moments(&model);
    let inner = InnerOptions {
        tol: cfg.solver.inner_tol,
        ..InnerOptions::default()
    };
    let oracle = controller_opt_causal(ls, &mu, &sigma, &inner)?;
    let oracle_eval = evaluate::evaluate_against(&oracle, ls, &mu, &sigma, &oracle)?;
    let saa = controller_saa(ls, &mu_hat, &sigma_hat, &inner)?;
    let saa_eval = evaluate::evaluate_against(&saa, ls, &mu, &sigma, &oracle)?;

    let radii = cfg.radii(dims.horizon);
    let mut rows = Vec::new();
    for &p in &cfg.ambiguity.p {
        for &r in &radii {
            let amb = AmbiguitySet::new(mu_hat.clone(), sigma_hat.clone(), cfg.ambiguity.r1, r, p)?;
            let report = dual_solver::solve(ls, &amb, &cfg.solver_config(amb.r1, r))?;
            let eval = evaluate::evaluate_against(&report.policy(ls, &amb), ls, &mu, &sigma, &oracle)?;
            rows.push(BenchmarkRow {
                controller: p.controller_name(),
                p: Some(p),
                r,
                rho,
                trial,
                expected_cost: eval.expected_cost,
                exante_regret: eval.exante_regret,
                relgap: Some(report.relgap_best),
                iterations: Some(report.iterations()),
                certificate: Some(Certificate::of(&report)),
            });
        }
    }
    for (controller, eval) in [("saa", saa_eval), ("opt_causal", oracle_eval)] {
        for &r in &radii {
            rows.push(BenchmarkRow {
                controller,
                p: None,
                r,
                rho,
                trial,
                expected_cost: eval.expected_cost,
                exante_regret: eval.exante_regret,
                relgap: None,
                iterations: None,
                certificate: None,
            });
        }
    }
    Ok(rows)
}

/// Full benchmark sweep. Rows are ordered by `(ρ, trial)` and then as
/// produced by [`benchmark_trial`], independent of the thread count.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<BenchmarkRow>> {
    let sys = cfg.system()?;
    let ls = build_lifted(&sys)?;
    let cells: Vec<(usize, usize)> = (0..cfg.disturbance.rho.len())
        .flat_map(|i| (0..cfg.trials).map(move |t| (i, t)))
        .collect();
    let per_cell: Result<Vec<Vec<BenchmarkRow>>> = cells
        .par_iter()
        .map(|&(i, t)| benchmark_trial(cfg, &ls, i, t))
        .collect();
    Ok(per_cell?.into_iter().flatten().collect())
}

/// Writes `benchmark.csv` and `benchmark_meta.csv`.
pub fn cmd_benchmark(run: &Run) -> Result<Vec<BenchmarkRow>> {
    let started = Instant::now();
    let rows = run_benchmark(&run.cfg)?;
    let path = run.path("benchmark.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(BENCHMARK_HEADER)?;
    for row in &rows {
        w.write_record(row.record())?;
    }
    finish(w, &path)?;
    write_meta(&run.path("benchmark_meta.csv"), started, &[("rows", rows.len().to_string())])?;
    Ok(rows)
}

/// Per-solve outcome of the convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub horizon: usize,
    pub trial: usize,
    pub report: SolveReport,
}

/// Solves `r = T` instances for each horizon until the time budget is spent.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRun>> {
    let started = Instant::now();
    let p = cfg.ambiguity.p[0];
    let rho = cfg.disturbance.rho[0];
    let mut runs = Vec::new();
    for &t in &cfg.convergence.horizons {
        if started.elapsed().as_secs_f64() > cfg.convergence.budget_s {
            log::warn!("convergence budget exhausted before T={t}");
            break;
        }
        let sys = cfg.system_with_horizon(Some(t))?;
        let ls = build_lifted(&sys)?;
        let dims = ls.dims;
        let trials: Result<Vec<ConvergenceRun>> = (0..cfg.convergence.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(cfg.disturbance.seed, &[t as u64, trial as u64]);
                let model = DisturbanceModel::new(rho, dims.nx, t, seed)?;
                let samples = ambiguity::sample_ar1(&model, cfg.disturbance.samples.unwrap_or(dims.n + 1))?;
                let (mu, sigma) = ambiguity::empirical_moments(&samples, cfg.disturbance.center)?;
                let r = cfg.solve_radius(t);
                let amb = AmbiguitySet::new(mu, sigma, cfg.ambiguity.r1, r, p)?;
                let mut scfg = cfg.solver_config(amb.r1, r);
                scfg.record_history = Some(false);
                let report = dual_solver::solve(&ls, &amb, &scfg)?;
                log::info!("T={t} trial={trial}: {} iterations, relgap {:.3e}", report.iterations(), report.relgap_best);
                Ok(ConvergenceRun { horizon: t, trial, report })
            })
            .collect();
        runs.extend(trials?);
    }
    Ok(runs)
}

/// Writes `convergence_traces.csv`, `convergence_summary.csv` and the
/// timing sidecar `convergence_timing.csv`.
pub fn cmd_convergence(run: &Run) -> Result<Vec<ConvergenceRun>> {
    let started = Instant::now();
    let runs = run_convergence(&run.cfg)?;
    let traces = run.path("convergence_traces.csv");
    let mut w = csv_writer(&traces)?;
    w.write_record(["horizon", "trial", "iteration", "f_best", "g_best", "relgap_best"])?;
    for c in &runs {
        for r in &c.report.records {
            w.write_record([
                c.horizon.to_string(),
                c.trial.to_string(),
                r.iteration.to_string(),
                r.f_best.to_string(),
                r.g_best.to_string(),
                r.relgap_best.to_string(),
            ])?;
        }
    }
    finish(w, &traces)?;

    let summary = run.path("convergence_summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record(["horizon", "trial", "iterations", "relgap", "termination"])?;
    for c in &runs {
        w.write_record([
            c.horizon.to_string(),
            c.trial.to_string(),
            c.report.iterations().to_string(),
            c.report.relgap_best.to_string(),
            c.report.termination.as_str().to_string(),
        ])?;
    }
    finish(w, &summary)?;

    let times = run.path("convergence_timing.csv");
    let mut w = csv_writer(&times)?;
    w.write_record(["horizon", "trial", "wall_time_s", "millis_per_iteration"])?;
    for c in &runs {
        let secs = c.report.wall_time.as_secs_f64();
        w.write_record([
            c.horizon.to_string(),
            c.trial.to_string(),
            secs.to_string(),
            (1e3 * secs / c.report.iterations() as f64).to_string(),
        ])?;
    }
    finish(w, &times)?;
    write_meta(&run.path("convergence_meta.csv"), started, &[])?;
    Ok(runs)
}

/// Projects `project.matrix` onto the configured Schatten ball and writes
/// `projection.csv` (input and projection in long format).
pub fn cmd_project(run: &Run) -> Result<DMatrix<f64>> {
    let cfg = &run.cfg;
    let spec = cfg.project.as_ref().ok_or_else(|| Error::Config {
        path: "project".into(),
        reason: "missing table `[project]`".into(),
    })?;
    let read = |m: &crate::config::MatrixSpec, path: &str| -> Result<DMatrix<f64>> {
        match m {
            crate::config::MatrixSpec::Inline(rows) => io::matrix_from_rows(rows).map_err(|reason| Error::Config {
                path: path.into(),
                reason,
            }),
            crate::config::MatrixSpec::File { file } => io::read_matrix_csv(&cfg.resolve(file)),
        }
    };
    let x = read(&spec.matrix, "project.matrix")?;
    let center = match &spec.center {
        Some(c) => read(c, "project.center")?,
        None => DMatrix::zeros(x.nrows(), x.ncols()),
    };
    let ball = SchattenBall::new(center, spec.radius, spec.p)?;
    let projected = project_schatten(&x, &ball)?;
    io::write_matrices_long(&run.path("projection.csv"), &[("input", &x), ("projected", &projected)])?;
    Ok(projected)
}

/// Result of [`cmd_export_sdp`].
#[derive(Debug, Clone)]
pub struct ExportSummary {
    pub model: sdp_export::SdpModel,
    pub report: SolveReport,
    /// `f(K_ext) − f(K_best)` when an external gain was supplied.
    pub certificate: Option<f64>,
}

/// Writes `problem.dat-s`, `sdp_variables.csv` and `sdp_reference.csv`
/// (the first-order solution for comparison). With an external gain, also
/// `certificate.csv`.
pub fn cmd_export_sdp(run: &Run) -> Result<ExportSummary> {
    let cfg = &run.cfg;
    let inst = instance(cfg, cfg.ambiguity.p[0])?;
    let model = sdp_export::export_sdp(&inst.ls, &inst.amb, &run.path("problem.dat-s"))?;

    let vars = run.path("sdp_variables.csv");
    let mut w = csv_writer(&vars)?;
    w.write_record(["index", "kind", "i", "j"])?;
    for (idx, var) in model.variables.iter().enumerate() {
        let (kind, i, j) = match *var {
            sdp_export::Variable::Gain { row, col } => ("K", row.to_string(), col.to_string()),
            sdp_export::Variable::X { i, j } => ("X", i.to_string(), j.to_string()),
            sdp_export::Variable::Y { i, j } => ("Y", i.to_string(), j.to_string()),
            sdp_export::Variable::Gamma1 => ("gamma1", String::new(), String::new()),
            sdp_export::Variable::GammaQ => ("gamma_q", String::new(), String::new()),
        };
        w.write_record([(idx + 1).to_string(), kind.to_string(), i, j])?;
    }
    finish(w, &vars)?;

    let report = dual_solver::solve(&inst.ls, &inst.amb, &cfg.solver_config(inst.amb.r1, inst.amb.r2))?;
    let reference = run.path("sdp_reference.csv");
    let mut w = csv_writer(&reference)?;
    w.write_record(["f_best", "g_best", "relgap", "cond_d"])?;
    w.write_record([
        report.f_best.to_string(),
        report.g_best.to_string(),
        report.relgap_best.to_string(),
        model.cond_d.to_string(),
    ])?;
    finish(w, &reference)?;

    let certificate = match &cfg.simulate.gain_file {
        Some(file) => {
            let k_ext = io::read_gain_csv(&cfg.resolve(file), &inst.ls.mask)?;
            let gap = sdp_export::certify_solution(&inst.ls, &inst.amb, &k_ext, report.f_best)?;
            let path = run.path("certificate.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["f_external", "f_best", "gap"])?;
            w.write_record([(report.f_best + gap).to_string(), report.f_best.to_string(), gap.to_string()])?;
            finish(w, &path)?;
            Some(gap)
        }
        None => None,
    };
    Ok(ExportSummary { model, report, certificate })
}

/// One line of `simulate.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateRow {
    pub rho: f64,
    pub eval: evaluate::EvalResult,
}

/// Monte Carlo evaluation of the solved (or supplied) gain under every
/// configured `ρ`.
pub fn cmd_simulate(run: &Run) -> Result<Vec<SimulateRow>> {
    let started = Instant::now();
    let cfg = &run.cfg;
    let inst = instance(cfg, cfg.ambiguity.p[0])?;
    let policy: AffinePolicy = match &cfg.simulate.gain_file {
        Some(file) => {
            let k = io::read_gain_csv(&cfg.resolve(file), &inst.ls.mask)?;
            AffinePolicy::centered(k, &inst.ls, &inst.amb.mu_hat)
        }
        None => dual_solver::solve(&inst.ls, &inst.amb, &cfg.solver_config(inst.amb.r1, inst.amb.r2))?.policy(&inst.ls, &inst.amb),
    };
    let inner = InnerOptions {
        tol: cfg.solver.inner_tol,
        ..InnerOptions::default()
    };
    let dims = inst.ls.dims;
    let mut rows = Vec::new();
    for (i, &rho) in cfg.disturbance.rho.iter().enumerate() {
        let seed = derive_seed(cfg.disturbance.seed, &[u64::MAX, i as u64]);
        let model = DisturbanceModel::new(rho, dims.nx, dims.horizon, seed)?;
        let eval = evaluate::monte_carlo(&policy, &inst.sys, &inst.ls, &model, cfg.simulate.trials, &inner)?;
        rows.push(SimulateRow { rho, eval });
    }
    let path = run.path("simulate.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "rho",
        "trials",
        "mc_mean",
        "mc_std_err",
        "mc_p20",
        "mc_median",
        "mc_p80",
        "expected_cost",
        "expected_regret",
        "exante_regret",
        "worst_case_regret",
    ])?;
    for row in &rows {
        let e = &row.eval;
        let mc = e.monte_carlo.expect("sampled");
        w.write_record([
            row.rho.to_string(),
            mc.trials.to_string(),
            mc.mean.to_string(),
            mc.std_err.to_string(),
            mc.p20.to_string(),
            mc.median.to_string(),
            mc.p80.to_string(),
            e.expected_cost.to_string(),
            e.expected_regret.to_string(),
            e.exante_regret.to_string(),
            e.worst_case_regret.to_string(),
        ])?;
    }
    finish(w, &path)?;
    write_meta(&run.path("simulate_meta.csv"), started, &[])?;
    Ok(rows)
}
