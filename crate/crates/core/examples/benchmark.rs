//! A reduced version of the benchmark sweep: mean expected cost of each
//! controller across the radius grid.

use std::collections::BTreeMap;
use std::path::Path;

use drrlq::cli::run_benchmark;
use drrlq::config::ExperimentConfig;

const CONFIG: &str = r#"
version = 1
trials = 4

[system]
preset = "double_integrator"
horizon = 6

[disturbance]
rho = [0.0]
seed = 2024

[ambiguity]
p = ["1", "2", "inf"]
r_grid = { min = 1e-2, max = 1e2, count = 5 }

[solver]
step_rule = "accelerated"
"#;

fn main() -> drrlq::Result<()> {
    let cfg = ExperimentConfig::parse(CONFIG, Path::new("."))?;
    let rows = run_benchmark(&cfg)?;

    let mut sums: BTreeMap<(&str, u64), (f64, usize)> = BTreeMap::new();
    for row in &rows {
        let cell = sums.entry((row.controller, row.r.to_bits())).or_default();
        cell.0 += row.expected_cost;
        cell.1 += 1;
    }
    let radii = cfg.radii(6);
    print!("{:>12}", "r");
    for r in &radii {
        print!("{r:>10.0e}");
    }
    println!();
    for name in ["saa", "nuc_regret", "frob_regret", "spec_regret", "opt_causal"] {
        print!("{name:>12}");
        for r in &radii {
            let (sum, count) = sums[&(name, r.to_bits())];
            print!("{:>10.3}", sum / count as f64);
        }
        println!();
    }
    Ok(())
}
