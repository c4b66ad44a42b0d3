//! Relative gap trace of the dual solver under the plain adaptive step and
//! the accelerated variant.

use drrlq::ambiguity::{empirical_moments, sample_ar1, AmbiguitySet, DisturbanceModel};
use drrlq::dual_solver::{solve, SolverConfig, StepRule};
use drrlq::lifting::{build_lifted, LtvSystem};
use drrlq::linalg::SchattenOrder;

fn main() -> drrlq::Result<()> {
    let horizon = 20;
    let ls = build_lifted(&LtvSystem::double_integrator(horizon))?;
    let model = DisturbanceModel::new(0.5, 2, horizon, 3)?;
    let (mu_hat, sigma_hat) = empirical_moments(&sample_ar1(&model, ls.dims.n + 1)?, false)?;
    let amb = AmbiguitySet::new(mu_hat, sigma_hat, 1.0, 100.0, SchattenOrder::One)?;

    for (name, rule) in [
        ("adaptive", StepRule::Adaptive { max: 100.0 }),
        ("accelerated", StepRule::Accelerated { initial: 100.0 }),
    ] {
        let cfg = SolverConfig { step_rule: rule, tol_relgap: 1e-4, max_iters: 20_000, ..SolverConfig::default() };
        let report = solve(&ls, &amb, &cfg)?;
        println!("{name}: {:?} in {} iterations, {:.2?}", report.termination, report.iterations(), report.wall_time);
        let every = (report.iterations() / 8).max(1);
        for rec in report.records.iter().step_by(every) {
            println!("  {:>6}  f_best {:>12.6}  g_best {:>12.6}  gap {:.2e}", rec.iteration, rec.f_best, rec.g_best, rec.relgap_best);
        }
    }
    Ok(())
}
