//! Solve one distributionally robust regret problem on the double integrator
//! and compare the resulting policy with the sample-average one.

use drrlq::ambiguity::{empirical_moments, sample_ar1, true_moments, AmbiguitySet, DisturbanceModel};
use drrlq::dual_solver::{solve, SolverConfig};
use drrlq::evaluate::evaluate_against;
use drrlq::inner_qp::{controller_opt_causal, controller_saa, InnerOptions};
use drrlq::lifting::{build_lifted, LtvSystem};
use drrlq::linalg::SchattenOrder;

fn main() -> drrlq::Result<()> {
    let horizon = 10;
    let sys = LtvSystem::double_integrator(horizon);
    let ls = build_lifted(&sys)?;

    let model = DisturbanceModel::new(0.0, 2, horizon, 1)?;
    let samples = sample_ar1(&model, ls.dims.n + 1)?;
    let (mu_hat, sigma_hat) = empirical_moments(&samples, false)?;

    let amb = AmbiguitySet::new(mu_hat.clone(), sigma_hat.clone(), 0.0, horizon as f64, SchattenOrder::One)?;
    let report = solve(&ls, &amb, &SolverConfig::default())?;
    println!(
        "{:?} after {} iterations: f = {:.6}, g = {:.6}, gap = {:.2e}",
        report.termination,
        report.iterations(),
        report.f_best,
        report.g_best,
        report.relgap_best
    );

    let (mu, sigma) = true_moments(&model);
    let inner = InnerOptions::default();
    let oracle = controller_opt_causal(&ls, &mu, &sigma, &inner)?;
    let saa = controller_saa(&ls, &mu_hat, &sigma_hat, &inner)?;
    for (name, pol) in [("robust", report.policy(&ls, &amb)), ("saa", saa), ("opt_causal", oracle.clone())] {
        let eval = evaluate_against(&pol, &ls, &mu, &sigma, &oracle)?;
        println!("{name:>10}: expected cost {:.4}, ex-ante regret {:.4}", eval.expected_cost, eval.exante_regret);
    }
    Ok(())
}
