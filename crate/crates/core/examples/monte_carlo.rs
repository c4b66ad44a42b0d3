//! Closed-form expected cost against sampled rollouts of the same policy.

use drrlq::ambiguity::{empirical_moments, sample_ar1, AmbiguitySet, DisturbanceModel};
use drrlq::dual_solver::{solve, SolverConfig};
use drrlq::evaluate::monte_carlo;
use drrlq::inner_qp::InnerOptions;
use drrlq::lifting::{build_lifted, LtvSystem};
use drrlq::linalg::SchattenOrder;

fn main() -> drrlq::Result<()> {
    let horizon = 10;
    let sys = LtvSystem::double_integrator(horizon);
    let ls = build_lifted(&sys)?;
    for rho in [0.0, 0.5, 0.9] {
        let model = DisturbanceModel::new(rho, 2, horizon, 42)?;
        let (mu_hat, sigma_hat) = empirical_moments(&sample_ar1(&model, ls.dims.n + 1)?, false)?;
        let amb = AmbiguitySet::new(mu_hat, sigma_hat, 0.0, 1.0, SchattenOrder::Inf)?;
        let report = solve(&ls, &amb, &SolverConfig::default())?;
        let res = monte_carlo(&report.policy(&ls, &amb), &sys, &ls, &model, 100_000, &InnerOptions::default())?;
        let mc = res.monte_carlo.expect("sampled");
        println!(
            "rho {rho}: closed form {:.4}, sampled {:.4} +- {:.4} (median {:.4})",
            res.expected_cost, mc.mean, mc.std_err, mc.median
        );
    }
    Ok(())
}
