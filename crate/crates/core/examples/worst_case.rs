//! The worst-case mean and covariance for a fixed gain attain the robust
//! objective.

use drrlq::ambiguity::{empirical_moments, sample_ar1, worst_case_covariance, worst_case_mean, AmbiguitySet, DisturbanceModel};
use drrlq::dual_solver::{primal_value, solve, SolverConfig};
use drrlq::evaluate::expected_regret;
use drrlq::lifting::{build_lifted, LtvSystem};
use drrlq::linalg::{min_eigenvalue, SchattenOrder};

fn main() -> drrlq::Result<()> {
    let horizon = 4;
    let ls = build_lifted(&LtvSystem::double_integrator(horizon))?;
    let model = DisturbanceModel::new(0.0, 2, horizon, 17)?;
    let (mu_hat, sigma_hat) = empirical_moments(&sample_ar1(&model, ls.dims.n + 1)?, false)?;
    for p in SchattenOrder::ALL {
        let amb = AmbiguitySet::new(mu_hat.clone(), sigma_hat.clone(), 0.5, 2.0, p)?;
        let report = solve(&ls, &amb, &SolverConfig { step_rule: drrlq::dual_solver::StepRule::Adaptive { max: 2.0 }, ..SolverConfig::default() })?;
        let c = ls.regret_form(&report.k_best);
        let mu = worst_case_mean(&amb, &c)?;
        let sigma = worst_case_covariance(&amb, &c)?;
        let attained = expected_regret(&report.policy(&ls, &amb), &ls, &mu, &sigma)?;
        println!(
            "{p:?}: objective {:.6}, regret under worst-case moments {:.6}, |mu - mu_hat|^2 = {:.3}, min eig {:.2e}",
            primal_value(&report.k_best, &amb, &ls)?,
            attained,
            (&mu - &amb.mu_hat).norm_squared(),
            min_eigenvalue(&sigma)
        );
    }
    Ok(())
}
