//! Write the SDPA file for a small instance and price the solver's gain
//! inside it.

use drrlq::ambiguity::{empirical_moments, sample_ar1, AmbiguitySet, DisturbanceModel};
use drrlq::dual_solver::{solve, SolverConfig};
use drrlq::lifting::{build_lifted, LtvSystem};
use drrlq::linalg::SchattenOrder;
use drrlq::sdp_export::export_sdp;

fn main() -> drrlq::Result<()> {
    let horizon = 3;
    let ls = build_lifted(&LtvSystem::double_integrator(horizon))?;
    let model = DisturbanceModel::new(0.0, 2, horizon, 5)?;
    let (mu_hat, sigma_hat) = empirical_moments(&sample_ar1(&model, ls.dims.n + 1)?, false)?;
    let amb = AmbiguitySet::new(mu_hat, sigma_hat, 0.5, 3.0, SchattenOrder::Inf)?;

    let path = std::env::temp_dir().join("drrlq_example.dat-s");
    let model = export_sdp(&ls, &amb, &path)?;
    println!("wrote {} ({} variables, blocks {:?})", path.display(), model.var_count(), model.blocks);

    let cfg = SolverConfig { tol_relgap: 1e-6, step_rule: drrlq::dual_solver::StepRule::Adaptive { max: 3.0 }, ..SolverConfig::default() };
    let report = solve(&ls, &amb, &cfg)?;
    let x = model.feasible_point(&report.k_best, &ls, &amb, 1e-9)?;
    println!("solver f_best {:.6}, SDP objective at its gain {:.6}", report.f_best, model.objective_at(&x));
    println!("solve the file externally with: python3 scripts/solve_sdpa.py {}", path.display());
    Ok(())
}
