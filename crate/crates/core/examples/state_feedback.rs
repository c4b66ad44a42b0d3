//! Convert a disturbance-feedback policy into causal state feedback and check
//! that both produce the same trajectory.

use drrlq::ambiguity::{draw_ar1, empirical_moments, sample_ar1, AmbiguitySet, DisturbanceModel};
use drrlq::dual_solver::{solve, SolverConfig};
use drrlq::lifting::{build_lifted, rollout, rollout_state_feedback, to_state_feedback, LtvSystem};
use drrlq::linalg::SchattenOrder;
use rand::SeedableRng;

fn main() -> drrlq::Result<()> {
    let horizon = 5;
    let sys = LtvSystem::double_integrator(horizon);
    let ls = build_lifted(&sys)?;
    let model = DisturbanceModel::new(0.3, 2, horizon, 9)?;
    let (mu_hat, sigma_hat) = empirical_moments(&sample_ar1(&model, ls.dims.n + 1)?, false)?;
    let amb = AmbiguitySet::new(mu_hat, sigma_hat, 0.2, 2.0, SchattenOrder::Two)?;
    let pol = solve(&ls, &amb, &SolverConfig::default())?.policy(&ls, &amb);

    let (l, c) = to_state_feedback(&pol, &ls)?;
    println!("stage gains (u_t = L_t x_t + ...):");
    for t in 0..horizon {
        let own = l.view((t, 2 * t), (1, 2));
        println!("  t={t}: [{:+.4}, {:+.4}]  offset {:+.4}", own[(0, 0)], own[(0, 1)], c[t]);
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let w = draw_ar1(&model, &mut rng);
    let a = rollout(&sys, &pol, &w)?;
    let b = rollout_state_feedback(&sys, &l, &c, &w)?;
    println!("cost {:.6} vs {:.6}, max input difference {:.1e}", a.cost, b.cost, (&a.u - &b.u).amax());
    Ok(())
}
