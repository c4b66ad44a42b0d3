mod common;

use common::*;
use drrlq::ambiguity::{worst_case_covariance, worst_case_mean};
use drrlq::dual_solver::{dual_value, primal_terms, primal_value, solve, SolverConfig, StepRule};
use drrlq::evaluate::{evaluate, expected_cost, expected_regret, noncausal_expected_cost};
use drrlq::inner_qp::{controller_opt_causal, solve_inner, InnerOptions, InnerProblem};
use drrlq::lifting::{rollout, rollout_state_feedback, to_state_feedback, AffinePolicy, LiftedSystem};
use drrlq::linalg::{self, SchattenOrder};
use drrlq::projections::{project_schatten, DualIterate, SchattenBall};
use drrlq::sdp_export::{export_model, parse_sdpa, Variable};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn order() -> impl Strategy<Value = SchattenOrder> {
    prop::sample::select(ORDERS.to_vec())
}

fn sdp_order() -> impl Strategy<Value = SchattenOrder> {
    prop::sample::select(vec![SchattenOrder::One, SchattenOrder::Inf])
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=2, 1usize..=2, 1usize..=3)
}

fn inner() -> InnerOptions {
    InnerOptions::default()
}

fn small_solver(max_iters: usize, accelerated: bool) -> SolverConfig {
    SolverConfig {
        max_iters,
        step_rule: if accelerated { StepRule::Accelerated { initial: 1.0 } } else { StepRule::default() },
        record_history: Some(true),
        ..SolverConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inputs_ignore_future_disturbances(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (sys, ls) = lifted(&mut g, nx, nu, t);
        let pol = AffinePolicy { k: causal_gain(&mut g, &ls, 1.0), v: gauss_vec(&mut g, ls.dims.m, 1.0) };
        let w = gauss_vec(&mut g, ls.dims.n, 1.0);
        let full = rollout(&sys, &pol, &w).unwrap();
        for stage in 0..t {
            let mut cut = w.clone();
            cut.rows_mut((stage + 1) * nx, ls.dims.n - (stage + 1) * nx).fill(0.0);
            let trunc = rollout(&sys, &pol, &cut).unwrap();
            for j in stage * nu..(stage + 1) * nu {
                prop_assert_eq!(full.u[j], trunc.u[j]);
            }
        }
    }

    #[test]
    fn clairvoyant_input_is_a_minimum(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        for _ in 0..100 {
            let w = gauss_vec(&mut g, ls.dims.n, 1.0);
            let delta = gauss_vec(&mut g, ls.dims.m, 1.0);
            let u = &ls.k_nc * &w;
            let base = ls.cost(&u, &w);
            for eps in [1e-3, -1e-3] {
                let moved = ls.cost(&(&u + &delta * eps), &w);
                prop_assert!(moved >= base - 1e-13 * base.abs().max(1.0), "{moved} < {base}");
            }
        }
    }

    #[test]
    fn regret_is_a_d_weighted_square(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let w = gauss_vec(&mut g, ls.dims.n, 1.0);
        let u = gauss_vec(&mut g, ls.dims.m, 1.0);
        let e = &u - &ls.k_nc * &w;
        let quad = e.dot(&(&ls.d * &e));
        let scale = ls.cost(&u, &w).abs().max(quad).max(1.0);
        prop_assert!((ls.regret(&u, &w) - quad).abs() <= 1e-9 * scale);
    }

    #[test]
    fn rollout_matches_lifted_maps(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (sys, ls) = lifted(&mut g, nx, nu, t);
        let pol = AffinePolicy { k: causal_gain(&mut g, &ls, 1.0), v: gauss_vec(&mut g, ls.dims.m, 1.0) };
        let w = gauss_vec(&mut g, ls.dims.n, 1.0);
        let run = rollout(&sys, &pol, &w).unwrap();
        let x = &ls.f * &run.u + &ls.g * &w;
        prop_assert!((&x - &run.x).norm() <= 1e-10 * (run.u.norm() + w.norm()));
    }

    #[test]
    fn state_feedback_reproduces_disturbance_feedback(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (sys, ls) = lifted(&mut g, nx, nu, t);
        let pol = AffinePolicy { k: causal_gain(&mut g, &ls, 0.3), v: gauss_vec(&mut g, ls.dims.m, 1.0) };
        let (l, c) = to_state_feedback(&pol, &ls).unwrap();
        let w = gauss_vec(&mut g, ls.dims.n, 1.0);
        let a = rollout(&sys, &pol, &w).unwrap();
        let b = rollout_state_feedback(&sys, &l, &c, &w).unwrap();
        prop_assert!((&a.x - &b.x).norm() <= 1e-8 * (1.0 + a.x.norm()));
        prop_assert!((&a.u - &b.u).norm() <= 1e-8 * (1.0 + a.u.norm()));
    }

    #[test]
    fn worst_case_covariance_sits_in_the_ball(seed: u64, n in 1usize..=6, r2 in 0.0f64..5.0, p in order()) {
        let mut g = rng(seed);
        let amb = ambiguity(&mut g, n, 0.0, r2, p);
        let ck = psd(&mut g, n, 0.0);
        let sigma = worst_case_covariance(&amb, &ck).unwrap();
        prop_assert_eq!(linalg::max_asymmetry(&sigma), 0.0);
        prop_assert!(linalg::min_eigenvalue(&sigma) >= -1e-9);
        let dist = linalg::schatten_norm_sym(&(&sigma - &amb.sigma_hat), p);
        prop_assert!(dist <= r2 + 1e-9 * (1.0 + r2), "{dist} > {r2}");
    }

    #[test]
    fn worst_case_moments_attain_the_certified_regret(
        seed: u64, (nx, nu, t) in dims(), r1 in 0.0f64..4.0, r2 in 0.0f64..4.0, p in order(),
    ) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let amb = ambiguity(&mut g, ls.dims.n, r1, r2, p);
        let k = causal_gain(&mut g, &ls, 1.0);
        let c = ls.regret_form(&k);
        let pol = AffinePolicy::centered(k, &ls, &amb.mu_hat);
        let mu = worst_case_mean(&amb, &c).unwrap();
        let sigma = worst_case_covariance(&amb, &c).unwrap();
        let attained = expected_regret(&pol, &ls, &mu, &sigma).unwrap();
        let certified = primal_terms(&c, &amb).value;
        prop_assert!(rel(attained, certified) <= 1e-8, "{attained} vs {certified}");
    }

    #[test]
    fn sampled_moments_never_beat_the_certificate(seed: u64, t in 1usize..=2, r1 in 0.0f64..2.0, r2 in 0.0f64..2.0, p in order()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, 1, 1, t);
        let n = ls.dims.n;
        let amb = ambiguity(&mut g, n, r1, r2, p);
        let k = causal_gain(&mut g, &ls, 1.0);
        let certified = primal_value(&k, &amb, &ls).unwrap();
        let pol = AffinePolicy::centered(k, &ls, &amb.mu_hat);
        for _ in 0..400 {
            let (mu, sigma) = feasible_moments(&mut g, &amb);
            let value = expected_regret(&pol, &ls, &mu, &sigma).unwrap();
            prop_assert!(value <= certified + 1e-6 * certified.max(1.0), "{value} > {certified}");
        }
    }

    #[test]
    fn projection_is_idempotent(seed: u64, n in 1usize..=6, radius in 0.0f64..4.0, p in order()) {
        let mut g = rng(seed);
        let ball = SchattenBall::new(sym(&mut g, n, 1.0), radius, p).unwrap();
        let x = sym(&mut g, n, 2.0);
        let once = project_schatten(&x, &ball).unwrap();
        let twice = project_schatten(&once, &ball).unwrap();
        prop_assert!((&twice - &once).norm() <= 1e-10);
        prop_assert!(ball.contains(&once, 1e-10 * (1.0 + radius)));
    }

    #[test]
    fn projection_is_nonexpansive(seed: u64, n in 1usize..=6, radius in 0.0f64..4.0, p in order()) {
        let mut g = rng(seed);
        let ball = SchattenBall::new(sym(&mut g, n, 1.0), radius, p).unwrap();
        let x = sym(&mut g, n, 2.0);
        let y = sym(&mut g, n, 2.0);
        let px = project_schatten(&x, &ball).unwrap();
        let py = project_schatten(&y, &ball).unwrap();
        prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-10);
    }

    #[test]
    fn projection_is_nearest(seed: u64, n in 1usize..=5, radius in 0.0f64..4.0, p in order()) {
        let mut g = rng(seed);
        let ball = SchattenBall::new(sym(&mut g, n, 1.0), radius, p).unwrap();
        let x = sym(&mut g, n, 2.0);
        let px = project_schatten(&x, &ball).unwrap();
        let best = (&px - &x).norm();
        for _ in 0..100 {
            let z = ball_point(&mut g, &ball);
            prop_assert!(best <= (&z - &x).norm() + 1e-12);
        }
    }

    #[test]
    fn projection_keeps_psd_inputs_psd(seed: u64, n in 1usize..=6, radius in 0.0f64..4.0, p in order()) {
        let mut g = rng(seed);
        let ball = SchattenBall::origin(n, radius, p).unwrap();
        let x = psd(&mut g, n, 0.0) * 3.0;
        let px = project_schatten(&x, &ball).unwrap();
        prop_assert!(linalg::min_eigenvalue(&px) >= -1e-10);
    }

    #[test]
    fn projection_commutes_with_rotations(seed: u64, n in 1usize..=6, radius in 0.0f64..4.0, p in order()) {
        let mut g = rng(seed);
        let ball = SchattenBall::origin(n, radius, p).unwrap();
        let x = sym(&mut g, n, 2.0);
        let u = orthogonal(&mut g, n);
        let rotated = linalg::symmetrized(&(&u * &x * u.transpose()));
        let lhs = project_schatten(&rotated, &ball).unwrap();
        let rhs = &u * project_schatten(&x, &ball).unwrap() * u.transpose();
        prop_assert!((&lhs - &rhs).norm() <= 1e-9);
    }

    #[test]
    fn inner_value_is_nonnegative(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let m = psd(&mut g, ls.dims.n, 0.0);
        let sol = solve_inner(&InnerProblem { weight: &m, ls: &ls }, &inner(), None).unwrap();
        prop_assert!(sol.value >= -1e-12);
    }

    #[test]
    fn inner_value_is_monotone_in_the_weight(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let m1 = psd(&mut g, ls.dims.n, 0.01);
        let m2 = &m1 + psd(&mut g, ls.dims.n, 0.0);
        let v1 = solve_inner(&InnerProblem { weight: &m1, ls: &ls }, &inner(), None).unwrap().value;
        let v2 = solve_inner(&InnerProblem { weight: &m2, ls: &ls }, &inner(), None).unwrap().value;
        prop_assert!(v1 <= v2 + 1e-10, "{v1} > {v2}");
    }

    #[test]
    fn inner_matches_dense_normal_equations(seed: u64, t in 1usize..=2) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, 1, 1, t);
        let m = psd(&mut g, ls.dims.n, 0.05);
        let sol = solve_inner(&InnerProblem { weight: &m, ls: &ls }, &inner(), None).unwrap();
        let oracle = dense_inner(&ls, &m);
        prop_assert!((&sol.k - &oracle).norm() <= 1e-8 * (1.0 + oracle.norm()));
    }

    #[test]
    fn inner_is_homogeneous_in_the_weight(seed: u64, (nx, nu, t) in dims(), alpha in 0.01f64..100.0) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let m = psd(&mut g, ls.dims.n, 0.05);
        let scaled = &m * alpha;
        let a = solve_inner(&InnerProblem { weight: &m, ls: &ls }, &inner(), None).unwrap();
        let b = solve_inner(&InnerProblem { weight: &scaled, ls: &ls }, &inner(), None).unwrap();
        prop_assert!(rel(b.value, alpha * a.value) <= 1e-9);
        prop_assert!((&a.k - &b.k).norm() <= 1e-8 * (1.0 + a.k.norm()));
    }

    #[test]
    fn costs_split_into_regret_plus_clairvoyant_cost(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let n = ls.dims.n;
        let mu = gauss_vec(&mut g, n, 1.0);
        let sigma = psd(&mut g, n, 0.0);
        let base = noncausal_expected_cost(&ls, &mu, &sigma).unwrap();
        for _ in 0..10 {
            let pol = AffinePolicy { k: causal_gain(&mut g, &ls, 1.0), v: gauss_vec(&mut g, ls.dims.m, 1.0) };
            let cost = expected_cost(&pol, &ls, &mu, &sigma).unwrap();
            let regret = expected_regret(&pol, &ls, &mu, &sigma).unwrap();
            prop_assert!(((cost - regret) - base).abs() <= 1e-8 * cost.abs().max(1.0));
            prop_assert!(cost >= base - 1e-10 * cost.abs().max(1.0));
        }
    }

    #[test]
    fn best_causal_policy_dominates(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let n = ls.dims.n;
        let mu = gauss_vec(&mut g, n, 1.0);
        let sigma = psd(&mut g, n, 0.05);
        let pol = AffinePolicy { k: causal_gain(&mut g, &ls, 1.0), v: gauss_vec(&mut g, ls.dims.m, 1.0) };
        let res = evaluate(&pol, &ls, &mu, &sigma, &inner()).unwrap();
        prop_assert!(res.exante_regret >= -1e-8);
        let oracle = controller_opt_causal(&ls, &mu, &sigma, &inner()).unwrap();
        let own = evaluate(&oracle, &ls, &mu, &sigma, &inner()).unwrap();
        prop_assert!(own.exante_regret.abs() <= 1e-8 * own.expected_cost.max(1.0));
    }

    #[test]
    fn sdpa_round_trip_prices_feasible_points(
        seed: u64, (nx, nu, t) in dims(), r1 in prop::sample::select(vec![0.0, 0.7]),
        r2 in prop::sample::select(vec![0.0, 1.3]), p in sdp_order(), slack in 0.0f64..1.0,
    ) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let n = ls.dims.n;
        let amb = ambiguity(&mut g, n, r1, r2, p);
        let model = export_model(&ls, &amb).unwrap();
        let parsed = parse_sdpa(&model.to_sdpa()).unwrap();
        let k = causal_gain(&mut g, &ls, 1.0);
        let x = model.feasible_point(&k, &ls, &amb, slack).unwrap();
        let gamma_weight = match p {
            SchattenOrder::One => 1.0,
            _ => n as f64,
        };
        let expected = primal_value(&k, &amb, &ls).unwrap()
            + slack * (n as f64 + r1 + if r2 > 0.0 { r2 * gamma_weight } else { 0.0 });
        prop_assert!(rel(parsed.objective_at(&x), expected) <= 1e-9);
        let blocks = parsed.block_matrices(&x).unwrap();
        let direct = model.block_matrices(&x).unwrap();
        for (a, b) in blocks.iter().zip(&direct) {
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
            prop_assert!(linalg::min_eigenvalue(a) >= -1e-8 * (1.0 + a.norm()));
        }
        prop_assert_eq!(model.gain(&x, &ls).unwrap(), k);
    }

    #[test]
    fn sdp_gains_are_always_causal(seed: u64, (nx, nu, t) in dims(), p in sdp_order()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let amb = ambiguity(&mut g, ls.dims.n, 0.5, 1.0, p);
        let model = export_model(&ls, &amb).unwrap();
        let free = model.variables.iter().filter(|v| matches!(v, Variable::Gain { .. })).count();
        prop_assert_eq!(free, ls.mask.free_count());
        let x: Vec<f64> = gauss_vec(&mut g, model.var_count(), 1.0).iter().copied().collect();
        let k = model.gain(&x, &ls).unwrap();
        prop_assert!(ls.mask.check(&k).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dual_iterates_respect_weak_duality_and_the_cone(
        seed: u64, (nx, nu, t) in dims(), r1 in 0.0f64..2.0, r2 in 0.0f64..3.0, p in order(), accelerated: bool,
    ) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let amb = ambiguity(&mut g, ls.dims.n, r1, r2, p);
        let rep = solve(&ls, &amb, &small_solver(200, accelerated)).unwrap();
        let f_min = rep.records.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
        let g_max = rep.records.iter().map(|r| r.g).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(g_max <= f_min + 1e-8 * f_min.abs().max(1.0), "{g_max} > {f_min}");
        for pair in rep.records.windows(2) {
            prop_assert!(pair[1].relgap_best <= pair[0].relgap_best);
        }
        for r in &rep.records {
            prop_assert!(r.cone_margin >= -1e-9, "cone margin {}", r.cone_margin);
        }
        for (lam, _) in rep.history.as_ref().unwrap() {
            prop_assert!(linalg::min_eigenvalue(&(&lam.l2 - &amb.sigma_hat)) >= -1e-9);
        }
    }

    #[test]
    fn dual_supergradients_bound_the_dual(
        seed: u64, (nx, nu, t) in dims(), r2 in 0.1f64..3.0, p in order(), accelerated: bool,
    ) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let n = ls.dims.n;
        let amb = ambiguity(&mut g, n, 0.5, r2, p);
        let rep = solve(&ls, &amb, &small_solver(40, accelerated)).unwrap();
        let history = rep.history.unwrap();
        for ((lam, k), rec) in history.iter().zip(&rep.records) {
            let c = ls.regret_form(k);
            for _ in 0..3 {
                let other = DualIterate { l1: psd(&mut g, n, 0.0), l2: &amb.sigma_hat + psd(&mut g, n, 0.0) };
                let lhs = dual_value(&other, &ls, &inner()).unwrap();
                let rhs = rec.g
                    + linalg::trace_product(&c, &(&other.l1 - &lam.l1))
                    + linalg::trace_product(&c, &(&other.l2 - &lam.l2));
                prop_assert!(lhs <= rhs + 1e-8 * rhs.abs().max(1.0), "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn dual_gradient_matches_finite_differences(seed: u64, (nx, nu, t) in dims()) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let n = ls.dims.n;
        let lam = DualIterate { l1: psd(&mut g, n, 0.1), l2: psd(&mut g, n, 0.1) };
        let err = gradient_error(&ls, &lam, &mut g);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn solves_are_deterministic(seed: u64, (nx, nu, t) in dims(), r2 in 0.0f64..3.0, p in order(), accelerated: bool) {
        let mut g = rng(seed);
        let (_, ls) = lifted(&mut g, nx, nu, t);
        let amb = ambiguity(&mut g, ls.dims.n, 0.3, r2, p);
        let a = solve(&ls, &amb, &small_solver(100, accelerated)).unwrap();
        let b = solve(&ls, &amb, &small_solver(100, accelerated)).unwrap();
        prop_assert_eq!(&a.k_best, &b.k_best);
        prop_assert_eq!(a.f_best.to_bits(), b.f_best.to_bits());
        prop_assert_eq!(a.g_best.to_bits(), b.g_best.to_bits());
        prop_assert_eq!(a.termination, b.termination);
        prop_assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            let strip = |r: &drrlq::dual_solver::IterationRecord| (r.iteration, r.f.to_bits(), r.g.to_bits(), r.eta.to_bits(), r.cone_margin.to_bits());
            prop_assert_eq!(strip(x), strip(y));
        }
    }
}

/// Minimizer of `vec(K − K°)ᵀ (M ⊗ D) vec(K − K°)` over the free entries,
/// from the explicitly assembled normal equations.
fn dense_inner(ls: &LiftedSystem, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = (ls.dims.m, ls.dims.n);
    let h = m.kronecker(&ls.d);
    let free: Vec<usize> = ls.mask.free_indices().map(|(r, c)| c * rows + r).collect();
    let target = h.clone() * DVector::from_column_slice(ls.k_nc.as_slice());
    let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
    let rhs = DVector::from_fn(free.len(), |a, _| target[free[a]]);
    let sol = hff.lu().solve(&rhs).unwrap();
    let mut k = DMatrix::zeros(rows, cols);
    for (a, &idx) in free.iter().enumerate() {
        k[(idx % rows, idx / rows)] = sol[a];
    }
    k
}
