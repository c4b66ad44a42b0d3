#![allow(dead_code)]

use drrlq::ambiguity::AmbiguitySet;
use drrlq::dual_solver::dual_value;
use drrlq::inner_qp::{solve_inner, InnerOptions, InnerProblem};
use drrlq::lifting::{build_lifted, LiftedSystem, LtvSystem};
use drrlq::linalg::{self, SchattenOrder};
use drrlq::projections::{DualIterate, SchattenBall};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ORDERS: [SchattenOrder; 3] = [SchattenOrder::One, SchattenOrder::Two, SchattenOrder::Inf];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let g = gauss(rng, n, n, scale);
    (&g + g.transpose()) * 0.5
}

/// `HHᵀ / n + floor · I`.
pub fn psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let h = gauss(rng, n, n, 1.0);
    let mut m = &h * h.transpose() / n.max(1) as f64 + DMatrix::identity(n, n) * floor;
    m = (&m + m.transpose()) * 0.5;
    m
}

/// Orthogonal factor of a Gaussian matrix.
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gauss(rng, n, n, 1.0).qr().q()
}

/// Random time-varying plant with dense PSD state weight and PD input weight.
pub fn plant(rng: &mut ChaCha8Rng, nx: usize, nu: usize, horizon: usize) -> LtvSystem {
    let a = (0..horizon).map(|_| gauss(rng, nx, nx, 0.5)).collect();
    let b = (0..horizon).map(|_| gauss(rng, nx, nu, 1.0)).collect();
    let n = nx * (horizon + 1);
    let m = nu * horizon;
    let q = psd(rng, n, 0.0);
    let r = psd(rng, m, 0.5);
    LtvSystem::new(a, b, q, r).unwrap()
}

pub fn lifted(rng: &mut ChaCha8Rng, nx: usize, nu: usize, horizon: usize) -> (LtvSystem, LiftedSystem) {
    let sys = plant(rng, nx, nu, horizon);
    let ls = build_lifted(&sys).unwrap();
    (sys, ls)
}

/// Gaussian gain restricted to the causal pattern.
pub fn causal_gain(rng: &mut ChaCha8Rng, ls: &LiftedSystem, scale: f64) -> DMatrix<f64> {
    let k = gauss(rng, ls.dims.m, ls.dims.n, scale);
    ls.mask.masked(&k)
}

pub fn ambiguity(rng: &mut ChaCha8Rng, n: usize, r1: f64, r2: f64, p: SchattenOrder) -> AmbiguitySet {
    let mu = gauss_vec(rng, n, 1.0);
    let sigma = psd(rng, n, 0.05);
    AmbiguitySet::new(mu, sigma, r1, r2, p).unwrap()
}

/// Relative difference with a unit floor on the scale.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central differences of `g` along five random PSD directions against the
/// inner minimizer's regret form. Returns the worst relative error.
pub fn gradient_error(ls: &LiftedSystem, lam: &DualIterate, g: &mut ChaCha8Rng) -> f64 {
    let n = ls.dims.n;
    let opts = InnerOptions { tol: 1e-13, ..InnerOptions::default() };
    let m = lam.weight();
    let k = solve_inner(&InnerProblem { weight: &m, ls }, &opts, None).unwrap().k;
    let c = ls.regret_form(&k);
    let h = 1e-5 * (lam.l1.norm_squared() + lam.l2.norm_squared()).sqrt();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let e1 = psd(g, n, 0.0);
        let e2 = psd(g, n, 0.0);
        let shifted = |s: f64| DualIterate { l1: &lam.l1 + &e1 * s, l2: &lam.l2 + &e2 * s };
        let fd = (dual_value(&shifted(h), ls, &opts).unwrap() - dual_value(&shifted(-h), ls, &opts).unwrap()) / (2.0 * h);
        let exact = linalg::trace_product(&c, &e1) + linalg::trace_product(&c, &e2);
        worst = worst.max((fd - exact).abs() / exact.abs());
    }
    worst
}

/// Uniform-ish draw from a Schatten ball: random direction, random fraction of the radius.
pub fn ball_point(g: &mut ChaCha8Rng, ball: &SchattenBall) -> DMatrix<f64> {
    let n = ball.center.nrows();
    let d = sym(g, n, 1.0);
    let norm = linalg::schatten_norm_sym(&d, ball.p);
    let frac: f64 = g.random_range(0.0..=1.0);
    if norm == 0.0 {
        return ball.center.clone();
    }
    &ball.center + d * (frac * ball.radius / norm)
}

/// A feasible `(μ, Σ)`: mean anywhere in the ball, covariance in the
/// Schatten ball, pulled halfway toward `Σ̂` until PSD.
pub fn feasible_moments(g: &mut ChaCha8Rng, amb: &AmbiguitySet) -> (DVector<f64>, DMatrix<f64>) {
    let n = amb.dim();
    let dir = gauss_vec(g, n, 1.0);
    let len: f64 = g.random_range(0.0..=1.0);
    let mu = &amb.mu_hat + dir.normalize() * (len.sqrt() * amb.r1.sqrt());
    let ball = SchattenBall::new(amb.sigma_hat.clone(), amb.r2, amb.p).unwrap();
    let mut sigma = ball_point(g, &ball);
    for _ in 0..60 {
        if linalg::min_eigenvalue(&sigma) >= 0.0 {
            return (mu, sigma);
        }
        sigma = (&sigma + &amb.sigma_hat) * 0.5;
    }
    (mu, amb.sigma_hat.clone())
}
