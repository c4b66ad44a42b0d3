//! Closed-form and Monte Carlo performance of affine policies.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ambiguity::{derive_seed, draw_ar1, DisturbanceModel};
use crate::error::{Error, Result};
use crate::inner_qp::{controller_opt_causal, InnerOptions};
use crate::lifting::{rollout, AffinePolicy, LiftedSystem, LtvSystem};
use crate::linalg;

/// Trials per deterministic RNG stream in [`monte_carlo`].
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloStats {
    pub trials: usize,
    pub mean: f64,
    pub std_err: f64,
    pub p20: f64,
    pub median: f64,
    pub p80: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub expected_cost: f64,
    pub expected_regret: f64,
    /// Expected cost minus that of the best causal policy for the same moments.
    pub exante_regret: f64,
    /// `‖C(K)‖_∞`: worst regret over unit-norm disturbances.
    pub worst_case_regret: f64,
    /// Statistics of realized rollout costs, when sampled.
    pub monte_carlo: Option<MonteCarloStats>,
}

fn check_moments(ls: &LiftedSystem, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    let n = ls.dims.n;
    if mu.len() != n {
        return Err(Error::dim("mean", n, mu.len()));
    }
    if sigma.shape() != (n, n) {
        return Err(Error::dim("covariance", format!("{n}x{n}"), format!("{:?}", sigma.shape())));
    }
    Ok(())
}

/// `tr(Σ C(K)) + (Δμ + v)ᵀ D (Δμ + v)` with `Δ = K − K°`.
pub fn expected_regret(pol: &AffinePolicy, ls: &LiftedSystem, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_moments(ls, mu, sigma)?;
    let delta = &pol.k - &ls.k_nc;
    let bias = &delta * mu + &pol.v;
    Ok(linalg::trace_product(sigma, &ls.regret_form(&pol.k)) + bias.dot(&(&ls.d * &bias)))
}

/// Expected cost of the clairvoyant policy: `tr((Σ + μμᵀ) N)`.
pub fn noncausal_expected_cost(ls: &LiftedSystem, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_moments(ls, mu, sigma)?;
    Ok(linalg::trace_product(sigma, &ls.noncausal_cost) + mu.dot(&(&ls.noncausal_cost * mu)))
}

/// Expected cost = expected regret + clairvoyant expected cost.
pub fn expected_cost(pol: &AffinePolicy, ls: &LiftedSystem, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(expected_regret(pol, ls, mu, sigma)? + noncausal_expected_cost(ls, mu, sigma)?)
}

/// Top eigenvalue of `C(K)`; the feedforward is irrelevant.
pub fn worst_case_regret_ball(pol: &AffinePolicy, ls: &LiftedSystem) -> f64 {
    linalg::max_eigenvalue(&ls.regret_form(&pol.k)).max(0.0)
}

/// Closed-form evaluation under `(μ, Σ)`, with ex-ante regret measured
/// against the best causal policy for those moments.
pub fn evaluate(pol: &AffinePolicy, ls: &LiftedSystem, mu: &DVector<f64>, sigma: &DMatrix<f64>, inner: &InnerOptions) -> Result<EvalResult> {
    let oracle = controller_opt_causal(ls, mu, sigma, inner)?;
    evaluate_against(pol, ls, mu, sigma, &oracle)
}

/// As [`evaluate`] with a precomputed reference policy.
pub fn evaluate_against(
    pol: &AffinePolicy,
    ls: &LiftedSystem,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    oracle: &AffinePolicy,
) -> Result<EvalResult> {
    let regret = expected_regret(pol, ls, mu, sigma)?;
    let cost = regret + noncausal_expected_cost(ls, mu, sigma)?;
    let oracle_cost = expected_cost(oracle, ls, mu, sigma)?;
    Ok(EvalResult {
        expected_cost: cost,
        expected_regret: regret,
        exante_regret: cost - oracle_cost,
        worst_case_regret: worst_case_regret_ball(pol, ls),
        monte_carlo: None,
    })
}

/// Realized rollout costs for `trials` AR(1) draws. Trials are split into
/// fixed-size chunks with seeds derived from `(model.seed, chunk)`, so the
/// result does not depend on the thread count.
pub fn sample_costs(pol: &AffinePolicy, sys: &LtvSystem, model: &DisturbanceModel, trials: usize) -> Result<Vec<f64>> {
    let dims = sys.dims();
    if model.nx != dims.nx || model.horizon != dims.horizon {
        return Err(Error::dim(
            "disturbance model",
            format!("nx={}, T={}", dims.nx, dims.horizon),
            format!("nx={}, T={}", model.nx, model.horizon),
        ));
    }
    let chunks = trials.div_ceil(CHUNK);
    let per_chunk: Result<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let count = CHUNK.min(trials - chunk * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.seed, &[chunk as u64]));
            let mut costs = Vec::with_capacity(count);
            for _ in 0..count {
                let w = draw_ar1(model, &mut rng);
                costs.push(rollout(sys, pol, &w)?.cost);
            }
            Ok(costs)
        })
        .collect();
    Ok(per_chunk?.into_iter().flatten().collect())
}

/// Monte Carlo estimate of the expected cost together with the closed-form
/// metrics under the model's true moments.
pub fn monte_carlo(
    pol: &AffinePolicy,
    sys: &LtvSystem,
    ls: &LiftedSystem,
    model: &DisturbanceModel,
    trials: usize,
    inner: &InnerOptions,
) -> Result<EvalResult> {
    if trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "must be at least 1".into(),
        });
    }
    let costs = sample_costs(pol, sys, model, trials)?;
    let (mu, sigma) = crate::ambiguity::true_moments(model);
    let mut result = evaluate(pol, ls, &mu, &sigma, inner)?;
    result.monte_carlo = Some(summarize(&costs));
    Ok(result)
}

/// Mean, standard error and 20/50/80 percentiles of `values`.
pub fn summarize(values: &[f64]) -> MonteCarloStats {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let var = if n > 1 {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    MonteCarloStats {
        trials: n,
        mean,
        std_err: (var / n as f64).sqrt(),
        p20: percentile(&sorted, 0.2),
        median: percentile(&sorted, 0.5),
        p80: percentile(&sorted, 0.8),
    }
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}
