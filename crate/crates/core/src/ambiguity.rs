//! Mean/covariance ambiguity sets, disturbance models and the least-favorable
//! moments that attain the worst-case expected regret.
//!
//! Units at the boundary: `r1` bounds the *squared* Euclidean distance of the
//! mean, `‖μ − μ̂‖₂² ≤ r1`, while `r2` bounds the (unsquared) Schatten
//! p-norm distance of the covariance, `‖Σ − Σ̂‖_p ≤ r2`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, SchattenOrder, SortedEigen};

/// Identifier of the sampling pipeline, recorded in output metadata.
pub const RNG_ALGORITHM: &str = "rand_chacha::ChaCha8Rng (seed_from_u64) + rand_distr::StandardNormal (ziggurat)";

#[derive(Debug, Clone)]
pub struct AmbiguitySet {
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    /// Squared radius of the mean ball.
    pub r1: f64,
    /// Radius of the covariance ball in Schatten p-norm.
    pub r2: f64,
    pub p: SchattenOrder,
}

impl AmbiguitySet {
    pub fn new(
        mu_hat: DVector<f64>,
        sigma_hat: DMatrix<f64>,
        r1: f64,
        r2: f64,
        p: SchattenOrder,
    ) -> Result<Self> {
        let n = mu_hat.len();
        if sigma_hat.shape() != (n, n) {
            return Err(Error::dim("Sigma_hat", format!("{n}x{n}"), format!("{:?}", sigma_hat.shape())));
        }
        for (name, r) in [("r1", r1), ("r2", r2)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("radius must be finite and nonnegative, got {r}"),
                });
            }
        }
        let scale = 1.0 + sigma_hat.amax();
        let asym = linalg::max_asymmetry(&sigma_hat);
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric { what: "Sigma_hat", asym });
        }
        let sigma_hat = linalg::symmetrized(&sigma_hat);
        let min_eig = linalg::min_eigenvalue(&sigma_hat);
        if min_eig < -1e-10 * scale {
            return Err(Error::NotPsd { what: "Sigma_hat", min_eig });
        }
        Ok(AmbiguitySet { mu_hat, sigma_hat, r1, r2, p })
    }

    /// Zero nominal mean and no mean uncertainty.
    pub fn centered(sigma_hat: DMatrix<f64>, r2: f64, p: SchattenOrder) -> Result<Self> {
        let n = sigma_hat.nrows();
        AmbiguitySet::new(DVector::zeros(n), sigma_hat, 0.0, r2, p)
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn with_radii(&self, r1: f64, r2: f64) -> Result<Self> {
        AmbiguitySet::new(self.mu_hat.clone(), self.sigma_hat.clone(), r1, r2, self.p)
    }
}

/// AR(1) disturbance process `w_t = ρ w_{t-1} + ε_{t-1}` with `w_{-1} = x_0 ~ N(0, I)`
/// and `ε ~ N(0, (1 - ρ²) I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel {
    pub rho: f64,
    pub nx: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn new(rho: f64, nx: usize, horizon: usize, seed: u64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::RhoOutOfRange(rho));
        }
        Ok(DisturbanceModel { rho, nx, horizon, seed })
    }

    pub fn dim(&self) -> usize {
        self.nx * (self.horizon + 1)
    }
}

/// Nominal moments from sample trajectories. With `center = false` the mean
/// is fixed at zero and the covariance is the second-moment matrix.
pub fn empirical_moments(samples: &[DVector<f64>], center: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let first = samples.first().ok_or(Error::EmptySamples)?;
    let n = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::dim("sample length", n, bad.len()));
    }
    let count = samples.len() as f64;
    let mu = if center {
        samples.iter().fold(DVector::zeros(n), |acc, s| acc + s) / count
    } else {
        DVector::zeros(n)
    };
    let mut sigma = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mu;
        sigma.ger(1.0, &d, &d, 1.0);
    }
    sigma /= count;
    linalg::symmetrize_mut(&mut sigma);
    Ok((mu, sigma))
}

/// Draws `count` stacked trajectories `(x_0, w_0, …, w_{T-1})`.
pub fn sample_ar1(model: &DisturbanceModel, count: usize) -> Result<Vec<DVector<f64>>> {
    if !(-1.0..=1.0).contains(&model.rho) {
        return Err(Error::RhoOutOfRange(model.rho));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    Ok((0..count).map(|_| draw_ar1(model, &mut rng)).collect())
}

/// One trajectory from `rng`.
pub fn draw_ar1<R: rand::Rng + ?Sized>(model: &DisturbanceModel, rng: &mut R) -> DVector<f64> {
    let nx = model.nx;
    let innovation_sd = (1.0 - model.rho * model.rho).max(0.0).sqrt();
    let mut w = DVector::zeros(model.dim());
    for i in 0..nx {
        w[i] = StandardNormal.sample(rng);
    }
    for t in 1..=model.horizon {
        for i in 0..nx {
            let eps: f64 = StandardNormal.sample(rng);
            w[t * nx + i] = model.rho * w[(t - 1) * nx + i] + innovation_sd * eps;
        }
    }
    w
}

/// Mixes a master seed with stream indices (splitmix64 finalizer).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(master), |acc, &i| mix(acc ^ mix(i)))
}

/// Ground-truth moments of the AR(1) model: zero mean and block Toeplitz
/// covariance with blocks `ρ^{|s-t|} I`.
pub fn true_moments(model: &DisturbanceModel) -> (DVector<f64>, DMatrix<f64>) {
    let n = model.dim();
    let nx = model.nx;
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        if i % nx == j % nx {
            model.rho.powi((i / nx).abs_diff(j / nx) as i32)
        } else {
            0.0
        }
    });
    (DVector::zeros(n), sigma)
}

/// Least-favorable mean `μ̂ + √r1 ξ`, with `ξ` the sign-normalized leading
/// eigenvector of the regret form `ck`.
pub fn worst_case_mean(amb: &AmbiguitySet, ck: &DMatrix<f64>) -> Result<DVector<f64>> {
    if amb.r1 == 0.0 {
        return Ok(amb.mu_hat.clone());
    }
    let xi = SortedEigen::new(&linalg::symmetrized(ck))?.leading_vector();
    Ok(&amb.mu_hat + xi * amb.r1.sqrt())
}

/// Least-favorable covariance on the boundary of the Schatten ball.
///
/// * `p = ∞`: `Σ̂ + r2 I`
/// * `p = 2`: `Σ̂ + r2 C / ‖C‖_F` (or `Σ̂` when `C = 0`)
/// * `p = 1`: `Σ̂ + r2 ξξᵀ`
pub fn worst_case_covariance(amb: &AmbiguitySet, ck: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = amb.dim();
    let ck = linalg::symmetrized(ck);
    let shift = match amb.p {
        SchattenOrder::Inf => DMatrix::identity(n, n) * amb.r2,
        SchattenOrder::Two => {
            let norm = ck.norm();
            if norm == 0.0 {
                DMatrix::zeros(n, n)
            } else {
                &ck * (amb.r2 / norm)
            }
        }
        SchattenOrder::One => {
            let xi = SortedEigen::new(&ck)?.leading_vector();
            &xi * xi.transpose() * amb.r2
        }
    };
    Ok(linalg::symmetrized(&(&amb.sigma_hat + shift)))
}
