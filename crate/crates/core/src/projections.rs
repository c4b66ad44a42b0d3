//! Euclidean projections onto ℓp balls and Schatten p-norm balls of
//! symmetric matrices, and the product-set projection used by the dual
//! ascent.
//!
//! Schatten balls are handled through unitary invariance: the projection of
//! a symmetric `X = U diag(λ) Uᵀ` is `U diag(Π(λ)) Uᵀ`. Only the eigen-directions
//! whose eigenvalue actually moves are touched, so feasible inputs come back
//! bit-for-bit unchanged.

use nalgebra::DMatrix;

use crate::ambiguity::AmbiguitySet;
use crate::error::{Error, Result};
use crate::linalg::{self, SchattenOrder, SortedEigen};

/// Projection of `x` onto `{y : ‖y‖_p ≤ r}`.
pub fn project_lp_ball(x: &[f64], r: f64, p: SchattenOrder) -> Vec<f64> {
    if r <= 0.0 {
        return vec![0.0; x.len()];
    }
    match p {
        SchattenOrder::Inf => x.iter().map(|v| v.clamp(-r, r)).collect(),
        SchattenOrder::Two => {
            let norm = SchattenOrder::Two.vector_norm(x);
            if norm <= r {
                x.to_vec()
            } else {
                x.iter().map(|v| v * (r / norm)).collect()
            }
        }
        SchattenOrder::One => project_l1_ball(x, r),
    }
}

/// Sort-based soft threshold: finds `θ` with `Σ max(|xᵢ| − θ, 0) = r`.
fn project_l1_ball(x: &[f64], r: f64) -> Vec<f64> {
    if SchattenOrder::One.vector_norm(x) <= r {
        return x.to_vec();
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - r) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    x.iter()
        .map(|&v| v.signum() * (v.abs() - theta).max(0.0))
        .collect()
}

/// Schatten p-norm ball `{X ∈ 𝕊ⁿ : ‖X − center‖_p ≤ radius}`.
#[derive(Debug, Clone)]
pub struct SchattenBall {
    pub center: DMatrix<f64>,
    pub radius: f64,
    pub p: SchattenOrder,
}

impl SchattenBall {
    pub fn new(center: DMatrix<f64>, radius: f64, p: SchattenOrder) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "radius",
                reason: format!("must be nonnegative, got {radius}"),
            });
        }
        let asym = linalg::max_asymmetry(&center);
        if asym > 1e-10 * (1.0 + center.amax()) {
            return Err(Error::NotSymmetric { what: "ball center", asym });
        }
        Ok(SchattenBall {
            center: linalg::symmetrized(&center),
            radius,
            p,
        })
    }

    pub fn origin(n: usize, radius: f64, p: SchattenOrder) -> Result<Self> {
        SchattenBall::new(DMatrix::zeros(n, n), radius, p)
    }

    pub fn contains(&self, x: &DMatrix<f64>, tol: f64) -> bool {
        linalg::schatten_norm_sym(&(x - &self.center), self.p) <= self.radius + tol
    }
}

/// Projection of a matrix onto a centered Schatten ball, with the eigenvalues
/// of the (shifted) input that came out of the decomposition.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    pub matrix: DMatrix<f64>,
    /// Eigenvalues of the projected matrix relative to the center, descending.
    pub projected_spectrum: Vec<f64>,
    /// Eigenvalues of the shifted input, descending.
    pub input_spectrum: Vec<f64>,
}

/// Frobenius-nearest point of `ball` to the symmetric matrix `x`.
pub fn project_schatten(x: &DMatrix<f64>, ball: &SchattenBall) -> Result<DMatrix<f64>> {
    Ok(project_schatten_detailed(x, ball)?.matrix)
}

pub fn project_schatten_detailed(x: &DMatrix<f64>, ball: &SchattenBall) -> Result<SpectralProjection> {
    let n = x.nrows();
    if x.shape() != ball.center.shape() {
        return Err(Error::dim(
            "projection input",
            format!("{n}x{n}"),
            format!("{:?}", x.shape()),
        ));
    }
    let asym = linalg::max_asymmetry(x);
    if asym > 1e-8 * (1.0 + x.amax()) {
        log::warn!("symmetrizing projection input with asymmetry {asym:e}");
    }
    let sym = linalg::symmetrized(x);
    let shifted = &sym - &ball.center;
    if ball.radius == 0.0 {
        let eig = SortedEigen::new(&shifted)?;
        return Ok(SpectralProjection {
            matrix: ball.center.clone(),
            projected_spectrum: vec![0.0; n],
            input_spectrum: eig.values,
        });
    }
    let eig = SortedEigen::new(&shifted)?;
    let projected = project_lp_ball(&eig.values, ball.radius, ball.p);
    let moved: Vec<usize> = (0..n).filter(|&i| projected[i] != eig.values[i]).collect();
    if moved.is_empty() {
        return Ok(SpectralProjection {
            matrix: sym,
            projected_spectrum: projected,
            input_spectrum: eig.values,
        });
    }
    // X − Σ_{moved} (λᵢ − Π(λ)ᵢ) uᵢuᵢᵀ
    let mut scaled = DMatrix::zeros(n, moved.len());
    let mut basis = DMatrix::zeros(n, moved.len());
    for (j, &i) in moved.iter().enumerate() {
        let u = eig.vectors.column(i);
        basis.set_column(j, &u);
        scaled.set_column(j, &(u * (eig.values[i] - projected[i])));
    }
    let mut out = sym - scaled * basis.transpose();
    linalg::symmetrize_mut(&mut out);
    Ok(SpectralProjection {
        matrix: out,
        projected_spectrum: projected,
        input_spectrum: eig.values,
    })
}

/// Dual iterate `Λ = (Λ₁, Λ₂)` of symmetric PSD matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate {
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
}

impl DualIterate {
    /// Starting point `(0, Σ̂)`.
    pub fn initial(amb: &AmbiguitySet) -> Self {
        let n = amb.dim();
        DualIterate {
            l1: DMatrix::zeros(n, n),
            l2: amb.sigma_hat.clone(),
        }
    }

    /// `Λ₁ + Λ₂`, the weight of the inner problem.
    pub fn weight(&self) -> DMatrix<f64> {
        &self.l1 + &self.l2
    }

    /// Frobenius norm of the stacked pair difference.
    pub fn distance(&self, other: &DualIterate) -> f64 {
        ((&self.l1 - &other.l1).norm_squared() + (&self.l2 - &other.l2).norm_squared()).sqrt()
    }
}

/// Result of a product-set projection.
#[derive(Debug, Clone)]
pub struct PairProjection {
    pub iterate: DualIterate,
    /// Smallest eigenvalue of `Λ₂ − Σ̂` after the update (from the projected spectrum).
    pub cone_margin: f64,
}

/// Projection of `(Λ₁ + step₁, Λ₂ + step₂)` onto
/// `{Σ ⪰ 0 : ‖Σ‖₁ ≤ r1} × {Σ ⪰ 0 : ‖Σ − Σ̂‖_p ≤ r2}`.
///
/// Valid when `Λ₁ ⪰ 0`, `Λ₂ ⪰ Σ̂` and both steps are PSD: the PSD constraint is
/// then inactive and each component reduces to a plain Schatten-ball
/// projection. A sum `Λ₂ + step₂ − Σ̂` with a clearly negative eigenvalue is
/// rejected as a caller bug.
pub fn project_dual_pair(
    lam: &DualIterate,
    step1: &DMatrix<f64>,
    step2: &DMatrix<f64>,
    amb: &AmbiguitySet,
) -> Result<PairProjection> {
    let n = amb.dim();
    let l1 = if amb.r1 == 0.0 {
        DMatrix::zeros(n, n)
    } else {
        let ball = SchattenBall {
            center: DMatrix::zeros(n, n),
            radius: amb.r1,
            p: SchattenOrder::One,
        };
        project_schatten(&(&lam.l1 + step1), &ball)?
    };

    let raw = &lam.l2 + step2 - &amb.sigma_hat;
    let ball = SchattenBall {
        center: DMatrix::zeros(n, n),
        radius: amb.r2,
        p: amb.p,
    };
    let proj = project_schatten_detailed(&raw, &ball)?;
    let input_min = proj.input_spectrum.last().copied().unwrap_or(0.0);
    let scale = 1.0 + proj.input_spectrum.first().map_or(0.0, |v| v.abs()) + amb.sigma_hat.amax();
    if input_min < -1e-9 * scale {
        return Err(Error::ConeInvariant { min_eig: input_min });
    }
    let cone_margin = proj
        .projected_spectrum
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v));
    let mut l2 = &amb.sigma_hat + proj.matrix;
    linalg::symmetrize_mut(&mut l2);
    Ok(PairProjection {
        iterate: DualIterate { l1, l2 },
        cone_margin: if n == 0 { 0.0 } else { cone_margin },
    })
}
