//! The structured inner problem
//!
//! ```text
//! minimize   tr(M (K − K°)ᵀ D (K − K°))   over causal K
//! ```
//!
//! which yields dual subgradients and every baseline controller.
//!
//! When `M ≻ 0` the problem is solved exactly: with `D = LᵀL` (`L` lower
//! triangular) and `M = N Nᵀ` (Cholesky), the map `K ↦ L K N` is a bijection
//! of the causal pattern onto itself, so the objective becomes
//! `‖L K N − L K° N‖²_F` and the minimizer is the causal truncation of
//! `L K° N` mapped back. Singular or badly conditioned weights fall back to
//! Jacobi-preconditioned conjugate gradient on the free entries of the
//! stationarity system `mask ∘ (D (K − K°) M) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lifting::{AffinePolicy, CausalMask, LiftedSystem};
use crate::linalg;

/// Weight `M` paired with the plant it applies to.
#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    pub weight: &'a DMatrix<f64>,
    pub ls: &'a LiftedSystem,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Relative stationarity tolerance, measured against `‖D K° M‖_F`.
    pub tol: f64,
    /// CG iteration cap; `None` means `2 · free entries + 100`.
    pub max_cg_iters: Option<usize>,
    /// Skip the factorized path when `min diag(N)² / max diag(N)²` drops below this.
    pub min_pivot_ratio: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            tol: 1e-10,
            max_cg_iters: None,
            min_pivot_ratio: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMethod {
    Factorized,
    ConjugateGradient,
    /// Factorized solve followed by CG refinement.
    Refined,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub k: DMatrix<f64>,
    /// `tr(M C(K))`, nonnegative up to round-off.
    pub value: f64,
    /// `‖mask ∘ (D (K − K°) M)‖_F / ‖D K° M‖_F` (0 when the scale vanishes).
    pub residual: f64,
    pub cg_iterations: usize,
    pub method: InnerMethod,
}

/// Solves the inner problem, optionally warm-starting CG from `warm`.
pub fn solve_inner(prob: &InnerProblem<'_>, opts: &InnerOptions, warm: Option<&DMatrix<f64>>) -> Result<InnerSolution> {
    let ls = prob.ls;
    let m = prob.weight;
    let n = ls.dims.n;
    if m.shape() != (n, n) {
        return Err(Error::dim("inner weight M", format!("{n}x{n}"), format!("{:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inner weight M"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "inner_tol",
            reason: "must be positive".into(),
        });
    }
    let scale = (&ls.d * &ls.k_nc * m).norm();

    let mut method = InnerMethod::ConjugateGradient;
    let mut start = None;
    if let Some(k) = factorized(ls, m, opts.min_pivot_ratio) {
        let residual = relative_residual(ls, m, &k, scale);
        if residual <= opts.tol {
            return Ok(finish(ls, m, k, residual, 0, InnerMethod::Factorized));
        }
        method = InnerMethod::Refined;
        start = Some(k);
    }
    let start = start.unwrap_or_else(|| match warm {
        Some(k) if k.shape() == ls.k_nc.shape() => ls.mask.masked(k),
        _ => ls.mask.masked(&ls.k_nc),
    });
    let (k, iters) = conjugate_gradient(ls, m, start, scale, opts)?;
    let residual = relative_residual(ls, m, &k, scale);
    Ok(finish(ls, m, k, residual, iters, method))
}

fn finish(ls: &LiftedSystem, m: &DMatrix<f64>, k: DMatrix<f64>, residual: f64, iters: usize, method: InnerMethod) -> InnerSolution {
    let value = linalg::trace_product(m, &ls.regret_form(&k));
    InnerSolution {
        k,
        value,
        residual,
        cg_iterations: iters,
        method,
    }
}

fn factorized(ls: &LiftedSystem, m: &DMatrix<f64>, min_pivot_ratio: f64) -> Option<DMatrix<f64>> {
    let n_factor = m.clone().cholesky()?.unpack();
    let diag = n_factor.diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    if !(hi > 0.0) || (lo / hi).powi(2) < min_pivot_ratio {
        return None;
    }
    let l = &ls.d_factor;
    let mut z = l * &ls.k_nc * &n_factor;
    ls.mask.apply(&mut z);
    let y = l.solve_lower_triangular(&z)?;
    // K N = Y  <=>  Nᵀ Kᵀ = Yᵀ
    let kt = n_factor.tr_solve_lower_triangular(&y.transpose())?;
    let mut k = kt.transpose();
    ls.mask.apply(&mut k);
    if k.iter().all(|v| v.is_finite()) {
        Some(k)
    } else {
        None
    }
}

/// `mask ∘ (D X M)`.
fn masked_operator(ls: &LiftedSystem, m: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = &ls.d * x * m;
    ls.mask.apply(&mut out);
    out
}

/// Stationarity residual of `K`, relative to `scale = ‖D K° M‖_F`.
pub fn relative_residual(ls: &LiftedSystem, m: &DMatrix<f64>, k: &DMatrix<f64>, scale: f64) -> f64 {
    let r = masked_operator(ls, m, &(k - &ls.k_nc)).norm();
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

fn conjugate_gradient(
    ls: &LiftedSystem,
    m: &DMatrix<f64>,
    start: DMatrix<f64>,
    scale: f64,
    opts: &InnerOptions,
) -> Result<(DMatrix<f64>, usize)> {
    let mask: &CausalMask = &ls.mask;
    let free = mask.free_count();
    let max_iters = opts.max_cg_iters.unwrap_or(2 * free + 100);
    let target = opts.tol * scale;

    // Jacobi preconditioner: the operator's diagonal is D_rr M_cc.
    let precond: Vec<f64> = mask
        .free_indices()
        .map(|(r, c)| {
            let d = ls.d[(r, r)] * m[(c, c)];
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let apply_op = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let mat = mask.scatter(x.as_slice())?;
        Ok(DVector::from_vec(mask.gather(&masked_operator(ls, m, &mat))))
    };

    let mut x = DVector::from_vec(mask.gather(&start));
    let b = DVector::from_vec(mask.gather(&masked_operator(ls, m, &ls.k_nc)));
    let mut r = &b - apply_op(&x)?;
    let mut res_norm = r.norm();
    if res_norm <= target {
        return Ok((mask.scatter(x.as_slice())?, 0));
    }
    let mut z = r.component_mul(&DVector::from_column_slice(&precond));
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for iter in 1..=max_iters {
        let ap = apply_op(&p)?;
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            // Direction in the operator's null space: the residual is already
            // as small as round-off allows.
            break;
        }
        let alpha = rz / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if iter % 50 == 0 {
            r = &b - apply_op(&x)?;
        }
        res_norm = r.norm();
        if res_norm <= target {
            return Ok((mask.scatter(x.as_slice())?, iter));
        }
        z = r.component_mul(&DVector::from_column_slice(&precond));
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + p * beta;
    }
    let k = mask.scatter(x.as_slice())?;
    let residual = relative_residual(ls, m, &k, scale);
    if residual <= opts.tol {
        return Ok((k, max_iters));
    }
    Err(Error::InnerSolveFailed {
        tol: opts.tol,
        iters: max_iters,
        residual,
    })
}

/// Minimizer of the nominal expected cost under `(μ̂, Σ̂)`.
pub fn controller_saa(ls: &LiftedSystem, mu_hat: &DVector<f64>, sigma_hat: &DMatrix<f64>, opts: &InnerOptions) -> Result<AffinePolicy> {
    let sol = solve_inner(&InnerProblem { weight: sigma_hat, ls }, opts, None)?;
    Ok(AffinePolicy::centered(sol.k, ls, mu_hat))
}

/// Best causal affine policy under the true moments `(μ, Σ)`.
pub fn controller_opt_causal(ls: &LiftedSystem, mu: &DVector<f64>, sigma: &DMatrix<f64>, opts: &InnerOptions) -> Result<AffinePolicy> {
    controller_saa(ls, mu, sigma, opts)
}
