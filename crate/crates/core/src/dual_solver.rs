//! Dual projected subgradient method for the regularized regret problem
//!
//! ```text
//! f(K) = tr(Σ̂ C(K)) + r1 ‖C(K)‖_∞ + r2 ‖C(K)‖_q,   C(K) = (K − K°)ᵀ D (K − K°)
//! ```
//!
//! The dual function `g(Λ) = min_K tr((Λ₁ + Λ₂) C(K))` is maximized over
//! `{‖Λ₁‖₁ ≤ r1} × {‖Λ₂ − Σ̂‖_p ≤ r2}` (both PSD) by projected ascent along
//! the subgradient `(C(K*), C(K*))`, with either plain steps or an
//! accelerated variant. Weak duality `g ≤ f` certifies the
//! returned gain through the relative gap `(f_best − g_best) / g_best`.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::ambiguity::AmbiguitySet;
use crate::error::{Error, Result};
use crate::inner_qp::{solve_inner, InnerOptions, InnerProblem};
use crate::lifting::{AffinePolicy, LiftedSystem};
use crate::linalg::{self, SchattenOrder};
use crate::projections::{project_dual_pair, DualIterate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Constant(f64),
    /// `η₀ / √(i + 1)`; `None` picks `η₀ = 1 / ‖C(K⁰)‖_F`.
    Diminishing(Option<f64>),
    /// Barzilai–Borwein style inverse local Lipschitz estimate, truncated at `max`.
    Adaptive { max: f64 },
    /// Accelerated projected gradient ascent on the dual with backtracking
    /// on the Lipschitz estimate (starting from `1 / initial`) and restart
    /// whenever the dual value drops. Gradients are only taken at convex
    /// combinations of feasible points.
    Accelerated { initial: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Adaptive { max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub step_rule: StepRule,
    pub tol_relgap: f64,
    pub max_iters: usize,
    pub inner: InnerOptions,
    /// Keep every `(Λⁱ, Kⁱ)`; `None` keeps them only for horizons up to 100.
    pub record_history: Option<bool>,
    pub time_limit: Option<Duration>,
    /// Also score the step-weighted running average of the inner minimizers
    /// as a primal candidate.
    pub primal_averaging: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_rule: StepRule::default(),
            tol_relgap: 1e-3,
            max_iters: 5000,
            inner: InnerOptions::default(),
            record_history: None,
            time_limit: None,
            primal_averaging: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative gap at or below tolerance.
    Tolerance,
    /// Dual value nonpositive; absolute gap `f − g ≤ tol · max(1, f)` fired instead.
    AbsoluteGap,
    MaxIters,
    TimeLimit,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::AbsoluteGap => "absolute_gap",
            Termination::MaxIters => "max_iters",
            Termination::TimeLimit => "time_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub f: f64,
    pub g: f64,
    pub f_best: f64,
    pub g_best: f64,
    /// Best relative gap so far (`+∞` while `g_best ≤ 0`).
    pub relgap_best: f64,
    /// Step taken after this iteration (0 on the final one).
    pub eta: f64,
    pub cg_iterations: usize,
    /// Smallest eigenvalue of `Λ₂ⁱ − Σ̂`.
    pub cone_margin: f64,
    pub millis: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub k_best: DMatrix<f64>,
    pub lambda_best: DualIterate,
    pub f_best: f64,
    pub g_best: f64,
    pub relgap_best: f64,
    pub termination: Termination,
    pub records: Vec<IterationRecord>,
    /// `(Λⁱ, Kⁱ)` per iteration when history recording is on.
    pub history: Option<Vec<(DualIterate, DMatrix<f64>)>>,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Optimal affine policy: feedback on `w − μ̂` plus clairvoyant feedforward on `μ̂`.
    pub fn policy(&self, ls: &LiftedSystem, amb: &AmbiguitySet) -> AffinePolicy {
        AffinePolicy::centered(self.k_best.clone(), ls, &amb.mu_hat)
    }
}

/// The three terms of the primal objective at a given regret form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalTerms {
    pub nominal: f64,
    pub spectral: f64,
    pub dual_norm: f64,
    pub value: f64,
}

/// Evaluates `tr(Σ̂C) + r1‖C‖_∞ + r2‖C‖_q` from the regret form `c`.
pub fn primal_terms(c: &DMatrix<f64>, amb: &AmbiguitySet) -> PrimalTerms {
    let nominal = linalg::trace_product(&amb.sigma_hat, c);
    let q = amb.p.dual();
    let need_spectrum = amb.r1 > 0.0 || (amb.r2 > 0.0 && q == SchattenOrder::Inf);
    let top = if need_spectrum { linalg::max_eigenvalue(c).max(0.0) } else { 0.0 };
    let spectral = if amb.r1 > 0.0 { top } else { 0.0 };
    let dual_norm = if amb.r2 > 0.0 {
        match q {
            SchattenOrder::Inf => top,
            SchattenOrder::Two => c.norm(),
            SchattenOrder::One => c.trace().max(0.0),
        }
    } else {
        0.0
    };
    PrimalTerms {
        nominal,
        spectral,
        dual_norm,
        value: nominal + amb.r1 * spectral + amb.r2 * dual_norm,
    }
}

/// Primal objective `f(K)` for a causal gain.
pub fn primal_value(k: &DMatrix<f64>, amb: &AmbiguitySet, ls: &LiftedSystem) -> Result<f64> {
    ls.mask.check(k)?;
    Ok(primal_terms(&ls.regret_form(k), amb).value)
}

/// Dual objective `g(Λ)`.
pub fn dual_value(lam: &DualIterate, ls: &LiftedSystem, inner: &InnerOptions) -> Result<f64> {
    let m = lam.weight();
    Ok(solve_inner(&InnerProblem { weight: &m, ls }, inner, None)?.value)
}

/// `min(cap, √2‖Λⁱ − Λⁱ⁻¹‖ / ‖∇gⁱ − ∇gⁱ⁻¹‖)` given the two stacked-pair
/// differences; a vanishing gradient change saturates at `cap`.
pub fn adaptive_step(lambda_change: f64, gradient_change: f64, cap: f64) -> f64 {
    if gradient_change > 0.0 {
        (std::f64::consts::SQRT_2 * lambda_change / gradient_change).min(cap)
    } else {
        cap
    }
}

/// Runs the dual projected subgradient method from `Λ⁰ = (0, Σ̂)`.
pub fn solve(ls: &LiftedSystem, amb: &AmbiguitySet, cfg: &SolverConfig) -> Result<SolveReport> {
    let n = ls.dims.n;
    if amb.dim() != n {
        return Err(Error::dim("ambiguity set dimension", n, amb.dim()));
    }
    if !(cfg.tol_relgap > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol_relgap",
            reason: "must be positive".into(),
        });
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iters",
            reason: "must be at least 1".into(),
        });
    }
    match cfg.step_rule {
        StepRule::Constant(eta) | StepRule::Diminishing(Some(eta)) if !(eta > 0.0) => {
            return Err(Error::InvalidParameter {
                name: "step_rule",
                reason: format!("step size must be positive, got {eta}"),
            })
        }
        StepRule::Adaptive { max } if !(max > 0.0) => {
            return Err(Error::InvalidParameter {
                name: "step_rule",
                reason: format!("adaptive cap must be positive, got {max}"),
            })
        }
        StepRule::Accelerated { initial } if !(initial > 0.0) => {
            return Err(Error::InvalidParameter {
                name: "step_rule",
                reason: format!("initial step must be positive, got {initial}"),
            })
        }
        _ => {}
    }

    let started = Instant::now();
    let keep_history = cfg.record_history.unwrap_or(ls.dims.horizon <= 100);
    let mut history = keep_history.then(Vec::new);
    let mut records = Vec::new();

    let mut lam = DualIterate::initial(amb);
    let mut weight = lam.weight();
    let mut inner = solve_inner(&InnerProblem { weight: &weight, ls }, &cfg.inner, None)?;
    let mut cone_margin = 0.0;

    let mut f_best = f64::INFINITY;
    let mut g_best = f64::NEG_INFINITY;
    let mut k_best = inner.k.clone();
    let mut lambda_best = lam.clone();
    let mut prev: Option<(DualIterate, DMatrix<f64>)> = None;
    let mut eta0 = None;
    let mut k_avg: Option<(DMatrix<f64>, f64)> = None;
    let mut accel = match cfg.step_rule {
        StepRule::Accelerated { initial } => Some(Momentum {
            x: lam.clone(),
            z: lam.clone(),
            gx: inner.value,
            theta: 1.0,
            lipschitz: 1.0 / initial,
        }),
        _ => None,
    };

    let mut i = 0;
    let termination = loop {
        let c = ls.regret_form(&inner.k);
        let f = primal_terms(&c, amb).value;
        let g = linalg::trace_product(&weight, &c);
        if !f.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite("objective values"));
        }
        if f < f_best {
            f_best = f;
            k_best = inner.k.clone();
        }
        if let Some((avg, _)) = k_avg.as_ref().filter(|_| i > 0) {
            let fa = primal_terms(&ls.regret_form(avg), amb).value;
            if fa < f_best {
                f_best = fa;
                k_best = avg.clone();
            }
        }
        if g > g_best {
            g_best = g;
            lambda_best = lam.clone();
        }
        let (relgap, converged) = if g_best > 0.0 {
            let gap = (f_best - g_best) / g_best;
            (gap, (gap <= cfg.tol_relgap).then_some(Termination::Tolerance))
        } else {
            let fired = f_best - g_best <= cfg.tol_relgap * f_best.max(1.0);
            (f64::INFINITY, fired.then_some(Termination::AbsoluteGap))
        };
        let mut record = IterationRecord {
            iteration: i,
            f,
            g,
            f_best,
            g_best,
            relgap_best: relgap,
            eta: 0.0,
            cg_iterations: inner.cg_iterations,
            cone_margin,
            millis: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(h) = history.as_mut() {
            h.push((lam.clone(), inner.k.clone()));
        }

        let stop = converged
            .or_else(|| (i + 1 >= cfg.max_iters).then_some(Termination::MaxIters))
            .or_else(|| {
                cfg.time_limit
                    .filter(|&limit| started.elapsed() >= limit)
                    .map(|_| Termination::TimeLimit)
            });
        if let Some(reason) = stop {
            records.push(record);
            break reason;
        }

        let eta = match cfg.step_rule {
            StepRule::Constant(eta) => eta,
            StepRule::Diminishing(given) => {
                let base = *eta0.get_or_insert_with(|| {
                    given.unwrap_or_else(|| {
                        let norm = c.norm();
                        if norm > 0.0 {
                            1.0 / norm
                        } else {
                            1.0
                        }
                    })
                });
                base / ((i + 1) as f64).sqrt()
            }
            StepRule::Accelerated { .. } => {
                accel.as_ref().expect("momentum state").step(&c, amb)
            }
            StepRule::Adaptive { max } => match &prev {
                None => 1.0f64.min(max),
                Some((prev_lam, prev_c)) => {
                    let lambda_change = lam.distance(prev_lam);
                    let gradient_change = std::f64::consts::SQRT_2 * (&c - prev_c).norm();
                    adaptive_step(lambda_change, gradient_change, max)
                }
            },
        };
        record.eta = eta;
        records.push(record);
        if cfg.primal_averaging {
            let (avg, total) = k_avg.get_or_insert_with(|| (DMatrix::zeros(inner.k.nrows(), inner.k.ncols()), 0.0));
            *total += eta;
            *avg += (&inner.k - &*avg) * (eta / *total);
        }

        if let Some(state) = accel.as_mut() {
            let (x_next, g_next, k_next) = state.advance(&lam, g, &c, ls, amb, &cfg.inner)?;
            let f_next = primal_terms(&ls.regret_form(&k_next), amb).value;
            if f_next < f_best {
                f_best = f_next;
                k_best = k_next;
            }
            if g_next > g_best {
                g_best = g_next;
                lambda_best = x_next;
            }
            lam = state.query_point();
            cone_margin = linalg::min_eigenvalue(&(&lam.l2 - &amb.sigma_hat));
        } else {
            let step = &c * eta;
            let projected = project_dual_pair(&lam, &step, &step, amb)?;
            cone_margin = projected.cone_margin;
            prev = Some((std::mem::replace(&mut lam, projected.iterate), c));
        }
        weight = lam.weight();
        inner = solve_inner(&InnerProblem { weight: &weight, ls }, &cfg.inner, Some(&inner.k))?;
        i += 1;
    };

    let relgap_best = records.last().map_or(f64::INFINITY, |r| r.relgap_best);
    Ok(SolveReport {
        k_best,
        lambda_best,
        f_best,
        g_best,
        relgap_best,
        termination,
        records,
        history,
        wall_time: started.elapsed(),
    })
}

/// State of the accelerated scheme: `x` carries the dual values, `z` the
/// aggregated gradient steps, and iterations query `(1 − θ) x + θ z`.
struct Momentum {
    x: DualIterate,
    z: DualIterate,
    gx: f64,
    theta: f64,
    lipschitz: f64,
}

const MAX_BACKTRACKS: usize = 60;

fn blend(a: &DualIterate, b: &DualIterate, t: f64) -> DualIterate {
    DualIterate {
        l1: &a.l1 * (1.0 - t) + &b.l1 * t,
        l2: &a.l2 * (1.0 - t) + &b.l2 * t,
    }
}

impl Momentum {
    /// `1 / (θL)`, limited so the stacked step is at most ten diameters of
    /// the feasible set (longer steps only project back to the boundary).
    fn step(&self, c: &DMatrix<f64>, amb: &AmbiguitySet) -> f64 {
        let n = amb.dim() as f64;
        let r2_frob = match amb.p {
            SchattenOrder::Inf => amb.r2 * n.sqrt(),
            _ => amb.r2,
        };
        let diameter = 2.0 * amb.r1.hypot(r2_frob);
        let grad = std::f64::consts::SQRT_2 * c.norm();
        let step = 1.0 / (self.theta * self.lipschitz);
        if grad > 0.0 {
            step.min(10.0 * diameter / grad)
        } else {
            step
        }
    }

    fn query_point(&self) -> DualIterate {
        blend(&self.x, &self.z, self.theta)
    }

    /// One accelerated step from the query point `y` with value `gy` and
    /// gradient `(c, c)`. Returns the trial point with its value and inner
    /// minimizer; both are valid candidates even when a restart rejects it.
    fn advance(
        &mut self,
        y: &DualIterate,
        gy: f64,
        c: &DMatrix<f64>,
        ls: &LiftedSystem,
        amb: &AmbiguitySet,
        inner: &InnerOptions,
    ) -> Result<(DualIterate, f64, DMatrix<f64>)> {
        let mut tries = 0;
        let (x_next, z_next, g_next, k_next) = loop {
            let eta = self.step(c, amb);
            let step = c * eta;
            let z_next = project_dual_pair(&self.z, &step, &step, amb)?.iterate;
            let x_next = blend(&self.x, &z_next, self.theta);
            let weight = x_next.weight();
            let sol = solve_inner(&InnerProblem { weight: &weight, ls }, inner, None)?;
            let d1 = &x_next.l1 - &y.l1;
            let d2 = &x_next.l2 - &y.l2;
            let model = gy + linalg::trace_product(c, &d1) + linalg::trace_product(c, &d2)
                - 0.5 * self.lipschitz * (d1.norm_squared() + d2.norm_squared());
            tries += 1;
            if sol.value >= model - 1e-12 * gy.abs().max(1.0) || tries >= MAX_BACKTRACKS {
                break (x_next, z_next, sol.value, sol.k);
            }
            self.lipschitz = 2.0 / (self.theta * eta);
        };
        self.lipschitz *= 0.9;
        if g_next < self.gx {
            self.z = self.x.clone();
            self.theta = 1.0;
            return Ok((x_next, g_next, k_next));
        }
        let t2 = self.theta * self.theta;
        self.theta = ((t2 * t2 + 4.0 * t2).sqrt() - t2) / 2.0;
        self.x = x_next.clone();
        self.z = z_next;
        self.gx = g_next;
        Ok((x_next, g_next, k_next))
    }
}
