//! TOML experiment configuration.
//!
//! ```toml
//! version = 1
//! trials = 20
//!
//! [system]
//! preset = "double_integrator"
//! horizon = 10
//!
//! [disturbance]
//! rho = [0.0, 0.5]
//! seed = 7
//!
//! [ambiguity]
//! p = ["1", "2", "inf"]
//! r2 = 10.0
//! r_grid = { min = 1e-4, max = 1e4, count = 9 }
//! ```
//!
//! Every field is documented in `docs/formats.md`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::inner_qp::InnerOptions;
use crate::io;
use crate::lifting::LtvSystem;
use crate::linalg::SchattenOrder;
use crate::dual_solver::{SolverConfig, StepRule};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Inline(Vec<Vec<f64>>),
    File { file: PathBuf },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub preset: Option<String>,
    pub horizon: Option<usize>,
    pub a: Option<MatrixSpec>,
    pub b: Option<MatrixSpec>,
    pub a_seq: Option<Vec<MatrixSpec>>,
    pub b_seq: Option<Vec<MatrixSpec>>,
    /// Stage state cost, applied to `x_0 … x_T`.
    pub q: Option<MatrixSpec>,
    /// Stage input cost.
    pub r: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Training trajectories per trial; defaults to `n + 1`.
    pub samples: Option<usize>,
    /// Subtract the sample mean (otherwise `μ̂ = 0` and `Σ̂` is the second moment).
    #[serde(default)]
    pub center: bool,
    /// Use these trajectories instead of drawing from the AR(1) model.
    pub sample_file: Option<PathBuf>,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec {
            rho: default_rho(),
            seed: 0,
            samples: None,
            center: false,
            sample_file: None,
        }
    }
}

fn default_rho() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguitySpec {
    #[serde(default = "default_orders")]
    pub p: Vec<SchattenOrder>,
    #[serde(default)]
    pub r1: f64,
    /// Covariance radius for single solves; defaults to the horizon.
    pub r2: Option<f64>,
    /// Log-spaced benchmark radii.
    pub r_grid: Option<RadiusGrid>,
    /// Explicit benchmark radii (overrides `r_grid`).
    pub r_list: Option<Vec<f64>>,
}

impl Default for AmbiguitySpec {
    fn default() -> Self {
        AmbiguitySpec {
            p: default_orders(),
            r1: 0.0,
            r2: None,
            r_grid: None,
            r_list: None,
        }
    }
}

fn default_orders() -> Vec<SchattenOrder> {
    vec![SchattenOrder::One]
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StepCap {
    Value(f64),
    /// `"radius"`: `max(1, r1, r2)`.
    Named(CapName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapName {
    Radius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Adaptive,
    Accelerated,
    Constant,
    Diminishing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_step_kind")]
    pub step_rule: StepKind,
    /// Constant step, or `η₀` for the diminishing rule.
    pub step: Option<f64>,
    /// Cap of the adaptive rule, or the first trial step of the accelerated one.
    #[serde(default = "default_cap")]
    pub step_cap: StepCap,
    #[serde(default = "default_tol")]
    pub tol_relgap: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub time_limit_s: Option<f64>,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    pub record_history: Option<bool>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            step_rule: default_step_kind(),
            step: None,
            step_cap: default_cap(),
            tol_relgap: default_tol(),
            max_iters: default_max_iters(),
            time_limit_s: None,
            inner_tol: default_inner_tol(),
            record_history: None,
        }
    }
}

fn default_step_kind() -> StepKind {
    StepKind::Adaptive
}
fn default_cap() -> StepCap {
    StepCap::Named(CapName::Radius)
}
fn default_tol() -> f64 {
    1e-3
}
fn default_max_iters() -> usize {
    5000
}
fn default_inner_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_conv_trials")]
    pub trials: usize,
    /// Horizons are skipped once the cumulative wall time exceeds this.
    #[serde(default = "default_budget")]
    pub budget_s: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec {
            horizons: default_horizons(),
            trials: default_conv_trials(),
            budget_s: default_budget(),
        }
    }
}

fn default_horizons() -> Vec<usize> {
    (1..=20).map(|k| 10 * k).collect()
}
fn default_conv_trials() -> usize {
    1
}
fn default_budget() -> f64 {
    600.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "default_sim_trials")]
    pub trials: usize,
    /// Gain to evaluate (`row,col,value` CSV); otherwise the solved gain.
    pub gain_file: Option<PathBuf>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            trials: default_sim_trials(),
            gain_file: None,
        }
    }
}

fn default_sim_trials() -> usize {
    10_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSpec {
    pub matrix: MatrixSpec,
    pub center: Option<MatrixSpec>,
    pub radius: f64,
    pub p: SchattenOrder,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub system: SystemSpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub ambiguity: AmbiguitySpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    pub project: Option<ProjectSpec>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_trials() -> usize {
    20
}

fn config_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Dotted key path for a TOML error: the enclosing table plus the key
/// named in the message or found at the error location.
fn toml_error_path(text: &str, err: &toml::de::Error) -> String {
    let msg = err.message();
    let offset = err.span().map_or(0, |s| s.start);
    let before = &text[..offset.min(text.len())];
    let table = before
        .lines()
        .rev()
        .find_map(|l| {
            let t = l.trim();
            (t.starts_with('[') && !t.starts_with("[[")).then(|| t.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        })
        .unwrap_or_default();
    let quoted = msg.split('`').nth(1).map(str::to_string);
    let line_key = || {
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        let line = text[line_start..].lines().next().unwrap_or("");
        line.split_once('=').map(|(k, _)| k.trim().to_string()).filter(|k| !k.is_empty())
    };
    let key = if msg.contains("missing field") || msg.contains("unknown field") {
        quoted.or_else(line_key)
    } else {
        line_key()
    };
    match (table.is_empty(), key) {
        (true, Some(k)) => k,
        (false, Some(k)) if k.starts_with(&format!("{table}.")) => k,
        (false, Some(k)) => format!("{table}.{k}"),
        (_, None) if table.is_empty() => "<root>".into(),
        (_, None) => table,
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Parses and validates; relative file references resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| config_err(&toml_error_path(text, &e), e.message().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        let d = &self.disturbance;
        if d.rho.is_empty() {
            return Err(config_err("disturbance.rho", "must list at least one value"));
        }
        if let Some(bad) = d.rho.iter().find(|r| !(-1.0..=1.0).contains(*r)) {
            return Err(config_err("disturbance.rho", format!("{bad} is outside [-1, 1]")));
        }
        if d.samples == Some(0) {
            return Err(config_err("disturbance.samples", "must be at least 1"));
        }
        let a = &self.ambiguity;
        if a.p.is_empty() {
            return Err(config_err("ambiguity.p", "must list at least one order"));
        }
        if !(a.r1 >= 0.0) || !a.r1.is_finite() {
            return Err(config_err("ambiguity.r1", "must be a finite nonnegative number"));
        }
        if let Some(r2) = a.r2 {
            if !(r2 >= 0.0) || !r2.is_finite() {
                return Err(config_err("ambiguity.r2", "must be a finite nonnegative number"));
            }
        }
        if let Some(g) = a.r_grid {
            if g.count == 0 {
                return Err(config_err("ambiguity.r_grid.count", "must be at least 1"));
            }
            if g.count > 1 {
                if !(g.min > 0.0) {
                    return Err(config_err("ambiguity.r_grid.min", "must be positive for a log-spaced grid"));
                }
                if !(g.max > 0.0) {
                    return Err(config_err("ambiguity.r_grid.max", "must be positive for a log-spaced grid"));
                }
                if g.max < g.min {
                    return Err(config_err("ambiguity.r_grid.max", "must not be below r_grid.min"));
                }
            } else if !(g.min >= 0.0) {
                return Err(config_err("ambiguity.r_grid.min", "must be nonnegative"));
            }
        }
        if let Some(list) = &a.r_list {
            if list.is_empty() || list.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return Err(config_err("ambiguity.r_list", "must be a nonempty list of nonnegative radii"));
            }
        }
        let s = &self.solver;
        if !(s.tol_relgap > 0.0) {
            return Err(config_err("solver.tol_relgap", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(config_err("solver.max_iters", "must be at least 1"));
        }
        if !(s.inner_tol > 0.0) {
            return Err(config_err("solver.inner_tol", "must be positive"));
        }
        if let Some(step) = s.step {
            if !(step > 0.0) {
                return Err(config_err("solver.step", "must be positive"));
            }
        }
        if s.step_rule == StepKind::Constant && s.step.is_none() {
            return Err(config_err("solver.step", "required by the constant step rule"));
        }
        if let StepCap::Value(v) = s.step_cap {
            if !(v > 0.0) {
                return Err(config_err("solver.step_cap", "must be positive"));
            }
        }
        if let Some(t) = s.time_limit_s {
            if !(t > 0.0) {
                return Err(config_err("solver.time_limit_s", "must be positive"));
            }
        }
        if self.convergence.horizons.iter().any(|&t| t == 0) {
            return Err(config_err("convergence.horizons", "horizons must be positive"));
        }
        if self.convergence.trials == 0 {
            return Err(config_err("convergence.trials", "must be at least 1"));
        }
        if self.simulate.trials == 0 {
            return Err(config_err("simulate.trials", "must be at least 1"));
        }
        if let Some(p) = &self.project {
            if !(p.radius >= 0.0) {
                return Err(config_err("project.radius", "must be nonnegative"));
            }
        }
        self.system_with_horizon(None).map(|_| ())
    }

    fn matrix(&self, spec: &MatrixSpec, path: &str) -> Result<DMatrix<f64>> {
        match spec {
            MatrixSpec::Inline(rows) => io::matrix_from_rows(rows).map_err(|reason| config_err(path, reason)),
            MatrixSpec::File { file } => io::read_matrix_csv(&self.resolve(file)).map_err(|e| config_err(path, e.to_string())),
        }
    }

    /// Builds the plant, optionally overriding the horizon (time-invariant
    /// definitions only).
    pub fn system_with_horizon(&self, horizon: Option<usize>) -> Result<LtvSystem> {
        let s = &self.system;
        let horizon = horizon.or(s.horizon);
        if let Some(preset) = &s.preset {
            if s.a.is_some() || s.b.is_some() || s.a_seq.is_some() || s.b_seq.is_some() || s.q.is_some() || s.r.is_some() {
                return Err(config_err("system.preset", "cannot be combined with explicit matrices"));
            }
            let t = horizon.ok_or_else(|| config_err("system.horizon", "missing field `horizon`"))?;
            if t == 0 {
                return Err(config_err("system.horizon", "must be positive"));
            }
            return match preset.as_str() {
                "double_integrator" => Ok(LtvSystem::double_integrator(t)),
                other => Err(config_err("system.preset", format!("unknown preset {other:?}"))),
            };
        }
        let q = self.matrix(s.q.as_ref().ok_or_else(|| config_err("system.q", "missing field `q`"))?, "system.q")?;
        let r = self.matrix(s.r.as_ref().ok_or_else(|| config_err("system.r", "missing field `r`"))?, "system.r")?;
        let wrap = |path: &'static str| move |e: Error| config_err(path, e.to_string());
        match (&s.a, &s.b, &s.a_seq, &s.b_seq) {
            (Some(a), Some(b), None, None) => {
                let t = horizon.ok_or_else(|| config_err("system.horizon", "missing field `horizon`"))?;
                if t == 0 {
                    return Err(config_err("system.horizon", "must be positive"));
                }
                let a = self.matrix(a, "system.a")?;
                let b = self.matrix(b, "system.b")?;
                LtvSystem::time_invariant(a, b, &q, &r, t).map_err(wrap("system"))
            }
            (None, None, Some(a_seq), Some(b_seq)) => {
                if horizon.is_some_and(|t| t != a_seq.len()) && s.horizon.is_some() {
                    return Err(config_err("system.horizon", "does not match the length of a_seq"));
                }
                if horizon.is_some_and(|t| t != a_seq.len()) {
                    return Err(config_err("system.a_seq", "horizon override needs a time-invariant system"));
                }
                let a: Vec<_> = a_seq
                    .iter()
                    .enumerate()
                    .map(|(t, m)| self.matrix(m, &format!("system.a_seq[{t}]")))
                    .collect::<Result<_>>()?;
                let b: Vec<_> = b_seq
                    .iter()
                    .enumerate()
                    .map(|(t, m)| self.matrix(m, &format!("system.b_seq[{t}]")))
                    .collect::<Result<_>>()?;
                let t = a.len();
                LtvSystem::new(
                    a,
                    b,
                    crate::linalg::block_diag_repeat(&q, t + 1),
                    crate::linalg::block_diag_repeat(&r, t),
                )
                .map_err(wrap("system"))
            }
            (None, None, None, None) => Err(config_err("system", "give `preset`, `a`/`b` or `a_seq`/`b_seq`")),
            _ => Err(config_err("system", "use either `a`/`b` or `a_seq`/`b_seq`, both of a pair")),
        }
    }

    pub fn system(&self) -> Result<LtvSystem> {
        self.system_with_horizon(None)
    }

    /// Benchmark radii: `r_list`, else the log-spaced `r_grid`, else `[r2 or T]`.
    pub fn radii(&self, horizon: usize) -> Vec<f64> {
        let a = &self.ambiguity;
        if let Some(list) = &a.r_list {
            return list.clone();
        }
        match a.r_grid {
            Some(g) if g.count == 1 => vec![g.min],
            Some(g) => {
                let (lo, hi) = (g.min.log10(), g.max.log10());
                (0..g.count)
                    .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (g.count - 1) as f64))
                    .collect()
            }
            None => vec![self.solve_radius(horizon)],
        }
    }

    pub fn solve_radius(&self, horizon: usize) -> f64 {
        self.ambiguity.r2.unwrap_or(horizon as f64)
    }

    /// Solver settings for radii `(r1, r2)`.
    pub fn solver_config(&self, r1: f64, r2: f64) -> SolverConfig {
        let s = &self.solver;
        let cap = match s.step_cap {
            StepCap::Value(v) => v,
            StepCap::Named(CapName::Radius) => 1f64.max(r1).max(r2),
        };
        let step_rule = match s.step_rule {
            StepKind::Adaptive => StepRule::Adaptive { max: cap },
            StepKind::Accelerated => StepRule::Accelerated { initial: cap },
            StepKind::Constant => StepRule::Constant(s.step.unwrap_or(1.0)),
            StepKind::Diminishing => StepRule::Diminishing(s.step),
        };
        SolverConfig {
            step_rule,
            tol_relgap: s.tol_relgap,
            max_iters: s.max_iters,
            inner: InnerOptions {
                tol: s.inner_tol,
                ..InnerOptions::default()
            },
            record_history: s.record_history,
            time_limit: s.time_limit_s.map(Duration::from_secs_f64),
            ..SolverConfig::default()
        }
    }
}
