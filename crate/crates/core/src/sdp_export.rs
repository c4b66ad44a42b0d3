//! Semidefinite reformulation of the regret problem, written in sparse SDPA
//! format (`.dat-s`) for external conic solvers.
//!
//! The program is `min cᵀx  s.t.  Σᵢ Fᵢ xᵢ − F₀ ⪰ 0` with one symmetric block
//! per linear matrix inequality. Decision variables, in order:
//!
//! 1. free entries of `K` (row-major over the causal pattern),
//! 2. upper-triangle entries of `X` (row-major),
//! 3. `γ₁` when `r1 > 0`,
//! 4. `γ_∞` (when `p = 1`) or upper-triangle entries of `Y` (when `p = ∞`), when `r2 > 0`.
//!
//! With `Δ = K − K°` the blocks are
//!
//! ```text
//! [ X        Σ̂^½Δᵀ ]        [ γ I   Δᵀ  ]        [ Y   Δᵀ  ]
//! [ ΔΣ̂^½     D⁻¹   ] ⪰ 0,   [ Δ     D⁻¹ ] ⪰ 0,   [ Δ   D⁻¹ ] ⪰ 0,   Y ⪰ 0
//! ```
//!
//! and the objective is `tr X + r1 γ₁ + r2 (γ_∞ or tr Y)`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::ambiguity::AmbiguitySet;
use crate::dual_solver::primal_value;
use crate::error::{Error, Result};
use crate::lifting::LiftedSystem;
use crate::linalg::{self, SchattenOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Gain { row: usize, col: usize },
    X { i: usize, j: usize },
    Y { i: usize, j: usize },
    Gamma1,
    GammaQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Schur complement of `X ⪰ Σ̂^½ C Σ̂^½`.
    Nominal,
    /// `γ₁ I ⪰ C`.
    MeanSpectral,
    /// `γ_∞ I ⪰ C`.
    CovSpectral,
    /// `Y ⪰ C`.
    CovTrace,
    /// `Y ⪰ 0`.
    YPsd,
}

/// One nonzero of an upper-triangle coefficient matrix. `var = 0` is `F₀`;
/// all indices are 0-based here and shifted on output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpEntry {
    pub var: usize,
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpModel {
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub blocks: Vec<(BlockKind, usize)>,
    pub entries: Vec<SdpEntry>,
    /// Condition number of `D`, for the file header.
    pub cond_d: f64,
    n: usize,
}

struct Builder {
    blocks: Vec<(BlockKind, usize)>,
    entries: Vec<SdpEntry>,
}

impl Builder {
    fn block(&mut self, kind: BlockKind, size: usize) -> usize {
        self.blocks.push((kind, size));
        self.blocks.len() - 1
    }

    /// Adds `value` at `(i, j)` of the symmetric coefficient, storing the upper triangle.
    fn put(&mut self, var: usize, block: usize, i: usize, j: usize, value: f64) {
        if value != 0.0 {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            self.entries.push(SdpEntry { var, block, i, j, value });
        }
    }
}

/// Builds the SDP for `p ∈ {1, ∞}`.
pub fn export_model(ls: &LiftedSystem, amb: &AmbiguitySet) -> Result<SdpModel> {
    if amb.p == SchattenOrder::Two {
        return Err(Error::UnsupportedOrder("2 (SDP export covers p = 1 and p = inf)".into()));
    }
    let (n, m) = (ls.dims.n, ls.dims.m);
    if amb.dim() != n {
        return Err(Error::dim("ambiguity set dimension", n, amb.dim()));
    }
    let d_inv = linalg::spd_inverse(&ls.d).ok_or(Error::InputCostNotPd {
        min_eig: linalg::min_eigenvalue(&ls.d),
    })?;
    let root = linalg::psd_sqrt(&amb.sigma_hat)?;

    let mut variables: Vec<Variable> = ls.mask.free_indices().map(|(row, col)| Variable::Gain { row, col }).collect();
    let gains = variables.len();
    let upper = |f: fn(usize, usize) -> Variable| (0..n).flat_map(move |i| (i..n).map(move |j| f(i, j)));
    variables.extend(upper(|i, j| Variable::X { i, j }));
    let use_gamma1 = amb.r1 > 0.0;
    let cov = (amb.r2 > 0.0).then_some(amb.p);
    if use_gamma1 {
        variables.push(Variable::Gamma1);
    }
    match cov {
        Some(SchattenOrder::One) => variables.push(Variable::GammaQ),
        Some(_) => variables.extend(upper(|i, j| Variable::Y { i, j })),
        None => {}
    }

    let mut b = Builder { blocks: Vec::new(), entries: Vec::new() };
    let mut epigraph_blocks = Vec::new();
    let nominal = b.block(BlockKind::Nominal, n + m);
    if use_gamma1 {
        epigraph_blocks.push(b.block(BlockKind::MeanSpectral, n + m));
    }
    let (cov_block, y_block) = match cov {
        Some(SchattenOrder::One) => {
            let blk = b.block(BlockKind::CovSpectral, n + m);
            epigraph_blocks.push(blk);
            (Some(blk), None)
        }
        Some(_) => {
            let blk = b.block(BlockKind::CovTrace, n + m);
            epigraph_blocks.push(blk);
            (Some(blk), Some(b.block(BlockKind::YPsd, n)))
        }
        None => (None, None),
    };

    // F₀: constants moved to the right-hand side, so F₀ = −(constant part).
    let sk = &root * ls.k_nc.transpose();
    for i in 0..n {
        for r in 0..m {
            b.put(0, nominal, i, n + r, sk[(i, r)]);
        }
    }
    for &blk in &epigraph_blocks {
        for c in 0..n {
            for r in 0..m {
                b.put(0, blk, c, n + r, ls.k_nc[(r, c)]);
            }
        }
    }
    for &blk in std::iter::once(&nominal).chain(&epigraph_blocks) {
        for i in 0..m {
            for j in i..m {
                b.put(0, blk, n + i, n + j, -d_inv[(i, j)]);
            }
        }
    }

    let mut objective = vec![0.0; variables.len()];
    for (idx, var) in variables.iter().enumerate() {
        let v = idx + 1;
        match *var {
            Variable::Gain { row, col } => {
                for j in 0..n {
                    b.put(v, nominal, j, n + row, root[(j, col)]);
                }
                for &blk in &epigraph_blocks {
                    b.put(v, blk, col, n + row, 1.0);
                }
            }
            Variable::X { i, j } => {
                b.put(v, nominal, i, j, 1.0);
                if i == j {
                    objective[idx] = 1.0;
                }
            }
            Variable::Y { i, j } => {
                for blk in [cov_block, y_block].into_iter().flatten() {
                    b.put(v, blk, i, j, 1.0);
                }
                if i == j {
                    objective[idx] = amb.r2;
                }
            }
            Variable::Gamma1 | Variable::GammaQ => {
                let blk = if *var == Variable::Gamma1 { epigraph_blocks[0] } else { cov_block.expect("covariance block") };
                for i in 0..n {
                    b.put(v, blk, i, i, 1.0);
                }
                objective[idx] = if *var == Variable::Gamma1 { amb.r1 } else { amb.r2 };
            }
        }
    }
    debug_assert_eq!(variables.len(), gains + n * (n + 1) / 2 * (1 + y_block.is_some() as usize) + use_gamma1 as usize + (cov == Some(SchattenOrder::One)) as usize);

    Ok(SdpModel {
        variables,
        objective,
        blocks: b.blocks,
        entries: b.entries,
        cond_d: linalg::condition_number_spd(&ls.d),
        n,
    })
}

/// Builds the model and writes it to `path`.
pub fn export_sdp(ls: &LiftedSystem, amb: &AmbiguitySet, path: &Path) -> Result<SdpModel> {
    let model = export_model(ls, amb)?;
    std::fs::write(path, model.to_sdpa()).map_err(|e| Error::io(path, e))?;
    Ok(model)
}

impl SdpModel {
    pub fn var_count(&self) -> usize {
        self.variables.len()
    }

    /// Sparse SDPA text. Comment lines (`"`) carry the variable layout.
    pub fn to_sdpa(&self) -> String {
        let mut s = String::new();
        let gains = self.variables.iter().filter(|v| matches!(v, Variable::Gain { .. })).count();
        let _ = writeln!(s, "\"regret SDP: {} gain entries, n = {}, cond(D) = {:.6e}", gains, self.n, self.cond_d);
        let kinds: Vec<String> = self.blocks.iter().map(|(k, _)| format!("{k:?}")).collect();
        let _ = writeln!(s, "\"blocks: {}", kinds.join(" "));
        let _ = writeln!(s, "{} = mDIM", self.var_count());
        let _ = writeln!(s, "{} = nBLOCK", self.blocks.len());
        let sizes: Vec<String> = self.blocks.iter().map(|(_, size)| size.to_string()).collect();
        let _ = writeln!(s, "{} = bLOCKsTRUCT", sizes.join(" "));
        let obj: Vec<String> = self.objective.iter().map(|c| format!("{c:.17e}")).collect();
        let _ = writeln!(s, "{}", obj.join(" "));
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {} {} {:.17e}", e.var, e.block + 1, e.i + 1, e.j + 1, e.value);
        }
        s
    }

    /// `Σᵢ Fᵢ xᵢ − F₀` for every block.
    pub fn block_matrices(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        assemble(&self.blocks.iter().map(|b| b.1).collect::<Vec<_>>(), &self.entries, x)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// A strictly feasible point for gain `k`: each epigraph variable is its
    /// tightest value plus `slack` (times the identity for matrices).
    /// Its objective is `f(K) + slack · (n + r1 + r2·(1 or n))`.
    pub fn feasible_point(&self, k: &DMatrix<f64>, ls: &LiftedSystem, amb: &AmbiguitySet, slack: f64) -> Result<Vec<f64>> {
        ls.mask.check(k)?;
        let c = ls.regret_form(k);
        let root = linalg::psd_sqrt(&amb.sigma_hat)?;
        let x_min = &root * &c * &root;
        let top = linalg::max_eigenvalue(&c).max(0.0);
        let bump = |i: usize, j: usize| if i == j { slack } else { 0.0 };
        Ok(self
            .variables
            .iter()
            .map(|var| match *var {
                Variable::Gain { row, col } => k[(row, col)],
                Variable::X { i, j } => x_min[(i, j)] + bump(i, j),
                Variable::Y { i, j } => c[(i, j)] + bump(i, j),
                Variable::Gamma1 | Variable::GammaQ => top + slack,
            })
            .collect())
    }

    /// The gain encoded in `x`.
    pub fn gain(&self, x: &[f64], ls: &LiftedSystem) -> Result<DMatrix<f64>> {
        if x.len() != self.var_count() {
            return Err(Error::dim("SDP variables", self.var_count(), x.len()));
        }
        let mut k = DMatrix::zeros(ls.dims.m, ls.dims.n);
        for (var, &v) in self.variables.iter().zip(x) {
            if let Variable::Gain { row, col } = *var {
                k[(row, col)] = v;
            }
        }
        Ok(k)
    }
}

fn assemble(sizes: &[usize], entries: &[SdpEntry], x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let mut mats: Vec<DMatrix<f64>> = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    for e in entries {
        let coef = if e.var == 0 {
            -1.0
        } else {
            *x.get(e.var - 1).ok_or_else(|| Error::dim("SDP variables", e.var, x.len()))?
        };
        let mat = &mut mats[e.block];
        mat[(e.i, e.j)] += coef * e.value;
        if e.i != e.j {
            mat[(e.j, e.i)] += coef * e.value;
        }
    }
    Ok(mats)
}

/// A sparse SDPA problem read back from text.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaProblem {
    pub block_sizes: Vec<usize>,
    pub objective: Vec<f64>,
    pub entries: Vec<SdpEntry>,
}

impl SdpaProblem {
    pub fn block_matrices(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        assemble(&self.block_sizes, &self.entries, x)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Parses sparse SDPA text (positive block sizes only).
pub fn parse_sdpa(text: &str) -> Result<SdpaProblem> {
    let bad = |reason: String| Error::Parse { file: "sdpa".into(), reason };
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
    let mut header = |what: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {what}")))?;
        let body = line.split('=').next().unwrap_or(line);
        Ok(body
            .split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}' | '(' | ')'))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect())
    };
    let count = |toks: Vec<String>, what: &str| -> Result<usize> {
        toks.first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("invalid {what}")))
    };
    let m = count(header("mDIM")?, "mDIM")?;
    let nblock = count(header("nBLOCK")?, "nBLOCK")?;
    let block_sizes = header("bLOCKsTRUCT")?
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| bad(format!("unsupported block size {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if block_sizes.len() != nblock {
        return Err(bad(format!("expected {nblock} block sizes, got {}", block_sizes.len())));
    }
    let objective = header("objective")?
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| bad(format!("invalid objective coefficient {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if objective.len() != m {
        return Err(bad(format!("expected {m} objective coefficients, got {}", objective.len())));
    }
    let mut entries = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 5 {
            return Err(bad(format!("expected 5 fields in {line:?}")));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("invalid index in {line:?}")));
        let (var, block, i, j) = (idx(t[0])?, idx(t[1])?, idx(t[2])?, idx(t[3])?);
        let value: f64 = t[4].parse().map_err(|_| bad(format!("invalid value in {line:?}")))?;
        if var > m || block == 0 || block > nblock {
            return Err(bad(format!("index out of range in {line:?}")));
        }
        let size = block_sizes[block - 1];
        if i == 0 || j == 0 || i > size || j > size || i > j {
            return Err(bad(format!("entry outside the upper triangle in {line:?}")));
        }
        entries.push(SdpEntry { var, block: block - 1, i: i - 1, j: j - 1, value });
    }
    Ok(SdpaProblem { block_sizes, objective, entries })
}

/// `f(K_ext) − f_ref`; negative values mean the external gain is better.
pub fn certify_solution(ls: &LiftedSystem, amb: &AmbiguitySet, k_ext: &DMatrix<f64>, f_ref: f64) -> Result<f64> {
    Ok(primal_value(k_ext, amb, ls)? - f_ref)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{build_lifted, LtvSystem};
    use nalgebra::DVector;

    fn scalar_plant() -> LiftedSystem {
        let sys = LtvSystem::time_invariant(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            &DMatrix::identity(1, 1),
            &DMatrix::identity(1, 1),
            1,
        )
        .unwrap();
        build_lifted(&sys).unwrap()
    }

    fn amb(n: usize, r1: f64, r2: f64, p: SchattenOrder) -> AmbiguitySet {
        AmbiguitySet::new(DVector::zeros(n), DMatrix::identity(n, n), r1, r2, p).unwrap()
    }

    #[test]
    fn frobenius_is_rejected() {
        let ls = scalar_plant();
        assert!(matches!(export_model(&ls, &amb(2, 0.0, 1.0, SchattenOrder::Two)), Err(Error::UnsupportedOrder(_))));
    }

    #[test]
    fn block_layout() {
        let ls = scalar_plant();
        let kinds = |a: &AmbiguitySet| export_model(&ls, a).unwrap().blocks.iter().map(|b| b.0).collect::<Vec<_>>();
        assert_eq!(kinds(&amb(2, 0.0, 0.0, SchattenOrder::One)), vec![BlockKind::Nominal]);
        assert_eq!(
            kinds(&amb(2, 1.0, 1.0, SchattenOrder::Inf)),
            vec![BlockKind::Nominal, BlockKind::MeanSpectral, BlockKind::CovTrace, BlockKind::YPsd]
        );
        assert_eq!(
            kinds(&amb(2, 0.0, 1.0, SchattenOrder::One)),
            vec![BlockKind::Nominal, BlockKind::CovSpectral]
        );
    }

    #[test]
    fn variable_count() {
        let ls = build_lifted(&LtvSystem::double_integrator(3)).unwrap();
        let n = ls.dims.n;
        let free = ls.mask.free_count();
        let tri = n * (n + 1) / 2;
        assert_eq!(export_model(&ls, &amb(n, 0.0, 0.0, SchattenOrder::Inf)).unwrap().var_count(), free + tri);
        assert_eq!(export_model(&ls, &amb(n, 1.0, 2.0, SchattenOrder::Inf)).unwrap().var_count(), free + 2 * tri + 1);
        assert_eq!(export_model(&ls, &amb(n, 1.0, 2.0, SchattenOrder::One)).unwrap().var_count(), free + tri + 2);
    }

    #[test]
    fn feasible_point_prices_the_objective() {
        let ls = build_lifted(&LtvSystem::double_integrator(2)).unwrap();
        let n = ls.dims.n;
        let k = ls.mask.masked(&(&ls.k_nc * 0.3));
        for p in [SchattenOrder::One, SchattenOrder::Inf] {
            let a = amb(n, 0.7, 1.3, p);
            let model = export_model(&ls, &a).unwrap();
            let slack = 1e-3;
            let x = model.feasible_point(&k, &ls, &a, slack).unwrap();
            let extra = slack * (n as f64 + a.r1 + a.r2 * if p == SchattenOrder::One { 1.0 } else { n as f64 });
            let f = primal_value(&k, &a, &ls).unwrap();
            assert!((model.objective_at(&x) - f - extra).abs() < 1e-9 * f.max(1.0));
            for blk in model.block_matrices(&x).unwrap() {
                assert!(linalg::min_eigenvalue(&blk) > 0.0);
            }
            assert_eq!(model.gain(&x, &ls).unwrap(), k);
        }
    }

    #[test]
    fn round_trip() {
        let ls = build_lifted(&LtvSystem::double_integrator(2)).unwrap();
        let n = ls.dims.n;
        let a = amb(n, 0.5, 2.0, SchattenOrder::Inf);
        let model = export_model(&ls, &a).unwrap();
        let parsed = parse_sdpa(&model.to_sdpa()).unwrap();
        let x = model.feasible_point(&ls.mask.masked(&ls.k_nc), &ls, &a, 0.1).unwrap();
        assert!((parsed.objective_at(&x) - model.objective_at(&x)).abs() < 1e-12);
        for (a, b) in parsed.block_matrices(&x).unwrap().iter().zip(model.block_matrices(&x).unwrap()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parser_rejects_lower_triangle() {
        let text = "1 = mDIM\n1 = nBLOCK\n2 = bLOCKsTRUCT\n1.0\n1 1 2 1 1.0\n";
        assert!(parse_sdpa(text).is_err());
        let ok = "1 = mDIM\n1 = nBLOCK\n2 = bLOCKsTRUCT\n1.0\n1 1 1 2 1.0\n";
        assert_eq!(parse_sdpa(ok).unwrap().entries.len(), 1);
    }

    #[test]
    fn certify_requires_mask() {
        let ls = scalar_plant();
        let a = amb(2, 0.0, 1.0, SchattenOrder::Inf);
        let k = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        assert!(certify_solution(&ls, &a, &k, 1.0).unwrap().abs() < 1e-12);
        let bad = DMatrix::from_row_slice(1, 2, &[-1.0, 0.2]);
        assert!(matches!(certify_solution(&ls, &a, &bad, 1.0), Err(Error::MaskViolation { .. })));
    }
}
