//! Dense symmetric linear-algebra helpers shared by the solver modules.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Schatten order restricted to the three supported members of the family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchattenOrder {
    /// Nuclear norm.
    One,
    /// Frobenius norm.
    Two,
    /// Spectral norm.
    Inf,
}

impl SchattenOrder {
    pub const ALL: [SchattenOrder; 3] = [SchattenOrder::One, SchattenOrder::Two, SchattenOrder::Inf];

    /// Hölder conjugate q with 1/p + 1/q = 1.
    pub fn dual(self) -> SchattenOrder {
        match self {
            SchattenOrder::One => SchattenOrder::Inf,
            SchattenOrder::Two => SchattenOrder::Two,
            SchattenOrder::Inf => SchattenOrder::One,
        }
    }

    /// Name of the regret controller obtained with this covariance-ball order.
    pub fn controller_name(self) -> &'static str {
        match self {
            SchattenOrder::One => "nuc_regret",
            SchattenOrder::Two => "frob_regret",
            SchattenOrder::Inf => "spec_regret",
        }
    }

    /// ℓp norm of a vector (used on spectra).
    pub fn vector_norm(self, x: &[f64]) -> f64 {
        match self {
            SchattenOrder::One => x.iter().map(|v| v.abs()).sum(),
            SchattenOrder::Two => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            SchattenOrder::Inf => x.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }
}

impl fmt::Display for SchattenOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchattenOrder::One => "1",
            SchattenOrder::Two => "2",
            SchattenOrder::Inf => "inf",
        })
    }
}

impl FromStr for SchattenOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "nuc" | "nuclear" => Ok(SchattenOrder::One),
            "2" | "fro" | "frob" | "frobenius" => Ok(SchattenOrder::Two),
            "inf" | "infinity" | "spec" | "spectral" => Ok(SchattenOrder::Inf),
            other => Err(Error::UnsupportedOrder(other.to_string())),
        }
    }
}

/// Accepts the integers 1 and 2 as well as any string understood by `FromStr`.
impl<'de> Deserialize<'de> for SchattenOrder {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        let text = match Raw::deserialize(de)? {
            Raw::Int(i) => i.to_string(),
            Raw::Text(s) => s,
        };
        text.parse()
            .map_err(|_| serde::de::Error::custom(format!("unknown Schatten order {text:?}; expected 1, 2 or inf")))
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is sign-normalized so that its first
/// nonzero component is positive.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eigendecomposition input"));
        }
        let n = m.nrows();
        let eig = SymmetricEigen::new(m.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        for (dst, &src) in order.iter().enumerate() {
            values.push(eig.eigenvalues[src]);
            let mut col = eig.eigenvectors.column(src).into_owned();
            if let Some(first) = col.iter().find(|v| v.abs() > 1e-14) {
                if *first < 0.0 {
                    col.neg_mut();
                }
            }
            vectors.set_column(dst, &col);
        }
        Ok(SortedEigen { values, vectors })
    }

    pub fn leading_vector(&self) -> DVector<f64> {
        self.vectors.column(0).into_owned()
    }

    /// U diag(values) Uᵀ, symmetrized.
    pub fn reassemble(&self, values: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        let mut out = &scaled * self.vectors.transpose();
        symmetrize_mut(&mut out);
        out
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize_mut(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize_mut(&mut out);
    out
}

pub fn eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &v| a.max(v))
}

/// Σᵢⱼ aᵢⱼ bᵢⱼ, which equals tr(A B) for symmetric A or B.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Schatten norm of a symmetric matrix from its spectrum.
pub fn schatten_norm_sym(m: &DMatrix<f64>, p: SchattenOrder) -> f64 {
    match p {
        SchattenOrder::Two => m.norm(),
        _ => p.vector_norm(&eigenvalues_desc(m)),
    }
}

/// Symmetric PSD square root; negative round-off eigenvalues are clamped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SortedEigen::new(&symmetrized(m))?;
    let roots: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(eig.reassemble(&roots))
}

/// Lower-triangular L with `m = Lᵀ L`, obtained from the Cholesky factor of
/// the index-reversed matrix. Returns `None` when `m` is not positive definite.
pub fn reverse_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let flipped = DMatrix::from_fn(n, n, |i, j| m[(n - 1 - i, n - 1 - j)]);
    let c = flipped.cholesky()?.unpack();
    // flipped = C Cᵀ  =>  m = (P C P)(P Cᵀ P); P C P is upper triangular.
    Some(DMatrix::from_fn(n, n, |i, j| c[(n - 1 - j, n - 1 - i)]))
}

/// Inverse of an SPD matrix through its Cholesky factorization, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some(symmetrized(&inv))
}

pub fn condition_number_spd(m: &DMatrix<f64>) -> f64 {
    let vals = eigenvalues_desc(m);
    match (vals.first(), vals.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Block-diagonal matrix with `block` repeated `count` times.
pub fn block_diag_repeat(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}
