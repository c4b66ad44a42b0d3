//! Horizon lifting of a linear time-varying system.
//!
//! Trajectories are stacked as `x = (x_0, …, x_T)`, `u = (u_0, …, u_{T-1})` and
//! `w = (x_0, w_0, …, w_{T-1})`, so that the dynamics become `x = F u + G w`.
//! Everything the solvers need about the plant (the regret weight `D`, the
//! clairvoyant gain `K°` and the causal pattern of admissible gains) is
//! derived once here and shared immutably afterwards.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag_repeat, symmetrized};

/// Sizes of the lifted problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    /// `nx * (horizon + 1)`: length of the state and disturbance trajectories.
    pub n: usize,
    /// `nu * horizon`: length of the input trajectory.
    pub m: usize,
}

impl Dims {
    pub fn new(nx: usize, nu: usize, horizon: usize) -> Self {
        Dims {
            nx,
            nu,
            horizon,
            n: nx * (horizon + 1),
            m: nu * horizon,
        }
    }
}

/// Linear time-varying plant with lifted quadratic costs.
#[derive(Debug, Clone)]
pub struct LtvSystem {
    a_seq: Vec<DMatrix<f64>>,
    b_seq: Vec<DMatrix<f64>>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    dims: Dims,
}

impl LtvSystem {
    /// Validates dimensions, symmetry, `Q ⪰ 0` and `R ≻ 0`.
    pub fn new(
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let horizon = a_seq.len();
        if horizon == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: "must be positive".into(),
            });
        }
        if b_seq.len() != horizon {
            return Err(Error::dim("B sequence length", horizon, b_seq.len()));
        }
        let nx = a_seq[0].nrows();
        let nu = b_seq[0].ncols();
        for a in &a_seq {
            if a.shape() != (nx, nx) {
                return Err(Error::dim("A_t", format!("{nx}x{nx}"), format!("{:?}", a.shape())));
            }
        }
        for b in &b_seq {
            if b.shape() != (nx, nu) {
                return Err(Error::dim("B_t", format!("{nx}x{nu}"), format!("{:?}", b.shape())));
            }
        }
        let dims = Dims::new(nx, nu, horizon);
        if q.shape() != (dims.n, dims.n) {
            return Err(Error::dim("Q", format!("{0}x{0}", dims.n), format!("{:?}", q.shape())));
        }
        if r.shape() != (dims.m, dims.m) {
            return Err(Error::dim("R", format!("{0}x{0}", dims.m), format!("{:?}", r.shape())));
        }
        for (what, mat) in [("Q", &q), ("R", &r)] {
            let asym = linalg::max_asymmetry(mat);
            if asym > 1e-10 * (1.0 + mat.amax()) {
                return Err(Error::NotSymmetric { what, asym });
            }
        }
        let q = symmetrized(&q);
        let r = symmetrized(&r);
        let r_min = linalg::min_eigenvalue(&r);
        if r_min <= 0.0 {
            return Err(Error::InputCostNotPd { min_eig: r_min });
        }
        let q_min = linalg::min_eigenvalue(&q);
        if q_min < -1e-12 * (1.0 + q.amax()) {
            return Err(Error::StateCostNotPsd { min_eig: q_min });
        }
        Ok(LtvSystem {
            a_seq,
            b_seq,
            q,
            r,
            dims,
        })
    }

    /// Time-invariant plant with stage costs replicated block-diagonally
    /// (`Q_stage` on all `T + 1` states, including `x_0`).
    pub fn time_invariant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q_stage: &DMatrix<f64>,
        r_stage: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let q = block_diag_repeat(q_stage, horizon + 1);
        let r = block_diag_repeat(r_stage, horizon);
        LtvSystem::new(vec![a; horizon], vec![b; horizon], q, r)
    }

    /// Damped double integrator with `Q = I`, `R = 10 I` used by the benchmark.
    pub fn double_integrator(horizon: usize) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.05]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        LtvSystem::time_invariant(
            a,
            b,
            &DMatrix::identity(2, 2),
            &DMatrix::from_element(1, 1, 10.0),
            horizon,
        )
        .expect("double integrator is well posed")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a_seq[t]
    }
    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b_seq[t]
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// Scalar-granularity causal pattern of admissible gains: input row `r`
/// (stage `t = r / nu`) may depend on the first `nx (t + 1)` disturbance
/// entries, i.e. on `x_0, w_0, …, w_{t-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalMask {
    rows: usize,
    cols: usize,
    row_len: Vec<usize>,
}

impl CausalMask {
    pub fn new(dims: Dims) -> Self {
        let row_len = (0..dims.m).map(|r| dims.nx * (r / dims.nu + 1)).collect();
        CausalMask {
            rows: dims.m,
            cols: dims.n,
            row_len,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_free(&self, r: usize, c: usize) -> bool {
        c < self.row_len[r]
    }

    /// Number of free columns in row `r`; nondecreasing in `r`.
    #[inline]
    pub fn row_len(&self, r: usize) -> usize {
        self.row_len[r]
    }

    pub fn free_count(&self) -> usize {
        self.row_len.iter().sum()
    }

    /// Zeroes every entry outside the pattern.
    pub fn apply(&self, k: &mut DMatrix<f64>) {
        for r in 0..self.rows {
            for c in self.row_len[r]..self.cols {
                k[(r, c)] = 0.0;
            }
        }
    }

    pub fn masked(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = k.clone();
        self.apply(&mut out);
        out
    }

    /// Free entries in row-major order.
    pub fn free_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.row_len[r]).map(move |c| (r, c)))
    }

    pub fn gather(&self, k: &DMatrix<f64>) -> Vec<f64> {
        self.free_indices().map(|(r, c)| k[(r, c)]).collect()
    }

    pub fn scatter(&self, values: &[f64]) -> Result<DMatrix<f64>> {
        if values.len() != self.free_count() {
            return Err(Error::dim("free gain entries", self.free_count(), values.len()));
        }
        let mut k = DMatrix::zeros(self.rows, self.cols);
        for ((r, c), &v) in self.free_indices().zip(values) {
            k[(r, c)] = v;
        }
        Ok(k)
    }

    /// Errors when `k` has nonzeros outside the pattern.
    pub fn check(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.rows, self.cols) {
            return Err(Error::dim(
                "gain K",
                format!("{}x{}", self.rows, self.cols),
                format!("{:?}", k.shape()),
            ));
        }
        let mut count = 0;
        let mut first = None;
        for r in 0..self.rows {
            for c in self.row_len[r]..self.cols {
                if k[(r, c)] != 0.0 {
                    count += 1;
                    first.get_or_insert((r, c));
                }
            }
        }
        match first {
            None => Ok(()),
            Some(first) => Err(Error::MaskViolation { count, first }),
        }
    }
}

/// The lifted plant and its derived regret quantities.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub dims: Dims,
    /// Input-to-state map (n × m), strictly block lower triangular.
    pub f: DMatrix<f64>,
    /// Disturbance-to-state map (n × n), unit block lower triangular.
    pub g: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `R + FᵀQF`.
    pub d: DMatrix<f64>,
    /// Lower-triangular factor with `D = Lᵀ L`.
    pub d_factor: DMatrix<f64>,
    /// Clairvoyant gain `K° = -D⁻¹FᵀQG`.
    pub k_nc: DMatrix<f64>,
    pub mask: CausalMask,
    /// Quadratic form of the clairvoyant cost: `J(K°w, w) = wᵀ N w`.
    pub noncausal_cost: DMatrix<f64>,
}

/// Builds the lifted maps and derived quantities for `sys`.
pub fn build_lifted(sys: &LtvSystem) -> Result<LiftedSystem> {
    let dims = sys.dims();
    let Dims { nx, nu, horizon, n, m } = dims;

    // Phi(t, k) = A_{t-1} ... A_k, Phi(t, t) = I.
    let mut g = DMatrix::zeros(n, n);
    for k in 0..=horizon {
        let mut phi = DMatrix::<f64>::identity(nx, nx);
        g.view_mut((k * nx, k * nx), (nx, nx)).copy_from(&phi);
        for t in (k + 1)..=horizon {
            phi = sys.a(t - 1) * phi;
            g.view_mut((t * nx, k * nx), (nx, nx)).copy_from(&phi);
        }
    }
    let mut f = DMatrix::zeros(n, m);
    for k in 0..horizon {
        let mut blk = sys.b(k).clone();
        f.view_mut(((k + 1) * nx, k * nu), (nx, nu)).copy_from(&blk);
        for t in (k + 2)..=horizon {
            blk = sys.a(t - 1) * blk;
            f.view_mut((t * nx, k * nu), (nx, nu)).copy_from(&blk);
        }
    }

    let q = sys.q().clone();
    let r = sys.r().clone();
    let qf = &q * &f;
    let d = symmetrized(&(&r + f.transpose() * &qf));
    let chol = d.clone().cholesky().ok_or_else(|| Error::InputCostNotPd {
        min_eig: linalg::min_eigenvalue(&d),
    })?;
    let rhs = qf.transpose() * &g;
    let k_nc = -chol.solve(&rhs);
    let d_factor = linalg::reverse_cholesky(&d).ok_or_else(|| Error::InputCostNotPd {
        min_eig: linalg::min_eigenvalue(&d),
    })?;

    let closed = &f * &k_nc + &g;
    let noncausal_cost = symmetrized(&(closed.transpose() * &q * &closed + k_nc.transpose() * &r * &k_nc));

    Ok(LiftedSystem {
        dims,
        f,
        g,
        q,
        r,
        d,
        d_factor,
        k_nc,
        mask: CausalMask::new(dims),
        noncausal_cost,
    })
}

impl LiftedSystem {
    /// `J(u, w) = xᵀQx + uᵀRu` with `x = Fu + Gw`.
    pub fn cost(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let x = &self.f * u + &self.g * w;
        x.dot(&(&self.q * &x)) + u.dot(&(&self.r * u))
    }

    /// `J(u, w) - J(K°w, w)`.
    pub fn regret(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.cost(u, w) - self.cost(&(&self.k_nc * w), w)
    }

    /// `(K - K°)ᵀ D (K - K°)`, symmetrized.
    pub fn regret_form(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let w = &self.d_factor * (k - &self.k_nc);
        symmetrized(&(w.transpose() * &w))
    }

    /// `L (K - K°)` with `D = LᵀL`; its Gram matrix is the regret form.
    pub fn regret_root(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.d_factor * (k - &self.k_nc)
    }

    /// `G⁻¹` by block forward substitution on the unit block-lower-triangular `G`.
    pub fn g_inverse(&self) -> DMatrix<f64> {
        let Dims { nx, horizon, n, .. } = self.dims;
        let mut inv = DMatrix::zeros(n, n);
        for k in 0..=horizon {
            inv.view_mut((k * nx, k * nx), (nx, nx)).fill_with_identity();
            for t in (k + 1)..=horizon {
                let mut acc = DMatrix::<f64>::zeros(nx, nx);
                for j in k..t {
                    acc -= self.g.view((t * nx, j * nx), (nx, nx)) * inv.view((j * nx, k * nx), (nx, nx));
                }
                inv.view_mut((t * nx, k * nx), (nx, nx)).copy_from(&acc);
            }
        }
        inv
    }
}

/// Affine disturbance-feedback policy `u = K w + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    pub k: DMatrix<f64>,
    pub v: DVector<f64>,
}

impl AffinePolicy {
    /// Checks shapes and the causal pattern.
    pub fn new(k: DMatrix<f64>, v: DVector<f64>, mask: &CausalMask) -> Result<Self> {
        mask.check(&k)?;
        if v.len() != mask.shape().0 {
            return Err(Error::dim("feedforward v", mask.shape().0, v.len()));
        }
        Ok(AffinePolicy { k, v })
    }

    pub fn zero(dims: Dims) -> Self {
        AffinePolicy {
            k: DMatrix::zeros(dims.m, dims.n),
            v: DVector::zeros(dims.m),
        }
    }

    /// Feedback gain `K` with the feedforward `-(K - K°) μ̂` that is optimal
    /// against any mean in a ball around `μ̂`.
    pub fn centered(k: DMatrix<f64>, ls: &LiftedSystem, mu_hat: &DVector<f64>) -> Self {
        let v = -((&k - &ls.k_nc) * mu_hat);
        AffinePolicy { k, v }
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.k * w + &self.v
    }
}

/// Equivalent causal state feedback `u = L x + c`.
pub fn to_state_feedback(pol: &AffinePolicy, ls: &LiftedSystem) -> Result<(DMatrix<f64>, DVector<f64>)> {
    ls.mask.check(&pol.k)?;
    let g_inv = ls.g_inverse();
    let kg = &pol.k * &g_inv;
    let m = ls.dims.m;
    let prefactor = DMatrix::<f64>::identity(m, m) + &kg * &ls.f;
    let lu = prefactor.clone().lu();
    let singular = || {
        let sv = prefactor.singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        Error::SingularClosedLoop {
            cond: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        }
    };
    let l = lu.solve(&kg).ok_or_else(singular)?;
    let c = lu.solve(&pol.v).ok_or_else(singular)?;
    Ok((l, c))
}

/// Result of simulating the plant over one disturbance realization.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub cost: f64,
}

/// Simulates `x_{t+1} = A_t x_t + B_t u_t + w_t` under `u = K w + v`.
/// The first `nx` entries of `w` are the initial state.
pub fn rollout(sys: &LtvSystem, pol: &AffinePolicy, w: &DVector<f64>) -> Result<Rollout> {
    let dims = sys.dims();
    check_len("disturbance w", dims.n, w.len())?;
    check_len("feedforward v", dims.m, pol.v.len())?;
    if pol.k.shape() != (dims.m, dims.n) {
        return Err(Error::dim("gain K", format!("{}x{}", dims.m, dims.n), format!("{:?}", pol.k.shape())));
    }
    simulate(sys, w, |t, _x| {
        let rows = t * dims.nu..(t + 1) * dims.nu;
        DVector::from_iterator(
            dims.nu,
            rows.map(|r| pol.k.row(r).dot(&w.transpose()) + pol.v[r]),
        )
    })
}

/// Simulates the plant under causal state feedback `u_t = (L x)_t + c_t`,
/// using only states `x_0, …, x_t` at stage `t`.
pub fn rollout_state_feedback(
    sys: &LtvSystem,
    l: &DMatrix<f64>,
    c: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<Rollout> {
    let dims = sys.dims();
    check_len("disturbance w", dims.n, w.len())?;
    check_len("offset c", dims.m, c.len())?;
    simulate(sys, w, |t, x| {
        let known = (t + 1) * dims.nx;
        DVector::from_iterator(
            dims.nu,
            (t * dims.nu..(t + 1) * dims.nu).map(|r| {
                (0..known).map(|j| l[(r, j)] * x[j]).sum::<f64>() + c[r]
            }),
        )
    })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(what, expected, got))
    }
}

fn simulate(
    sys: &LtvSystem,
    w: &DVector<f64>,
    mut input: impl FnMut(usize, &DVector<f64>) -> DVector<f64>,
) -> Result<Rollout> {
    let Dims { nx, nu, horizon, n, m } = sys.dims();
    let mut x = DVector::zeros(n);
    let mut u = DVector::zeros(m);
    x.rows_mut(0, nx).copy_from(&w.rows(0, nx));
    for t in 0..horizon {
        let ut = input(t, &x);
        u.rows_mut(t * nu, nu).copy_from(&ut);
        let next = sys.a(t) * x.rows(t * nx, nx) + sys.b(t) * &ut + w.rows((t + 1) * nx, nx);
        x.rows_mut((t + 1) * nx, nx).copy_from(&next);
    }
    let cost = x.dot(&(sys.q() * &x)) + u.dot(&(sys.r() * &u));
    Ok(Rollout { x, u, cost })
}
