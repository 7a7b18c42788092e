//! The quadratic program `minimise x^T Σ^{-1} x subject to x >= b`.
//!
//! Its solution `b̃`, the active index set `I`, the slack set `J` and the
//! dual vector `w = Σ^{-1} b̃` parameterise every tail constant in the crate.
//! The solver works on the dual non-negative problem
//! `minimise ½ λ^T Σ λ - b^T λ, λ >= 0` with a Lawson–Hanson active-set
//! iteration; its optimum is exactly `λ = w`, so `I` is the support of `λ`.
//! [`brute_force_pi_sigma`] enumerates every index subset and serves as the
//! independent oracle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::linalg::{asymmetry, max_abs, max_abs_entry, submatrix, subvector, symmetrize};

/// Relative tolerance for the feasibility tests `b̃_J >= b_J` and `w_I > 0`.
pub const FEAS_TOL: f64 = 1e-9;
/// Relative symmetry tolerance accepted by [`SymmetricPd::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Largest dimension the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_DIM: usize = 10;
/// Largest dimension for the value-ordered enumeration fallback.
const ENUMERATION_MAX_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric (largest relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (Cholesky factorisation failed)")]
    NotPositiveDefinite,
    #[error("threshold vector has no positive component")]
    NoPositiveComponent,
    #[error("dimension mismatch: matrix is {matrix}x{matrix}, vector has length {vector}")]
    DimensionMismatch { matrix: usize, vector: usize },
    #[error("no index set satisfies the optimality conditions")]
    Infeasible,
    #[error("enumeration limited to d <= {max}, got d = {d}")]
    TooLarge { d: usize, max: usize },
}

/// A symmetric positive definite matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct SymmetricPd {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SymmetricPd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, QpError> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(QpError::NotSquare { rows: matrix.nrows(), cols: matrix.ncols() });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(QpError::NonFinite);
        }
        let scale = max_abs_entry(&matrix).max(f64::MIN_POSITIVE);
        let asym = asymmetry(&matrix) / scale;
        if asym > SYMMETRY_TOL {
            return Err(QpError::NotSymmetric(asym));
        }
        let matrix = symmetrize(&matrix);
        let chol = Cholesky::new(matrix.clone()).ok_or(QpError::NotPositiveDefinite)?;
        if chol.l_dirty().diagonal().iter().any(|&x| !(x > 0.0)) {
            return Err(QpError::NotPositiveDefinite);
        }
        Ok(Self { matrix, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, QpError> {
        let m = crate::linalg::matrix_from_rows(rows).ok_or(QpError::NotSquare { rows: rows.len(), cols: 0 })?;
        Self::new(m)
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular Cholesky factor `L` with `Σ = L L^T`.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `Σ^{-1} x` by triangular solves.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(x)
    }

    /// `x^T Σ^{-1} x`.
    pub fn inv_quadratic_form(&self, x: &DVector<f64>) -> f64 {
        let y = self.chol.l().solve_lower_triangular(x).expect("non-singular factor");
        y.dot(&y)
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    /// Inverse matrix, formed column by column from Cholesky solves.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn scaled(&self, c: f64) -> Result<Self, QpError> {
        Self::new(&self.matrix * c)
    }

    /// Principal submatrix on `idx`.
    pub fn principal(&self, idx: &[usize]) -> Result<Self, QpError> {
        Self::new(submatrix(&self.matrix, idx, idx))
    }
}

/// Solution of the quadratic program and its active-set structure.
///
/// Index sets are zero-based and sorted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub b_tilde: Vec<f64>,
    pub index_i: Vec<usize>,
    pub index_j: Vec<usize>,
    pub w: Vec<f64>,
    pub value: f64,
}

impl QpSolution {
    pub fn b_tilde_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b_tilde)
    }

    pub fn w_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    /// Coordinates of `J` where the constraint is still tight, `b̃_j = b_j`.
    pub fn index_l(&self, b: &DVector<f64>) -> Vec<usize> {
        let tol = FEAS_TOL * max_abs(b).max(f64::MIN_POSITIVE);
        self.index_j.iter().copied().filter(|&j| (self.b_tilde[j] - b[j]).abs() <= tol).collect()
    }
}

fn check_inputs(sigma: &SymmetricPd, b: &DVector<f64>) -> Result<(), QpError> {
    if b.len() != sigma.dim() {
        return Err(QpError::DimensionMismatch { matrix: sigma.dim(), vector: b.len() });
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite);
    }
    if !b.iter().any(|&x| x > 0.0) {
        return Err(QpError::NoPositiveComponent);
    }
    Ok(())
}

/// Candidate solution obtained by declaring `idx` active.
struct Candidate {
    idx: Vec<usize>,
    b_tilde: DVector<f64>,
    w: DVector<f64>,
    value: f64,
}

fn candidate(sigma: &SymmetricPd, b: &DVector<f64>, idx: &[usize]) -> Option<Candidate> {
    let d = sigma.dim();
    let sub = sigma.principal(idx).ok()?;
    let b_i = subvector(b, idx);
    let w_i = sub.solve(&b_i);
    let value = b_i.dot(&w_i);
    let mut w = DVector::zeros(d);
    for (k, &i) in idx.iter().enumerate() {
        w[i] = w_i[k];
    }
    let mut b_tilde = sigma.matrix() * &w;
    for &i in idx {
        b_tilde[i] = b[i];
    }
    Some(Candidate { idx: idx.to_vec(), b_tilde, w, value })
}

impl Candidate {
    fn is_feasible(&self, b: &DVector<f64>) -> bool {
        let tol_b = FEAS_TOL * max_abs(b);
        let tol_w = FEAS_TOL * max_abs(&self.w);
        let slack_ok = (0..b.len()).filter(|i| !self.idx.contains(i)).all(|j| self.b_tilde[j] >= b[j] - tol_b);
        let dual_ok = self.idx.iter().all(|&i| self.w[i] > tol_w);
        slack_ok && dual_ok && self.value > 0.0
    }

    fn into_solution(self, d: usize) -> QpSolution {
        let index_j = (0..d).filter(|i| !self.idx.contains(i)).collect();
        QpSolution {
            b_tilde: self.b_tilde.iter().copied().collect(),
            index_i: self.idx,
            index_j,
            w: self.w.iter().copied().collect(),
            value: self.value,
        }
    }
}

fn subset_from_mask(mask: u32, d: usize) -> Vec<usize> {
    (0..d).filter(|i| mask & (1 << i) != 0).collect()
}

/// Deterministic preference among (near) optimal candidates: lower value,
/// then smaller cardinality, then lexicographically smaller index set.
fn prefer(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let scale = a.value.abs().max(b.value.abs()).max(f64::MIN_POSITIVE);
    if (a.value - b.value).abs() > FEAS_TOL * scale {
        return a.value.partial_cmp(&b.value).unwrap_or(Ordering::Equal);
    }
    a.idx.len().cmp(&b.idx.len()).then_with(|| a.idx.cmp(&b.idx))
}

/// Exhaustive enumeration of all `2^d - 1` candidate active sets.
pub fn brute_force_pi_sigma(sigma: &SymmetricPd, b: &DVector<f64>) -> Result<QpSolution, QpError> {
    check_inputs(sigma, b)?;
    let d = sigma.dim();
    if d > BRUTE_FORCE_MAX_DIM {
        return Err(QpError::TooLarge { d, max: BRUTE_FORCE_MAX_DIM });
    }
    let mut best: Option<Candidate> = None;
    for mask in 1u32..(1u32 << d) {
        let idx = subset_from_mask(mask, d);
        let Some(c) = candidate(sigma, b, &idx) else {
            continue;
        };
        if !c.is_feasible(b) {
            continue;
        }
        best = match best {
            Some(cur) if prefer(&cur, &c).is_le() => Some(cur),
            _ => Some(c),
        };
    }
    best.map(|c| c.into_solution(d)).ok_or(QpError::Infeasible)
}

/// Solves the quadratic program and returns the canonical active set.
pub fn solve_pi_sigma(sigma: &SymmetricPd, b: &DVector<f64>) -> Result<QpSolution, QpError> {
    check_inputs(sigma, b)?;
    let d = sigma.dim();
    if let Some(sol) = active_set(sigma, b) {
        return Ok(sol);
    }
    if d > ENUMERATION_MAX_DIM {
        return Err(QpError::Infeasible);
    }
    enumerate_by_value(sigma, b)
}

/// Lawson–Hanson iteration on the dual non-negative QP.
fn active_set(sigma: &SymmetricPd, b: &DVector<f64>) -> Option<QpSolution> {
    let d = sigma.dim();
    let s = sigma.matrix();
    let tol_grad = 1e-12 * max_abs(b) * (1.0 + max_abs_entry(s));
    let mut passive = vec![false; d];
    let mut lambda = DVector::<f64>::zeros(d);

    for _outer in 0..(4 * d + 8) {
        let grad = s * &lambda - b;
        let entering = (0..d).filter(|&i| !passive[i]).min_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        match entering {
            Some(i) if grad[i] < -tol_grad => passive[i] = true,
            _ => break,
        }
        for _inner in 0..(2 * d + 4) {
            let idx: Vec<usize> = (0..d).filter(|&i| passive[i]).collect();
            let sub = sigma.principal(&idx).ok()?;
            let z = sub.solve(&subvector(b, &idx));
            if z.iter().all(|&x| x > 0.0) {
                lambda.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    lambda[i] = z[k];
                }
                break;
            }
            // Step towards z until the first passive coordinate hits zero.
            let mut step = 1.0_f64;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = lambda[i] - z[k];
                    if denom > 0.0 {
                        step = step.min(lambda[i] / denom);
                    }
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                lambda[i] += step * (z[k] - lambda[i]);
                if lambda[i] <= 1e-15 * max_abs(&lambda).max(f64::MIN_POSITIVE) {
                    lambda[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }

    // Re-derive the solution from the support with exact sub-solves and drop
    // coordinates whose multiplier is numerically zero.
    let mut idx: Vec<usize> = (0..d).filter(|&i| lambda[i] > 0.0).collect();
    loop {
        if idx.is_empty() {
            return None;
        }
        let c = candidate(sigma, b, &idx)?;
        let tol_w = FEAS_TOL * max_abs(&c.w);
        let weak: Vec<usize> = idx.iter().copied().filter(|&i| c.w[i] <= tol_w).collect();
        if weak.is_empty() {
            return c.is_feasible(b).then(|| c.into_solution(d));
        }
        idx.retain(|i| !weak.contains(i));
    }
}

/// Enumeration of candidates in increasing order of their value; the first
/// one meeting the optimality conditions is the solution.
fn enumerate_by_value(sigma: &SymmetricPd, b: &DVector<f64>) -> Result<QpSolution, QpError> {
    let d = sigma.dim();
    let mut all: Vec<Candidate> =
        (1u32..(1u32 << d)).filter_map(|mask| candidate(sigma, b, &subset_from_mask(mask, d))).collect();
    all.sort_by(prefer);
    all.into_iter().find(|c| c.is_feasible(b)).map(|c| c.into_solution(d)).ok_or(QpError::Infeasible)
}

/// Residuals of the optimality identities satisfied by a solution.
///
/// Every field is relative: quantities in units of `b` are divided by
/// `max|b|`, quantities in units of `w` by `max|w|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    /// `|(w^T b)^2 / (w^T Σ w) - value| / value`.
    pub dual_gap: f64,
    /// `max_j (b_j - b̃_j)^+`.
    pub primal_infeasibility: f64,
    /// `max_{i in I} |b̃_i - b_i|`.
    pub active_mismatch: f64,
    /// `max(max_{i in I} (-w_i)^+, max_{j in J} |w_j|)`.
    pub dual_infeasibility: f64,
    /// `max |Σ w - b̃|`.
    pub stationarity: f64,
    /// `max_i |w_i (b̃_i - b_i)|`.
    pub complementarity: f64,
    /// `|b_I^T w_I - value| / value`.
    pub value_mismatch: f64,
}

impl CertificateReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.dual_gap,
            self.primal_infeasibility,
            self.active_mismatch,
            self.dual_infeasibility,
            self.stationarity,
            self.complementarity,
            self.value_mismatch,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn dual_certificate(sol: &QpSolution, sigma: &SymmetricPd, b: &DVector<f64>) -> CertificateReport {
    let w = sol.w_vec();
    let bt = sol.b_tilde_vec();
    let s = sigma.matrix();
    let bscale = max_abs(b).max(f64::MIN_POSITIVE);
    let wscale = max_abs(&w).max(f64::MIN_POSITIVE);
    let value = sol.value.abs().max(f64::MIN_POSITIVE);

    let wb = w.dot(b);
    let wsw = w.dot(&(s * &w));
    let dual_gap = if wsw > 0.0 { ((wb * wb / wsw) - sol.value).abs() / value } else { f64::INFINITY };
    let primal_infeasibility = (0..b.len()).map(|i| (b[i] - bt[i]).max(0.0)).fold(0.0, f64::max) / bscale;
    let active_mismatch = sol.index_i.iter().map(|&i| (bt[i] - b[i]).abs()).fold(0.0, f64::max) / bscale;
    let dual_infeasibility = sol
        .index_i
        .iter()
        .map(|&i| (-w[i]).max(0.0))
        .chain(sol.index_j.iter().map(|&j| w[j].abs()))
        .fold(0.0, f64::max)
        / wscale;
    let stationarity = max_abs(&(s * &w - &bt)) / bscale;
    let complementarity = (0..b.len()).map(|i| (w[i] * (bt[i] - b[i])).abs()).fold(0.0, f64::max) / (wscale * bscale);
    let b_i = subvector(b, &sol.index_i);
    let w_i = subvector(&w, &sol.index_i);
    let value_mismatch = (b_i.dot(&w_i) - sol.value).abs() / value;

    CertificateReport {
        dual_gap,
        primal_infeasibility,
        active_mismatch,
        dual_infeasibility,
        stationarity,
        complementarity,
        value_mismatch,
    }
}
