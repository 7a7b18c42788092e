//! Orthant tails of multivariate normals and path exceedance probabilities.

use crate::constants::{EstimateWithError, LadderPoint};
use crate::linalg::{log_sum_exp, mean_stderr, submatrix, trimmed_mean};
use crate::models::{CovarianceModel, ModelError, ARGMAX_TIE_TOL};
use crate::qp::{solve_pi_sigma, QpError, QpSolution, SymmetricPd};
use crate::rng::{replicate_rng, streams};
use crate::simulate::{build_grid_cov, factor_psd, map_paths, GridSpec, JitterPolicy, SimError};
use crate::special::{norm_inv_cdf, norm_sf};
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of random shifts of the lattice rule.
pub const QMC_SHIFTS: usize = 64;
/// Below this effective sample size an importance-sampled estimate carries a
/// warning.
pub const MIN_ESS: f64 = 100.0;
/// Mixture components whose weight is this far (in log) below the largest
/// are dropped.
const MIXTURE_LOG_CUTOFF: f64 = 40.0;
/// Lattice points used for the `|L| ≥ 2` orthant factor in the asymptotic
/// formula.
const ASYMPTOTIC_QMC_POINTS: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum TailError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bound regime not entered: u = {u} ≤ μ̂ = {mu}")]
    BoundRegime { u: f64, mu: f64 },
    #[error("no grid point has a non-singular Σ(t)")]
    NoRegularPoint,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn check_threshold(b: &DVector<f64>, u: f64, d: usize) -> Result<(), TailError> {
    if b.len() != d {
        return Err(TailError::InvalidArgument(format!("b has length {}, expected {d}", b.len())));
    }
    if b.iter().any(|x| !x.is_finite()) || !u.is_finite() || u < 0.0 {
        return Err(TailError::InvalidArgument("b must be finite and u ≥ 0".into()));
    }
    Ok(())
}

const PRIMES: [u32; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

/// `P(X > a)` for `X ~ N(0, Σ)`, by sequential conditioning and a randomly
/// shifted Richtmyer lattice with the baker's transform. Returns the mean
/// over shifts and its standard error.
pub fn orthant_probability(sigma: &SymmetricPd, a: &DVector<f64>, n_points: usize, seed: u64) -> (f64, f64) {
    let d = sigma.dim();
    let s = sigma.matrix();
    let mut order: Vec<usize> = (0..d).collect();
    let key = |i: usize| a[i] / s[(i, i)].sqrt();
    order.sort_by(|&i, &j| key(j).total_cmp(&key(i)).then(i.cmp(&j)));
    let perm = submatrix(s, &order, &order);
    let l = perm.cholesky().map(|c| c.l()).unwrap_or_else(|| sigma.cholesky_l());
    let ap: Vec<f64> = order.iter().map(|&i| a[i]).collect();
    if d == 1 {
        return (norm_sf(ap[0] / l[(0, 0)]), 0.0);
    }
    let dims = d - 1;
    let alpha: Vec<f64> = PRIMES
        .iter()
        .cycle()
        .take(dims)
        .enumerate()
        .map(|(k, &p)| {
            // Beyond 24 dimensions reuse primes with an offset; the tails never
            // go near that.
            let r = (p as f64).sqrt() * (1 + k / PRIMES.len()) as f64;
            r.fract()
        })
        .collect();
    let n = n_points.div_ceil(QMC_SHIFTS).max(1);
    let integrand = |x: &[f64]| -> f64 {
        let mut y = vec![0.0; d];
        let mut f = 1.0;
        for i in 0..d {
            let mut c = ap[i];
            for j in 0..i {
                c -= l[(i, j)] * y[j];
            }
            c /= l[(i, i)];
            let e = norm_sf(c);
            f *= e;
            if f == 0.0 {
                return 0.0;
            }
            if i < dims {
                let w = (x[i] * e).clamp(f64::MIN_POSITIVE, e);
                y[i] = -norm_inv_cdf(w);
            }
        }
        f
    };
    let shift_means: Vec<f64> = (0..QMC_SHIFTS)
        .map(|q| {
            let mut rng = replicate_rng(seed, streams::MVN_SHIFTS, q as u64);
            let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
            let mut x = vec![0.0; dims];
            let mut acc = crate::linalg::CompensatedSum::default();
            for k in 1..=n {
                for j in 0..dims {
                    let v = (k as f64 * alpha[j] + shift[j]).fract();
                    x[j] = 1.0 - (2.0 * v - 1.0).abs();
                }
                acc.add(integrand(&x));
            }
            acc.value() / n as f64
        })
        .collect();
    mean_stderr(&shift_means)
}

/// `P(X > u b)` for `X ~ N(0, Σ)`.
pub fn mvn_tail(
    sigma: &SymmetricPd,
    b: &DVector<f64>,
    u: f64,
    n_points: usize,
    seed: u64,
) -> Result<EstimateWithError, TailError> {
    check_threshold(b, u, sigma.dim())?;
    let (value, stderr) = orthant_probability(sigma, &(b * u), n_points, seed);
    Ok(EstimateWithError {
        value,
        stderr,
        replicates: n_points.div_ceil(QMC_SHIFTS).max(1) * QMC_SHIFTS,
        seed,
        ladder: vec![],
        trimmed_mean: None,
        extrapolated: None,
        extrapolated_stderr: None,
        converged: None,
        diagnostics: vec![],
    })
}

/// Leading term of `P(X > u b)` as `u → ∞`:
/// `u^{−|I|} φ_Σ(u b̃) (∏_{i∈I} w_i)⁻¹ ∫ e^{−½ x_Jᵀ (Σ⁻¹)_{JJ} x_J} 1{x_L < 0} dx_J`.
pub fn mvn_tail_asymptotic(sigma: &SymmetricPd, b: &DVector<f64>, u: f64) -> Result<f64, TailError> {
    check_threshold(b, u, sigma.dim())?;
    if u <= 0.0 {
        return Err(TailError::InvalidArgument("asymptotic form needs u > 0".into()));
    }
    let qp = solve_pi_sigma(sigma, b)?;
    Ok(asymptotic_with(sigma, b, u, &qp))
}

fn asymptotic_with(sigma: &SymmetricPd, b: &DVector<f64>, u: f64, qp: &QpSolution) -> f64 {
    let d = sigma.dim() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let m = qp.index_i.len() as f64;
    let mut ln = -0.5 * d * ln_2pi - 0.5 * sigma.ln_det() - 0.5 * u * u * qp.value - m * u.ln();
    ln -= qp.index_i.iter().map(|&i| qp.w[i].ln()).sum::<f64>();
    let j = &qp.index_j;
    let mut factor = 1.0;
    if !j.is_empty() {
        let p = submatrix(&sigma.inverse(), j, j);
        let p_pd = SymmetricPd::new(crate::linalg::symmetrize(&p)).expect("principal block of an SPD inverse");
        ln += 0.5 * j.len() as f64 * ln_2pi - 0.5 * p_pd.ln_det();
        let l_set = qp.index_l(b);
        factor = match l_set.len() {
            0 => 1.0,
            1 => 0.5,
            _ => {
                let pos: Vec<usize> = l_set.iter().map(|x| j.iter().position(|y| y == x).expect("L ⊂ J")).collect();
                let cov = submatrix(&p_pd.inverse(), &pos, &pos);
                let cov = SymmetricPd::new(crate::linalg::symmetrize(&cov)).expect("principal block of an SPD matrix");
                orthant_probability(&cov, &DVector::zeros(pos.len()), ASYMPTOTIC_QMC_POINTS, 0).0
            }
        };
    }
    ln.exp() * factor
}

/// Sampling strategy for [`exceedance_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    Plain,
    /// Mixture over grid points of the exponential tilts toward each
    /// point's most likely exceedance.
    #[default]
    Mixture,
    /// The single tilt at the grid argmax of `σ²_b`.
    SinglePoint,
}

impl std::fmt::Display for TailMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TailMode::Plain => "plain",
            TailMode::Mixture => "mixture",
            TailMode::SinglePoint => "single_point",
        })
    }
}

/// Input of the exceedance estimators: `P(∃t ∈ grid: X(t) > u b)`.
#[derive(Debug, Clone)]
pub struct TailQuery {
    pub model: CovarianceModel,
    pub b: DVector<f64>,
    pub u: f64,
    pub grid: GridSpec,
}

impl TailQuery {
    pub fn new(model: CovarianceModel, b: DVector<f64>, u: f64, grid: GridSpec) -> Result<Self, TailError> {
        check_threshold(&b, u, model.dim())?;
        if !b.iter().any(|&x| x > 0.0) {
            return Err(QpError::NoPositiveComponent.into());
        }
        if grid.dim() != model.dim() {
            return Err(TailError::InvalidArgument("grid dimension differs from the model".into()));
        }
        grid.check_within(0.0, model.horizon())?;
        Ok(Self { model, b, u, grid })
    }

    /// Uniform grid of `n` points on `[0, T]`.
    pub fn uniform(model: CovarianceModel, b: DVector<f64>, u: f64, n: usize) -> Result<Self, TailError> {
        let grid = GridSpec::uniform(0.0, model.horizon(), n, model.dim())?;
        Self::new(model, b, u, grid)
    }

    fn with_u(&self, u: f64) -> Self {
        Self { u, ..self.clone() }
    }

    /// QP at every grid point with non-singular `Σ(t)`.
    fn point_solutions(&self) -> Result<Vec<Option<(SymmetricPd, QpSolution)>>, TailError> {
        let mut out = Vec::with_capacity(self.grid.len());
        for &t in self.grid.times() {
            let s = crate::linalg::symmetrize(&self.model.sigma_at(t)?);
            out.push(match SymmetricPd::new(s) {
                Ok(pd) => {
                    let qp = solve_pi_sigma(&pd, &self.b)?;
                    Some((pd, qp))
                }
                Err(QpError::NotPositiveDefinite) => None,
                Err(e) => return Err(e.into()),
            });
        }
        Ok(out)
    }

    /// Grid argmax of `σ²_b`, ties toward the larger `t`.
    pub fn t_star_index(&self) -> Result<usize, TailError> {
        let sols = self.point_solutions()?;
        argmax_index(&sols)
    }

    /// `sup_t σ²_b(t)` over the grid.
    pub fn sup_sigma_b_sq(&self) -> Result<f64, TailError> {
        let sols = self.point_solutions()?;
        let k = argmax_index(&sols)?;
        Ok(1.0 / sols[k].as_ref().expect("argmax is regular").1.value)
    }
}

fn argmax_index(sols: &[Option<(SymmetricPd, QpSolution)>]) -> Result<usize, TailError> {
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in sols.iter().enumerate() {
        if let Some((_, qp)) = s {
            let v = 1.0 / qp.value;
            match best {
                Some((_, bv)) if v < bv * (1.0 - ARGMAX_TIE_TOL) => {}
                _ => best = Some((k, v)),
            }
        }
    }
    best.map(|(k, _)| k).ok_or(TailError::NoRegularPoint)
}

/// Exceedance estimate with sampler diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TailEstimate {
    pub estimate: EstimateWithError,
    pub u: f64,
    pub mode: TailMode,
    pub grid_n: usize,
    /// Kish effective sample size of the non-zero contributions.
    pub ess: f64,
    pub t_star: f64,
}

struct Component {
    /// Grid index.
    k: usize,
    ln_pi: f64,
    /// `θ_k = u w_k`, with `w_k = Σ(t_k)⁻¹ b̃_k`.
    theta: Vec<f64>,
    /// `½ θ_kᵀ Σ(t_k) θ_k`.
    half_quad: f64,
    shift: Vec<f64>,
}

/// `P(∃k: X(t_k) > u b)` on the query grid.
pub fn exceedance_mc(q: &TailQuery, n_paths: usize, seed: u64, mode: TailMode) -> Result<TailEstimate, TailError> {
    if n_paths == 0 {
        return Err(TailError::InvalidArgument("need at least one replicate".into()));
    }
    let d = q.grid.dim();
    let n = q.grid.len();
    let cov = build_grid_cov(&q.model, &q.grid)?;
    let factor = factor_psd(&cov, JitterPolicy::default())?;
    let sols = q.point_solutions()?;
    let k_star = argmax_index(&sols)?;
    let t_star = q.grid.times()[k_star];
    let ub: Vec<f64> = q.b.iter().map(|x| x * q.u).collect();
    let component = |k: usize, ln_pi: f64| -> Component {
        let (_, qp) = sols[k].as_ref().expect("regular point");
        let theta: Vec<f64> = qp.w.iter().map(|w| q.u * w).collect();
        let half_quad = 0.5 * q.u * q.u * qp.value;
        let shift = (0..n * d).map(|i| (0..d).map(|c| cov[(i, k * d + c)] * theta[c]).sum()).collect();
        Component { k, ln_pi, theta, half_quad, shift }
    };
    let comps: Vec<Component> = match mode {
        TailMode::Plain => vec![],
        TailMode::SinglePoint => vec![component(k_star, 0.0)],
        TailMode::Mixture => {
            let raw: Vec<(usize, f64)> = sols
                .iter()
                .enumerate()
                .filter_map(|(k, s)| s.as_ref().map(|(_, qp)| (k, -0.5 * q.u * q.u * qp.value)))
                .collect();
            let top = raw.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let kept: Vec<(usize, f64)> = raw.into_iter().filter(|x| x.1 >= top - MIXTURE_LOG_CUTOFF).collect();
            let norm = log_sum_exp(&kept.iter().map(|x| x.1).collect::<Vec<_>>());
            kept.into_iter().map(|(k, l)| component(k, l - norm)).collect()
        }
    };
    let cdf: Vec<f64> = comps
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.ln_pi.exp();
            Some(*acc)
        })
        .collect();
    let hit = |x: &[f64]| x.chunks_exact(d).any(|p| p.iter().zip(&ub).all(|(xi, bi)| xi > bi));
    let values: Vec<f64> = map_paths(&factor, n_paths, seed, streams::EXCEEDANCE, |r, y| {
        if comps.is_empty() {
            return if hit(y) { 1.0 } else { 0.0 };
        }
        let j = if comps.len() == 1 {
            0
        } else {
            let v: f64 = replicate_rng(seed, streams::MIXTURE, r as u64).random();
            cdf.partition_point(|&c| c < v * cdf[cdf.len() - 1]).min(comps.len() - 1)
        };
        let x: Vec<f64> = y.iter().zip(&comps[j].shift).map(|(a, b)| a + b).collect();
        if !hit(&x) {
            return 0.0;
        }
        let terms: Vec<f64> = comps
            .iter()
            .map(|c| {
                let xk = &x[c.k * d..(c.k + 1) * d];
                let dot: f64 = c.theta.iter().zip(xk).map(|(a, b)| a * b).sum();
                c.ln_pi + dot - c.half_quad
            })
            .collect();
        (-log_sum_exp(&terms)).exp()
    });
    let (mean, stderr) = mean_stderr(&values);
    let s1: f64 = values.iter().sum();
    let s2: f64 = values.iter().map(|v| v * v).sum();
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
    let mut diagnostics = vec![];
    if mode != TailMode::Plain && ess < MIN_ESS {
        diagnostics.push(format!("warning: effective sample size {ess:.1} below {MIN_ESS}"));
    }
    if factor.jitter() > 0.0 {
        diagnostics.push(format!("grid covariance jittered by {:e}", factor.jitter()));
    }
    let h = if n > 1 { q.grid.times()[n - 1] - q.grid.times()[n - 2] } else { 0.0 };
    let estimate = EstimateWithError {
        value: mean,
        stderr,
        replicates: n_paths,
        seed,
        ladder: vec![LadderPoint { lambda: q.model.horizon(), grid_step: h, value: mean, stderr }],
        trimmed_mean: Some(trimmed_mean(&values, crate::constants::TRIM_FRACTION)),
        extrapolated: None,
        extrapolated_stderr: None,
        converged: None,
        diagnostics,
    };
    Ok(TailEstimate { estimate, u: q.u, mode, grid_n: n, ess, t_star })
}

/// [`exceedance_mc`] over uniform grids of the given sizes on `[0, T]`. The
/// returned estimate is the finest grid's, with every grid in its ladder.
pub fn exceedance_ladder(
    model: &CovarianceModel,
    b: &DVector<f64>,
    u: f64,
    grid_sizes: &[usize],
    n_paths: usize,
    seed: u64,
    mode: TailMode,
) -> Result<TailEstimate, TailError> {
    let mut sizes = grid_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut ladder = Vec::new();
    let mut last = None;
    for &n in &sizes {
        let q = TailQuery::uniform(model.clone(), b.clone(), u, n)?;
        let e = exceedance_mc(&q, n_paths, seed, mode)?;
        ladder.extend(e.estimate.ladder.iter().copied());
        last = Some(e);
    }
    let mut out = last.ok_or_else(|| TailError::InvalidArgument("empty grid ladder".into()))?;
    out.estimate.ladder = ladder;
    Ok(out)
}

/// Exceedance estimates over several levels, sharing the seed.
pub fn exceedance_over_u(
    q: &TailQuery,
    us: &[f64],
    n_paths: usize,
    seed: u64,
    mode: TailMode,
) -> Result<Vec<TailEstimate>, TailError> {
    us.iter().map(|&u| exceedance_mc(&q.with_u(u), n_paths, seed, mode)).collect()
}

/// Direction `z = w / (wᵀ b)` at the grid argmax of `σ²_b`, so that
/// `X(t) > u b` implies `zᵀ X(t) > u`.
fn projection(q: &TailQuery) -> Result<DVector<f64>, TailError> {
    let sols = q.point_solutions()?;
    let k = argmax_index(&sols)?;
    let (_, qp) = sols[k].as_ref().expect("regular point");
    let w = qp.w_vec();
    let wb = w.dot(&q.b);
    Ok(w / wb)
}

/// Monte Carlo mean of `sup_t zᵀ X(t)` over the grid.
pub fn estimate_mu(q: &TailQuery, n_paths: usize, seed: u64) -> Result<EstimateWithError, TailError> {
    let z = projection(q)?;
    let d = q.grid.dim();
    if q.grid.len() == 1 {
        let mut e = EstimateWithError {
            value: 0.0,
            stderr: 0.0,
            replicates: 0,
            seed,
            ladder: vec![],
            trimmed_mean: None,
            extrapolated: None,
            extrapolated_stderr: None,
            converged: None,
            diagnostics: vec![],
        };
        e.diagnostics.push("single grid point: supremum of a centred variable".into());
        return Ok(e);
    }
    let cov = build_grid_cov(&q.model, &q.grid)?;
    let factor = factor_psd(&cov, JitterPolicy::default())?;
    let values = map_paths(&factor, n_paths.max(1), seed, streams::SUPREMUM, |_, y| {
        y.chunks_exact(d)
            .map(|p| p.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let (value, stderr) = mean_stderr(&values);
    Ok(EstimateWithError {
        value,
        stderr,
        replicates: values.len(),
        seed,
        ladder: vec![],
        trimmed_mean: Some(trimmed_mean(&values, crate::constants::TRIM_FRACTION)),
        extrapolated: None,
        extrapolated_stderr: None,
        converged: None,
        diagnostics: vec![],
    })
}

/// `sup_t zᵀ Σ(t) z` over the grid for the projection used by
/// [`estimate_mu`]. It is at least `sup_t σ²_b(t)`; the two agree for
/// stationary models.
pub fn sup_projection_variance(q: &TailQuery) -> Result<f64, TailError> {
    let z = projection(q)?;
    let mut best = 0.0_f64;
    for &t in q.grid.times() {
        let s = q.model.sigma_at(t)?;
        best = best.max(z.dot(&(&s * &z)));
    }
    Ok(best)
}

/// `exp(−(u − μ̂)² / (2 σ²_b))` with `σ²_b = sup_t σ²_b(t)` on the grid.
pub fn borell_tis_bound(q: &TailQuery, mu_hat: f64) -> Result<f64, TailError> {
    if !(q.u > mu_hat) {
        return Err(TailError::BoundRegime { u: q.u, mu: mu_hat });
    }
    let s2 = q.sup_sigma_b_sq()?;
    Ok(bound_from(q.u, mu_hat, s2))
}

pub fn bound_from(u: f64, mu_hat: f64, sigma_b_sq: f64) -> f64 {
    (-(u - mu_hat).powi(2) / (2.0 * sigma_b_sq)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn independent_tails_factorize() {
        let id = SymmetricPd::identity(2);
        let e = mvn_tail(&id, &v(&[1.0, 1.0]), 3.0, 4096, 1).unwrap();
        let exact = norm_sf(3.0).powi(2);
        assert!((e.value / exact - 1.0).abs() < 1e-10, "{}", e.value);
        let e = mvn_tail(&id, &v(&[1.0, -10.0]), 3.0, 4096, 1).unwrap();
        assert!((e.value / norm_sf(3.0) - 1.0).abs() < 1e-10);
        let e = mvn_tail(&id, &v(&[1.0, 1.0]), 0.0, 4096, 1).unwrap();
        assert!((e.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn correlated_orthant_matches_closed_form() {
        // P(X1 > 0, X2 > 0) = 1/4 + asin(ρ)/(2π).
        for &rho in &[-0.7, 0.3, 0.9] {
            let s = SymmetricPd::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap();
            let e = mvn_tail(&s, &v(&[1.0, 1.0]), 0.0, 8192, 2).unwrap();
            let exact = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            assert!((e.value - exact).abs() < 1e-4 + 4.0 * e.stderr, "{rho}: {} vs {exact}", e.value);
        }
        // Three equicorrelated at ρ = ½: 1/8 + 3 asin(½)/(4π) = 1/4.
        let s = SymmetricPd::new(DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.5 })).unwrap();
        let e = mvn_tail(&s, &v(&[1.0, 1.0, 1.0]), 0.0, 16384, 3).unwrap();
        assert!((e.value - 0.25).abs() < 1e-4, "{}", e.value);
    }

    #[test]
    fn asymptotic_single_active_coordinate() {
        // I = {1}: φ(u)/u, while the exact value is Φ̄(u) Φ(u).
        let id = SymmetricPd::identity(2);
        let a = mvn_tail_asymptotic(&id, &v(&[1.0, -1.0]), 6.0).unwrap();
        let phi = (-18.0_f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((a / (phi / 6.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_tied_slack_coordinate_halves() {
        // b = (1, 0): b̃ = (1, 0), J = L = {2}, factor ½ of ∫ e^{−x²/2}.
        let id = SymmetricPd::identity(2);
        let a = mvn_tail_asymptotic(&id, &v(&[1.0, 0.0]), 5.0).unwrap();
        let exact = norm_sf(5.0) * 0.5;
        assert!((a / exact - 1.0).abs() < 0.05, "{a} vs {exact}");
    }

    fn fou_query(n: usize, u: f64) -> TailQuery {
        let m = CovarianceModel::fou(DMatrix::identity(2, 2) * 0.5, 1.0).unwrap();
        TailQuery::uniform(m, v(&[1.0, 1.0]), u, n).unwrap()
    }

    #[test]
    fn modes_agree_at_zero_level() {
        let q = fou_query(5, 0.0);
        let p = exceedance_mc(&q, 4000, 1, TailMode::Plain).unwrap();
        let m = exceedance_mc(&q, 4000, 2, TailMode::Mixture).unwrap();
        let s = exceedance_mc(&q, 4000, 3, TailMode::SinglePoint).unwrap();
        for e in [&m, &s] {
            let tol = 3.0 * p.estimate.stderr.hypot(e.estimate.stderr);
            assert!((p.estimate.value - e.estimate.value).abs() < tol);
        }
    }

    #[test]
    fn single_point_grid_reduces_to_static_tail() {
        let m = CovarianceModel::fou(DMatrix::identity(2, 2) * 0.5, 1.0).unwrap();
        let q = TailQuery::new(m, v(&[1.0, 1.0]), 2.5, GridSpec::new(vec![0.5], 2).unwrap()).unwrap();
        let e = exceedance_mc(&q, 20000, 4, TailMode::Mixture).unwrap();
        let exact = norm_sf(2.5).powi(2);
        assert!((e.estimate.value - exact).abs() < 3.0 * e.estimate.stderr + 1e-12, "{} vs {exact}", e.estimate.value);
    }

    #[test]
    fn mixture_matches_plain_where_plain_is_feasible() {
        let q = fou_query(21, 1.5);
        let p = exceedance_mc(&q, 40000, 5, TailMode::Plain).unwrap();
        let m = exceedance_mc(&q, 40000, 6, TailMode::Mixture).unwrap();
        let tol = 3.0 * p.estimate.stderr.hypot(m.estimate.stderr);
        assert!((p.estimate.value - m.estimate.value).abs() < tol, "{} vs {}", p.estimate.value, m.estimate.value);
        assert!(m.estimate.stderr < p.estimate.stderr);
    }

    #[test]
    fn t_star_tie_breaks_right() {
        let q = fou_query(11, 2.0);
        assert_eq!(q.t_star_index().unwrap(), 10);
    }

    #[test]
    fn bound_rejects_small_u_and_dominates() {
        let q = fou_query(11, 3.0);
        assert!(matches!(borell_tis_bound(&q, 3.5), Err(TailError::BoundRegime { .. })));
        let mu = estimate_mu(&q, 4000, 7).unwrap();
        let b = borell_tis_bound(&q, mu.value).unwrap();
        let p = exceedance_mc(&q, 4000, 8, TailMode::Mixture).unwrap();
        assert!(p.estimate.value <= b);
        assert!((sup_projection_variance(&q).unwrap() - q.sup_sigma_b_sq().unwrap()).abs() < 1e-12);
        let single = TailQuery::new(q.model.clone(), q.b.clone(), 3.0, GridSpec::new(vec![0.2], 2).unwrap()).unwrap();
        assert_eq!(estimate_mu(&single, 10, 1).unwrap().value, 0.0);
    }
}
