//! Pickands and Piterbarg constants.
//!
//! The Monte Carlo estimators simulate the kernel process `Y` with cmf
//! `R_{α,V}` on a grid and average the per-path union integral of the points
//! `Z(t_k) = Y(t_k) − (S_α(t_k, V) + |t_k|^α W) 1`.
//!
//! Plain averaging of that integral is unusable for larger intervals: the
//! integral is roughly `exp(max 1ᵀZ)` and its variance explodes (for `α = 2`
//! it is infinite once `Λ` is moderate). The default estimator therefore
//! samples from a mixture of the path laws tilted by `exp(1ᵀY(t_j))`, which
//! bounds every per-path weight. Constants per unit length are estimated from
//! increments `𝓗([0,Λ]) − 𝓗([0,Λ/2])`, which carry no boundary term.

use crate::linalg::{is_antisymmetric, log_sum_exp, mean_stderr, trimmed_mean};
use crate::models::{check_v_star, KernelCmf};
use crate::orthant::{ln_union_integral, PointSet};
use crate::rng::{replicate_rng, streams};
use crate::simulate::{build_grid_cov, factor_psd, map_paths, GridSpec, JitterPolicy, PsdFactor, SimError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ladders, overridable everywhere.
pub const DEFAULT_LAMBDAS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_STEPS: [f64; 3] = [0.05, 0.02, 0.01];
pub const DEFAULT_REPLICATES: usize = 100_000;
/// Fraction trimmed (half from each end) in the diagnostic trimmed mean.
pub const TRIM_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ConstError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite per-path integral (variance blow-up)")]
    NonFinite,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderPoint {
    pub lambda: f64,
    pub grid_step: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Values behind the estimate, e.g. over `Λ` or grid step.
    pub ladder: Vec<LadderPoint>,
    /// 10%-trimmed mean of the per-path values; a heavy-tail diagnostic only.
    pub trimmed_mean: Option<f64>,
    /// Richardson extrapolation to grid step zero, when a grid ladder was run.
    pub extrapolated: Option<f64>,
    pub extrapolated_stderr: Option<f64>,
    /// `None` when no convergence criterion applies.
    pub converged: Option<bool>,
    pub diagnostics: Vec<String>,
}

impl EstimateWithError {
    fn exact(value: f64, seed: u64) -> Self {
        Self {
            value,
            stderr: 0.0,
            replicates: 0,
            seed,
            ladder: vec![],
            trimmed_mean: Some(value),
            extrapolated: None,
            extrapolated_stderr: None,
            converged: None,
            diagnostics: vec![],
        }
    }

    fn from_samples(values: &[f64], offset: f64, seed: u64) -> Result<Self, ConstError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ConstError::NonFinite);
        }
        let (mean, se) = mean_stderr(values);
        Ok(Self {
            value: offset + mean,
            stderr: se,
            replicates: values.len(),
            seed,
            ladder: vec![],
            trimmed_mean: Some(offset + trimmed_mean(values, TRIM_FRACTION)),
            extrapolated: None,
            extrapolated_stderr: None,
            converged: None,
            diagnostics: vec![],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Importance sampling from a mixture of tilted path laws.
    #[default]
    Mixture,
    /// Plain average of the per-path union integral.
    Direct,
}

/// Time set over which the supremum is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    /// `[0, Λ]`.
    #[default]
    Right,
    /// `[−Λ, Λ]`.
    TwoSided,
    /// `[−Λ, 0]`.
    Left,
}

/// Validated kernel data: `α`, `V` and an optional drift matrix `W`.
#[derive(Debug, Clone)]
pub struct Kernel {
    alpha: f64,
    v: DMatrix<f64>,
    w: Option<DMatrix<f64>>,
}

impl Kernel {
    pub fn new(alpha: f64, v: DMatrix<f64>, w: Option<DMatrix<f64>>) -> Result<Self, ConstError> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(ConstError::InvalidKernel(format!("alpha = {alpha} outside (0, 2]")));
        }
        if !v.is_square() || v.iter().any(|x| !x.is_finite()) {
            return Err(ConstError::InvalidKernel("V must be a finite square matrix".into()));
        }
        if let Some(w) = &w {
            if w.shape() != v.shape() || w.iter().any(|x| !x.is_finite()) {
                return Err(ConstError::InvalidKernel("W must be finite and shaped like V".into()));
            }
        }
        let chk = check_v_star(alpha, &v);
        if !chk.valid {
            return Err(ConstError::InvalidKernel(format!("V* has negative eigenvalue {:e}", chk.min_eigenvalue)));
        }
        Ok(Self { alpha, v, w })
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    /// `(S_α(t, V) + |t|^α W) 1`.
    fn drift(&self, t: f64) -> DVector<f64> {
        let d = self.dim();
        let ones = DVector::from_element(d, 1.0);
        let base = if t >= 0.0 { &self.v * &ones } else { self.v.transpose() * &ones };
        let mut out = base * t.abs().powf(self.alpha);
        if let Some(w) = &self.w {
            out += w * &ones * t.abs().powf(self.alpha);
        }
        out
    }

    /// `1ᵀ W 1`, zero without drift matrix.
    fn w_total(&self) -> f64 {
        self.w.as_ref().map_or(0.0, |w| w.sum())
    }
}

/// Simulation set-up shared by the estimators.
struct KernelGrid {
    d: usize,
    times: Vec<f64>,
    factor: PsdFactor,
    cov: DMatrix<f64>,
    /// Stacked drift `(S_α(t_k, V) + |t_k|^α W) 1`.
    drift: Vec<f64>,
}

impl KernelGrid {
    fn new(kernel: &Kernel, times: Vec<f64>) -> Result<Self, ConstError> {
        let d = kernel.dim();
        let grid = GridSpec::new(times.clone(), d)?;
        let cmf = KernelCmf { alpha: kernel.alpha, v: kernel.v.clone() };
        let cov = build_grid_cov(&cmf, &grid)?;
        let factor = factor_psd(&cov, JitterPolicy::default())?;
        let mut drift = Vec::with_capacity(times.len() * d);
        for &t in &times {
            drift.extend(kernel.drift(t).iter());
        }
        Ok(Self { d, times, factor, cov, drift })
    }

    fn n(&self) -> usize {
        self.times.len()
    }

    /// `R(·, t_j) 1`, stacked.
    fn tilt_shift(&self, j: usize) -> Vec<f64> {
        let d = self.d;
        (0..self.cov.nrows()).map(|i| (0..d).map(|c| self.cov[(i, j * d + c)]).sum()).collect()
    }

    fn z_from(&self, y: &[f64], shift: Option<&[f64]>) -> Vec<f64> {
        match shift {
            Some(s) => y.iter().zip(s).zip(&self.drift).map(|((y, s), m)| y + s - m).collect(),
            None => y.iter().zip(&self.drift).map(|(y, m)| y - m).collect(),
        }
    }

    fn row_sums(&self, z: &[f64]) -> Vec<f64> {
        z.chunks_exact(self.d).map(|c| c.iter().sum()).collect()
    }
}

fn ln_union(z: &[f64], d: usize) -> f64 {
    if d == 1 {
        return z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let ps = PointSet::from_flat(d, z.to_vec()).expect("finite path values");
    ln_union_integral(&ps).ln_value
}

fn interval_times(lambda: f64, h: f64, mode: IntervalMode) -> Result<Vec<f64>, ConstError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ConstError::InvalidArgument(format!("grid step must be positive, got {h}")));
    }
    let k = (lambda / h).round() as i64;
    let range: Vec<i64> = match mode {
        IntervalMode::Right => (0..=k).collect(),
        IntervalMode::TwoSided => (-k..=k).collect(),
        IntervalMode::Left => (-k..=0).collect(),
    };
    Ok(range.into_iter().map(|i| i as f64 * h).collect())
}

fn check_lambda(lambda: f64) -> Result<(), ConstError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ConstError::InvalidArgument(format!("Λ must be non-negative, got {lambda}")));
    }
    Ok(())
}

/// Per-path mixture importance-sampling values `(F_p − 1) / Σ_k π_k L_k`
/// for every prefix length `p` of the grid, where `F_p` is the union
/// integral over the first `p` grid points. The grid must contain `t = 0`
/// so that `F_p ≥ 1` whenever the prefix holds it.
fn mixture_values(
    kernel: &Kernel,
    grid: &KernelGrid,
    n_paths: usize,
    seed: u64,
    stream: u64,
    prefixes: &[usize],
) -> Vec<Vec<f64>> {
    let d = grid.d;
    // Components weighted by the expected size of e^{1ᵀZ(t)}, which is
    // e^{−|t|^α 1ᵀW1}; uniform without a drift matrix.
    let wt = kernel.w_total().max(0.0);
    let ln_pi_raw: Vec<f64> = grid.times.iter().map(|t| -t.abs().powf(kernel.alpha) * wt).collect();
    let ln_norm = log_sum_exp(&ln_pi_raw);
    let ln_pi: Vec<f64> = ln_pi_raw.iter().map(|x| x - ln_norm).collect();
    let cdf: Vec<f64> = ln_pi
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x.exp();
            Some(*acc)
        })
        .collect();
    let shifts: Vec<Vec<f64>> = (0..grid.n()).map(|j| grid.tilt_shift(j)).collect();
    let ln_w_drift: Vec<f64> = grid.times.iter().map(|t| t.abs().powf(kernel.alpha) * kernel.w_total()).collect();
    map_paths(&grid.factor, n_paths, seed, stream, |r, y| {
        let u: f64 = replicate_rng(seed, streams::MIXTURE, r as u64).random();
        let j = cdf.partition_point(|&c| c < u * cdf[cdf.len() - 1]).min(grid.n() - 1);
        let z = grid.z_from(y, Some(&shifts[j]));
        let sums = grid.row_sums(&z);
        let terms: Vec<f64> = (0..grid.n()).map(|k| ln_pi[k] + sums[k] + ln_w_drift[k]).collect();
        let ln_s = log_sum_exp(&terms);
        prefixes.iter().map(|&p| (ln_union(&z[..p * d], d) - ln_s).exp() - (-ln_s).exp()).collect()
    })
}

/// `∫ e^{1ᵀx} P(∃t ∈ E: Z(t) > x) dx` over the grid version of the interval.
pub fn interval_constant(
    kernel: &Kernel,
    lambda: f64,
    h: f64,
    mode: IntervalMode,
    n_paths: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<EstimateWithError, ConstError> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Ok(EstimateWithError::exact(1.0, seed));
    }
    if n_paths == 0 {
        return Err(ConstError::InvalidArgument("need at least one replicate".into()));
    }
    let grid = KernelGrid::new(kernel, interval_times(lambda, h, mode)?)?;
    let d = grid.d;
    let stream = if kernel.w.is_some() { streams::PITERBARG } else { streams::PICKANDS };
    let (values, offset): (Vec<f64>, f64) = match estimator {
        Estimator::Direct => (
            map_paths(&grid.factor, n_paths, seed, stream, |_, y| {
                let z = grid.z_from(y, None);
                ln_union(&z, d).exp()
            }),
            0.0,
        ),
        Estimator::Mixture => {
            let all = mixture_values(kernel, &grid, n_paths, seed, stream, &[grid.n()]);
            (all.into_iter().map(|v| v[0]).collect(), 1.0)
        }
    };
    let mut est = EstimateWithError::from_samples(&values, offset, seed)?;
    est.ladder.push(LadderPoint { lambda, grid_step: h, value: est.value, stderr: est.stderr });
    Ok(est)
}

/// `𝓗_{α,V}([0, Λ])` on the grid `{0, h, ..., Λ}`.
pub fn pickands_on_interval(
    alpha: f64,
    v: &DMatrix<f64>,
    lambda: f64,
    h: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EstimateWithError, ConstError> {
    let kernel = Kernel::new(alpha, v.clone(), None)?;
    interval_constant(&kernel, lambda, h, IntervalMode::Right, n_paths, seed, Estimator::Mixture)
}

/// Per-unit estimate of `𝓗_{α,V}` at scale `Λ`:
/// `(𝓗([0,Λ]) − 𝓗([0,Λ/2])) / (Λ/2)`.
///
/// Both interval values come from the same paths, the shorter one from the
/// grid prefix, so the difference is positive path by path. The difference
/// cancels the boundary constant in `𝓗([0,Λ]) ≈ 𝓗Λ + c`, which otherwise
/// dominates the bias of `𝓗([0,Λ])/Λ` (about `+2/Λ` for `α = 1`).
pub fn pickands_per_unit(
    alpha: f64,
    v: &DMatrix<f64>,
    lambda: f64,
    h: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EstimateWithError, ConstError> {
    let kernel = Kernel::new(alpha, v.clone(), None)?;
    check_lambda(lambda)?;
    if n_paths == 0 {
        return Err(ConstError::InvalidArgument("need at least one replicate".into()));
    }
    let times = interval_times(lambda, h, IntervalMode::Right)?;
    let n = times.len();
    let half = (n - 1) / 2 + 1;
    if n < 3 {
        return Err(ConstError::InvalidArgument(format!("Λ = {lambda} spans fewer than two grid steps of {h}")));
    }
    let width = (half - 1) as f64 * h;
    let width_full = (n - 1) as f64 * h;
    let grid = KernelGrid::new(&kernel, times)?;
    let vals = mixture_values(&kernel, &grid, n_paths, seed, streams::PICKANDS, &[half, n]);
    let diffs: Vec<f64> = vals.iter().map(|v| (v[1] - v[0]) / (width_full - width)).collect();
    let mut est = EstimateWithError::from_samples(&diffs, 0.0, seed)?;
    est.ladder.push(LadderPoint { lambda, grid_step: h, value: est.value, stderr: est.stderr });
    Ok(est)
}

/// Richardson extrapolation to `h → 0` assuming error `∝ h^p`, from the two
/// finest steps. Returns `(value, stderr)`.
pub fn richardson(coarse: (f64, f64, f64), fine: (f64, f64, f64), p: f64) -> (f64, f64) {
    let (h1, v1, s1) = coarse;
    let (h2, v2, s2) = fine;
    let (a, b) = (h1.powf(p), h2.powf(p));
    let value = (v2 * a - v1 * b) / (a - b);
    let se = ((a * s2).powi(2) + (b * s1).powi(2)).sqrt() / (a - b);
    (value, se)
}

/// `𝓗_{α,V} = lim 𝓗([0,Λ])/Λ`.
///
/// The ladder holds the interval values per unit length `𝓗([0,Λ])/Λ` for
/// every `(Λ, h)`, whose weak decrease in `Λ` is the convergence diagnostic.
/// The returned value is the increment estimate at the largest `Λ` and finest
/// `h`, with a Richardson extrapolation in `h` (error `∝ h^{α/2}`) attached.
pub fn pickands_limit(
    alpha: f64,
    v: &DMatrix<f64>,
    lambdas: &[f64],
    steps: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<EstimateWithError, ConstError> {
    if lambdas.is_empty() || steps.is_empty() {
        return Err(ConstError::InvalidArgument("ladders must be non-empty".into()));
    }
    let mut steps = steps.to_vec();
    steps.sort_by(|a, b| b.total_cmp(a));
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| a.total_cmp(b));
    let lam_max = *lambdas.last().expect("non-empty");
    let mut ladder = Vec::new();
    let mut diagnostics = Vec::new();
    let mut monotone = true;
    for &h in &steps {
        let mut prev: Option<LadderPoint> = None;
        for &lam in &lambdas {
            let e = pickands_on_interval(alpha, v, lam, h, n_paths, seed)?;
            let p = LadderPoint { lambda: lam, grid_step: h, value: e.value / lam, stderr: e.stderr / lam };
            if let Some(q) = prev {
                let tol = 2.0 * (p.stderr.powi(2) + q.stderr.powi(2)).sqrt();
                if p.value > q.value + tol {
                    monotone = false;
                    diagnostics.push(format!(
                        "per-unit value rises from {:.5} (Λ = {}) to {:.5} (Λ = {}) at h = {h}",
                        q.value, q.lambda, p.value, p.lambda
                    ));
                }
            }
            ladder.push(p);
            prev = Some(p);
        }
    }
    let mut slopes = Vec::new();
    for &h in &steps {
        let e = pickands_per_unit(alpha, v, lam_max, h, n_paths, seed)?;
        slopes.push((h, e));
    }
    let (h_fine, best) = slopes.last().expect("non-empty").clone();
    let mut out = best;
    out.ladder = ladder;
    for (h, e) in &slopes {
        diagnostics.push(format!("increment estimate at Λ = {lam_max}, h = {h}: {:.6} ± {:.6}", e.value, e.stderr));
    }
    if slopes.len() >= 2 {
        let (hc, ec) = &slopes[slopes.len() - 2];
        let (x, se) = richardson((*hc, ec.value, ec.stderr), (h_fine, out.value, out.stderr), alpha / 2.0);
        out.extrapolated = Some(x);
        out.extrapolated_stderr = Some(se);
    }
    out.converged = Some(monotone);
    if !monotone {
        diagnostics.push("convergence failure: per-unit ladder not decreasing within 2 stderr".into());
    }
    out.diagnostics = diagnostics;
    Ok(out)
}

/// `𝒫_{α,V,W}` over a ladder of `Λ`. The plateau criterion, successive
/// values within one combined standard error, is this crate's own.
#[allow(clippy::too_many_arguments)]
pub fn piterbarg_estimate(
    alpha: f64,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mode: IntervalMode,
    lambdas: &[f64],
    h: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EstimateWithError, ConstError> {
    let kernel = Kernel::new(alpha, v.clone(), Some(w.clone()))?;
    if lambdas.is_empty() {
        return Err(ConstError::InvalidArgument("Λ ladder must be non-empty".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| a.total_cmp(b));
    let mut ladder = Vec::new();
    let mut last = None;
    for &lam in &lambdas {
        let e = interval_constant(&kernel, lam, h, mode, n_paths, seed, Estimator::Mixture)?;
        ladder.push(LadderPoint { lambda: lam, grid_step: h, value: e.value, stderr: e.stderr });
        last = Some(e);
    }
    let mut out = last.expect("non-empty ladder");
    let plateau = ladder.windows(2).last().map(|p| {
        let tol = (p[0].stderr.powi(2) + p[1].stderr.powi(2)).sqrt();
        (p[1].value - p[0].value).abs() <= tol.max(1e-12 * p[1].value.abs())
    });
    out.converged = Some(plateau.unwrap_or(false));
    if out.converged == Some(false) {
        out.diagnostics.push("convergence failure: no plateau by the largest Λ (criterion: successive values within one combined stderr)".into());
    } else {
        out.diagnostics.push("plateau reached (criterion: successive values within one combined stderr)".into());
    }
    out.ladder = ladder;
    Ok(out)
}

/// `Σ_i w_i |(Vw)_i| / 2` for antisymmetric `V`.
pub fn skew_constant(w: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64, ConstError> {
    if !v.is_square() || v.nrows() != w.len() {
        return Err(ConstError::InvalidArgument("dimension mismatch".into()));
    }
    if !is_antisymmetric(v, 1e-12) {
        return Err(ConstError::InvalidArgument("V must be antisymmetric".into()));
    }
    let vw = v * w;
    Ok(w.iter().zip(vw.iter()).map(|(wi, x)| wi * x.abs()).sum::<f64>() / 2.0)
}

/// `C_w = 1 + τ_w⁻¹ Σ_{i∈I} w_i max(0, −(Ξ Aᵀ w)_i)`.
pub fn c_w_constant(
    w: &DVector<f64>,
    xi: &DMatrix<f64>,
    a: &DMatrix<f64>,
    index_i: &[usize],
    tau_w: f64,
) -> Result<f64, ConstError> {
    if !(tau_w > 0.0) {
        return Err(ConstError::InvalidArgument(format!("τ_w = {tau_w} must be positive")));
    }
    let v = xi * a.transpose() * w;
    let s: f64 = index_i.iter().map(|&i| w[i] * (-v[i]).max(0.0)).sum();
    Ok(1.0 + s / tau_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthant::closed_form_linear_drift;

    fn one() -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    #[test]
    fn zero_interval_is_one() {
        let e = pickands_on_interval(1.0, &one(), 0.0, 0.01, 10, 1).unwrap();
        assert_eq!((e.value, e.stderr), (1.0, 0.0));
        let e = piterbarg_estimate(1.0, &one(), &one(), IntervalMode::Right, &[0.0], 0.1, 10, 1).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn invalid_kernel_rejected() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(pickands_on_interval(2.0, &rot, 1.0, 0.1, 10, 1), Err(ConstError::InvalidKernel(_))));
    }

    #[test]
    fn alpha_two_increment_is_nearly_exact() {
        // Y(t) = √2 t N gives 𝓗([0,Λ]) = 1 + Λ/√π.
        let e = pickands_per_unit(2.0, &one(), 4.0, 0.01, 4000, 3).unwrap();
        let tol = 0.02 + 3.0 * e.stderr;
        assert!((e.value - 1.0 / std::f64::consts::PI.sqrt()).abs() < tol, "{e:?}");
    }

    #[test]
    fn direct_and_mixture_agree() {
        let k = Kernel::new(1.0, one(), None).unwrap();
        let a = interval_constant(&k, 1.0, 0.05, IntervalMode::Right, 20_000, 5, Estimator::Direct).unwrap();
        let b = interval_constant(&k, 1.0, 0.05, IntervalMode::Right, 20_000, 6, Estimator::Mixture).unwrap();
        let tol = 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < tol, "{} ± {} vs {} ± {}", a.value, a.stderr, b.value, b.stderr);
    }

    #[test]
    fn skew_examples() {
        let w = DVector::from_vec(vec![1.0, 1.0]);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(skew_constant(&w, &rot).unwrap(), 1.0);
        assert!(skew_constant(&w, &DMatrix::identity(2, 2)).is_err());
        let w = DVector::from_vec(vec![0.7, 1.3]);
        let vec_v: Vec<f64> = {
            let vw = &rot * &w;
            (0..2).map(|i| w[i] * vw[i]).collect()
        };
        // Slope of the drift integral for d(t) = t diag(w) V w.
        let lam = 1e6;
        let slope = (closed_form_linear_drift(&vec_v, lam).unwrap() - 1.0) / lam;
        assert!((slope - skew_constant(&w, &rot).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn c_w_examples() {
        let id = DMatrix::identity(3, 3);
        let w = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let xi = DMatrix::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(c_w_constant(&w, &xi, &id, &[0], 4.0).unwrap(), 1.5);
        assert_eq!(c_w_constant(&w, &id, &id, &[0], 1.0).unwrap(), 1.0);
        assert!(c_w_constant(&w, &id, &id, &[0], 0.0).is_err());
    }
}
