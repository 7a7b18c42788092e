//! Asymptotic predictions for `p_b(u)` and the empirical comparison harness.

use crate::constants::{
    c_w_constant, pickands_per_unit, piterbarg_estimate, richardson, skew_constant, ConstError, EstimateWithError,
    IntervalMode,
};
use crate::models::{local_structure, CovarianceModel, LocalStructure, ModelError, Regime, T0Position};
use crate::special::gamma;
use crate::tails::{exceedance_ladder, mvn_tail, TailError, TailMode};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AsymptoticError {
    #[error("not covered by the tail theorems: {0}")]
    NotCovered(String),
    #[error("missing constant: {0}")]
    MissingConstant(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Const(#[from] ConstError),
    #[error(transparent)]
    Tail(#[from] TailError),
}

impl From<ModelError> for AsymptoticError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::HypothesisFailed(s) => AsymptoticError::NotCovered(s),
            ModelError::Unsupported(s) => AsymptoticError::NotCovered(s),
            other => AsymptoticError::Model(other),
        }
    }
}

/// Regime and local structure of `(model, b)`; inputs outside the theorems
/// are refused with [`AsymptoticError::NotCovered`].
pub fn classify(model: &CovarianceModel, b: &DVector<f64>) -> Result<LocalStructure, AsymptoticError> {
    Ok(local_structure(model, b)?)
}

/// Monte Carlo settings for the constants a prediction needs.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantSettings {
    /// `Λ` of the per-unit Pickands estimate.
    pub lambda: f64,
    /// `Λ` ladder of the Piterbarg estimate.
    pub piterbarg_lambdas: Vec<f64>,
    pub grid_step: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ConstantSettings {
    fn default() -> Self {
        Self { lambda: 8.0, piterbarg_lambdas: vec![1.0, 2.0, 4.0, 8.0], grid_step: 0.02, n_paths: 20_000, seed: 1 }
    }
}

/// The constant multiplying the tail factor, estimated or closed-form.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantValue {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    /// Monte Carlo estimates behind the value (two for an interior `t0`).
    pub estimates: Vec<EstimateWithError>,
}

impl ConstantValue {
    pub fn exact(name: &str, value: f64) -> Self {
        Self { name: name.into(), value, stderr: 0.0, estimates: vec![] }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { value: self.value * c, stderr: self.stderr * c, ..self.clone() }
    }
}

/// Kernel matrices whose per-unit Pickands constants add up to the one
/// needed: `V_w` at a left endpoint, `V_wᵀ` at a right endpoint, both for an
/// interior maximum.
pub fn pickands_kernels(ls: &LocalStructure) -> Vec<DMatrix<f64>> {
    let vw = ls.v_w();
    match ls.t0_position {
        None | Some(T0Position::LeftEndpoint) => vec![vw],
        Some(T0Position::RightEndpoint) => vec![vw.transpose()],
        Some(T0Position::Interior) => vec![vw.clone(), vw.transpose()],
    }
}

/// Interval of the Piterbarg constant for the position of `t0`.
pub fn piterbarg_mode(ls: &LocalStructure) -> IntervalMode {
    match ls.t0_position {
        None | Some(T0Position::LeftEndpoint) => IntervalMode::Right,
        Some(T0Position::RightEndpoint) => IntervalMode::Left,
        Some(T0Position::Interior) => IntervalMode::TwoSided,
    }
}

/// Computes the constant the regime of `ls` calls for.
pub fn estimate_constant(ls: &LocalStructure, s: &ConstantSettings) -> Result<ConstantValue, AsymptoticError> {
    if let Some(r) = &ls.refusal {
        return Err(AsymptoticError::NotCovered(r.clone()));
    }
    let w = ls.w();
    match ls.regime {
        Regime::Stationary | Regime::Sub => {
            let mut estimates = Vec::new();
            for (k, v) in pickands_kernels(ls).iter().enumerate() {
                estimates.push(pickands_per_unit(
                    ls.alpha,
                    v,
                    s.lambda,
                    s.grid_step,
                    s.n_paths,
                    s.seed.wrapping_add(k as u64),
                )?);
            }
            let value = estimates.iter().map(|e| e.value).sum();
            let stderr = estimates.iter().map(|e| e.stderr.powi(2)).sum::<f64>().sqrt();
            Ok(ConstantValue { name: "pickands".into(), value, stderr, estimates })
        }
        Regime::StationarySkew => Ok(ConstantValue::exact("skew", skew_constant(&w, &ls.v)?)),
        Regime::Critical => {
            let ww = ls.w_w().ok_or_else(|| AsymptoticError::MissingConstant("Ξ undefined".into()))?;
            let e = piterbarg_estimate(
                ls.alpha,
                &ls.v_w(),
                &ww,
                piterbarg_mode(ls),
                &s.piterbarg_lambdas,
                s.grid_step,
                s.n_paths,
                s.seed,
            )?;
            Ok(ConstantValue { name: "piterbarg".into(), value: e.value, stderr: e.stderr, estimates: vec![e] })
        }
        Regime::Sup => {
            let xi = ls.xi.as_ref().ok_or_else(|| AsymptoticError::MissingConstant("Ξ undefined".into()))?;
            let tau = ls.tau_w.ok_or_else(|| AsymptoticError::MissingConstant("τ_w undefined".into()))?;
            Ok(ConstantValue::exact("c_w", c_w_constant(&w, xi, &ls.a, &ls.qp.index_i, tau)?))
        }
    }
}

/// `∫_0^∞ e^{−τ s^β} ds = Γ(1 + 1/β) τ^{−1/β}`, the limit of the single sum.
pub fn beta_factor(beta: f64, tau: f64) -> f64 {
    gamma(1.0 + 1.0 / beta) * tau.powf(-1.0 / beta)
}

/// The variant `Γ(1+1/β) τ^{−β}`, reported next to [`beta_factor`] for comparison.
pub fn beta_factor_printed(beta: f64, tau: f64) -> f64 {
    gamma(1.0 + 1.0 / beta) * tau.powf(-beta)
}

/// Power of `u` multiplying the tail factor.
pub fn u_exponent(ls: &LocalStructure) -> f64 {
    match ls.regime {
        Regime::Stationary | Regime::StationarySkew => 2.0 / ls.alpha,
        Regime::Sub => 2.0 / ls.alpha - 2.0 / ls.beta.unwrap_or(f64::NAN),
        Regime::Critical | Regime::Sup => 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticPrediction {
    pub regime: Regime,
    pub t0: f64,
    pub t0_position: Option<T0Position>,
    pub u: f64,
    pub constant_name: String,
    pub constant: f64,
    pub constant_stderr: f64,
    pub u_exponent: f64,
    /// `T` for stationary models, otherwise 1.
    pub horizon_factor: f64,
    /// `Γ(1 + 1/β) τ_w^{−1/β}` in the SUB regime.
    pub beta_factor: Option<f64>,
    /// `Γ(1 + 1/β) τ_w^{−β}`, for comparison only.
    pub beta_factor_printed: Option<f64>,
    /// `P(X(t0) > u b)`.
    pub tail: f64,
    pub tail_stderr: f64,
    pub value: f64,
    /// Prediction with [`beta_factor_printed`], SUB regime only.
    pub value_printed: Option<f64>,
    pub relative_stderr: f64,
}

/// `constant × u^e × P(X(t0) > u b)`, times `T` for stationary models and the
/// β-factor in the SUB regime.
pub fn predict(
    ls: &LocalStructure,
    b: &DVector<f64>,
    u: f64,
    constant: &ConstantValue,
    mvn_points: usize,
    seed: u64,
) -> Result<AsymptoticPrediction, AsymptoticError> {
    if let Some(r) = &ls.refusal {
        return Err(AsymptoticError::NotCovered(r.clone()));
    }
    if !(u > 0.0 && u.is_finite()) {
        return Err(AsymptoticError::InvalidArgument(format!("u must be positive, got {u}")));
    }
    if !(constant.value > 0.0 && constant.value.is_finite()) {
        return Err(AsymptoticError::MissingConstant(format!(
            "{} = {} is not positive",
            constant.name, constant.value
        )));
    }
    let tail = mvn_tail(&ls.sigma_pd(), b, u, mvn_points, seed)?;
    let e = u_exponent(ls);
    let horizon_factor = match ls.regime {
        Regime::Stationary | Regime::StationarySkew => ls.horizon,
        _ => 1.0,
    };
    let (bf, bfp) = match (ls.regime, ls.beta, ls.tau_w) {
        (Regime::Sub, Some(beta), Some(tau)) => (Some(beta_factor(beta, tau)), Some(beta_factor_printed(beta, tau))),
        (Regime::Sub, _, _) => return Err(AsymptoticError::MissingConstant("β or τ_w undefined".into())),
        _ => (None, None),
    };
    let base = horizon_factor * constant.value * u.powf(e) * tail.value;
    let value = base * bf.unwrap_or(1.0);
    let rel = ((constant.stderr / constant.value).powi(2)
        + if tail.value > 0.0 { (tail.stderr / tail.value).powi(2) } else { 0.0 })
    .sqrt();
    Ok(AsymptoticPrediction {
        regime: ls.regime,
        t0: ls.t0,
        t0_position: ls.t0_position,
        u,
        constant_name: constant.name.clone(),
        constant: constant.value,
        constant_stderr: constant.stderr,
        u_exponent: e,
        horizon_factor,
        beta_factor: bf,
        beta_factor_printed: bfp,
        tail: tail.value,
        tail_stderr: tail.stderr,
        value,
        value_printed: bfp.map(|f| base * f),
        relative_stderr: rel,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSettings {
    /// Paths per level and grid.
    pub tail_paths: usize,
    /// Uniform grid sizes on `[0, T]`; the finest is reported.
    pub grid_sizes: Vec<usize>,
    pub mode: TailMode,
    pub constants: ConstantSettings,
    pub mvn_points: usize,
    /// Upper bound on the total number of exceedance paths.
    pub budget: Option<usize>,
    /// When set, each level uses a single grid of step `h u^{−2/α}` and the
    /// constant is estimated with grid step `h`, so both sides of the ratio
    /// carry the same local discretization. Overrides `grid_sizes` and
    /// `constants.grid_step`.
    pub matched_step: Option<f64>,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            tail_paths: 20_000,
            grid_sizes: vec![101, 201],
            mode: TailMode::Mixture,
            constants: ConstantSettings::default(),
            mvn_points: 1 << 14,
            budget: None,
            matched_step: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub u: f64,
    pub empirical: f64,
    pub emp_stderr: f64,
    pub ladder: Vec<crate::constants::LadderPoint>,
    pub ess: f64,
    pub grid_n: usize,
    /// Richardson extrapolation of the two finest grids, error `∝ step^{α/2}`.
    pub extrapolated: Option<f64>,
    pub extrapolated_stderr: Option<f64>,
    pub predicted: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub prediction: AsymptoticPrediction,
}

/// Weighted least-squares fit `ratio ≈ a + s/u`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Trend {
    pub intercept: f64,
    pub intercept_stderr: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Whether the intercept is within two standard errors of 1.
    pub green: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub regime: Regime,
    pub constant: ConstantValue,
    pub rows: Vec<CompareRow>,
    pub trend: Trend,
}

pub fn trend(points: &[(f64, f64, f64)]) -> Trend {
    // (x, y, stderr of y)
    let weight = |se: f64| if se > 0.0 { 1.0 / (se * se) } else { 1e12 };
    if points.len() < 2 {
        let (_, y, se) = points.first().copied().unwrap_or((0.0, f64::NAN, f64::NAN));
        return Trend {
            intercept: y,
            intercept_stderr: se,
            slope: 0.0,
            slope_stderr: f64::NAN,
            green: (y - 1.0).abs() <= 2.0 * se,
        };
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, se) in points {
        let w = weight(se);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let intercept_stderr = (sxx / det).sqrt();
    let slope_stderr = (sw / det).sqrt();
    Trend { intercept, intercept_stderr, slope, slope_stderr, green: (intercept - 1.0).abs() <= 2.0 * intercept_stderr }
}

/// Empirical `p̂_b(u)` against the prediction over a sorted list of levels.
pub fn compare(
    model: &CovarianceModel,
    b: &DVector<f64>,
    us: &[f64],
    settings: &CompareSettings,
    seed: u64,
) -> Result<Comparison, AsymptoticError> {
    if us.is_empty() || us.windows(2).any(|p| p[0] > p[1]) {
        return Err(AsymptoticError::InvalidArgument("u grid must be non-empty and ascending".into()));
    }
    let ls = classify(model, b)?;
    let mut csettings = settings.constants.clone();
    if let Some(h) = settings.matched_step {
        if !(h > 0.0) {
            return Err(AsymptoticError::InvalidArgument(format!("matched step must be positive, got {h}")));
        }
        csettings.grid_step = h;
    }
    let constant = estimate_constant(&ls, &csettings)?;
    let grids_per_u = if settings.matched_step.is_some() { 1 } else { settings.grid_sizes.len().max(1) };
    let mut paths = settings.tail_paths;
    if let Some(budget) = settings.budget {
        paths = paths.min(budget / (us.len() * grids_per_u)).max(1);
    }
    let max_points = crate::simulate::MAX_GRID_DIM / model.dim();
    let mut rows = Vec::with_capacity(us.len());
    for &u in us {
        let sizes = match settings.matched_step {
            Some(h) => {
                let step = h * u.powf(-2.0 / ls.alpha);
                vec![((ls.horizon / step).ceil() as usize + 1).min(max_points)]
            }
            None => settings.grid_sizes.clone(),
        };
        let emp = exceedance_ladder(model, b, u, &sizes, paths, seed, settings.mode)?;
        let pred = predict(&ls, b, u, &constant, settings.mvn_points, seed)?;
        let p = emp.estimate.value;
        let ratio = p / pred.value;
        let rel_emp = if p > 0.0 { emp.estimate.stderr / p } else { f64::INFINITY };
        let ratio_stderr = ratio.abs() * rel_emp.hypot(pred.relative_stderr);
        let lad = &emp.estimate.ladder;
        let (extrapolated, extrapolated_stderr) = if lad.len() >= 2 {
            let (c, f) = (&lad[lad.len() - 2], &lad[lad.len() - 1]);
            let (x, se) =
                richardson((c.grid_step, c.value, c.stderr), (f.grid_step, f.value, f.stderr), ls.alpha / 2.0);
            (Some(x), Some(se))
        } else {
            (None, None)
        };
        rows.push(CompareRow {
            u,
            empirical: p,
            emp_stderr: emp.estimate.stderr,
            ladder: emp.estimate.ladder.clone(),
            ess: emp.ess,
            grid_n: emp.grid_n,
            extrapolated,
            extrapolated_stderr,
            predicted: pred.value,
            ratio,
            ratio_stderr,
            prediction: pred,
        });
    }
    let pts: Vec<(f64, f64, f64)> = rows.iter().map(|r| (1.0 / r.u, r.ratio, r.ratio_stderr)).collect();
    Ok(Comparison { regime: ls.regime, constant, rows, trend: trend(&pts) })
}
