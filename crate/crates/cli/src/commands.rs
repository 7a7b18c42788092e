//! One function per subcommand.

use crate::config::RunConfig;
use crate::output::{idx_cell, num, opt, vec_cell, RunOutput, Table};
use anyhow::{anyhow, bail, Result};
use nalgebra::DVector;
use serde::Serialize;
use vgx_core::asymptotics::{
    beta_factor, beta_factor_printed, classify, compare, estimate_constant, predict, CompareSettings, ConstantSettings,
};
use vgx_core::constants::{c_w_constant, pickands_limit, piterbarg_estimate, skew_constant};
use vgx_core::models::{analytic_structure, verify_assumptions, CheckStatus, CovarianceModel, ModelError, Regime};
use vgx_core::qp::{dual_certificate, solve_pi_sigma, SymmetricPd};
use vgx_core::rng::streams;
use vgx_core::simulate::{sample_cmf, write_batch, GridSpec};
use vgx_core::tails::{borell_tis_bound, estimate_mu, exceedance_mc, mvn_tail, mvn_tail_asymptotic, TailQuery};

use crate::config::matrix;

pub fn qp(cfg: &RunConfig) -> Result<RunOutput> {
    let sigma = SymmetricPd::new(cfg.sigma()?)?;
    let b = cfg.b()?;
    let sol = solve_pi_sigma(&sigma, &b)?;
    let cert = dual_certificate(&sol, &sigma, &b);
    let mut t = Table::new(&["b", "b_tilde", "index_i", "index_j", "w", "value", "certificate_residual"]);
    t.push(vec![
        vec_cell(b.as_slice()),
        vec_cell(&sol.b_tilde),
        idx_cell(&sol.index_i),
        idx_cell(&sol.index_j),
        vec_cell(&sol.w),
        num(sol.value),
        num(cert.max_residual()),
    ]);
    #[derive(Serialize)]
    struct Out<'a> {
        solution: &'a vgx_core::qp::QpSolution,
        certificate_residual: f64,
    }
    RunOutput::new(t, Out { solution: &sol, certificate_residual: cert.max_residual() })
}

fn uniform_times(cfg: &RunConfig, horizon: f64) -> Result<Vec<f64>> {
    let n = *cfg.estimation.grid_sizes.iter().max().ok_or_else(|| anyhow!("`estimation.grid_sizes` is empty"))?;
    if n < 2 {
        bail!("`estimation.grid_sizes` needs at least two points");
    }
    Ok((0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect())
}

pub fn model_check(cfg: &RunConfig) -> Result<RunOutput> {
    let model = cfg.model()?;
    let b = cfg.b()?;
    let times = uniform_times(cfg, model.horizon())?;
    let report = verify_assumptions(&model, &b, &times);
    let structure = analytic_structure(&model, &b).ok();
    let mut t = Table::new(&["check", "status", "witness", "at", "detail"]);
    for c in &report.checks {
        let status = serde_json::to_value(c.status)?.as_str().unwrap_or_default().to_string();
        t.push(vec![c.name.clone(), status, opt(c.witness), opt(c.at), c.detail.clone()]);
    }
    #[derive(Serialize)]
    struct Out<'a> {
        report: &'a vgx_core::models::AssumptionReport,
        structure: &'a Option<vgx_core::models::LocalStructure>,
    }
    let mut out = RunOutput::new(t, Out { report: &report, structure: &structure })?;
    let failed: Vec<&str> =
        report.checks.iter().filter(|c| c.status == CheckStatus::Fail).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        out.exit_code = 2;
        out.messages.push(format!("not covered: failed checks {}", failed.join(", ")));
    }
    if let Some(r) = structure.as_ref().and_then(|s| s.refusal.clone()) {
        out.exit_code = 2;
        out.messages.push(format!("not covered: {r}"));
    }
    Ok(out)
}

pub fn sample(cfg: &RunConfig) -> Result<RunOutput> {
    let model = cfg.model()?;
    let grid = GridSpec::new(uniform_times(cfg, model.horizon())?, model.dim())?;
    let batch = sample_cmf(&model, &grid, cfg.estimation.n, cfg.estimation.seed, streams::SAMPLE)?;
    let d = grid.dim();
    let mut header = vec!["replicate".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    let mut t = Table { header, rows: vec![] };
    for r in 0..batch.n_paths {
        for (k, &time) in grid.times().iter().enumerate() {
            let mut row = vec![r.to_string(), num(time)];
            row.extend((0..d).map(|i| num(batch.value(r, k, i))));
            t.push(row);
        }
    }
    #[derive(Serialize)]
    struct Out {
        n_paths: usize,
        grid: Vec<f64>,
        dim: usize,
        seed: u64,
        jitter: f64,
    }
    let mut out = RunOutput::new(
        t,
        Out { n_paths: batch.n_paths, grid: grid.times().to_vec(), dim: d, seed: batch.seed, jitter: batch.jitter },
    )?;
    if cfg.output.dump {
        let mut bytes = Vec::new();
        write_batch(&batch, &mut bytes)?;
        out.extra.push(("paths.bin".into(), bytes));
    }
    Ok(out)
}

const CONSTANT_HEADER: [&str; 8] = ["constant_name", "alpha", "Lambda", "grid_step", "N", "value", "stderr", "seed"];

#[allow(clippy::too_many_arguments)]
fn constant_row(
    name: &str,
    alpha: Option<f64>,
    lambda: Option<f64>,
    h: Option<f64>,
    n: Option<usize>,
    value: f64,
    stderr: f64,
    seed: Option<u64>,
) -> Vec<String> {
    vec![
        name.into(),
        opt(alpha),
        opt(lambda),
        opt(h),
        n.map(|n| n.to_string()).unwrap_or_default(),
        num(value),
        num(stderr),
        seed.map(|s| s.to_string()).unwrap_or_default(),
    ]
}

pub fn pickands(cfg: &RunConfig) -> Result<RunOutput> {
    let k = cfg.kernel()?;
    let v = matrix(&k.v, "kernel.v")?;
    let e = &cfg.estimation;
    let est = pickands_limit(k.alpha, &v, &e.lambda, &e.grid_steps, e.n, e.seed)?;
    let mut t = Table::new(&CONSTANT_HEADER);
    for p in &est.ladder {
        t.push(constant_row(
            "pickands_interval_per_unit",
            Some(k.alpha),
            Some(p.lambda),
            Some(p.grid_step),
            Some(e.n),
            p.value,
            p.stderr,
            Some(e.seed),
        ));
    }
    let lam = e.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = e.grid_steps.iter().copied().fold(f64::INFINITY, f64::min);
    t.push(constant_row("pickands", Some(k.alpha), Some(lam), Some(h), Some(e.n), est.value, est.stderr, Some(e.seed)));
    if let (Some(x), Some(se)) = (est.extrapolated, est.extrapolated_stderr) {
        t.push(constant_row(
            "pickands_extrapolated",
            Some(k.alpha),
            Some(lam),
            Some(0.0),
            Some(e.n),
            x,
            se,
            Some(e.seed),
        ));
    }
    let mut out = RunOutput::new(t, &est)?;
    out.messages.extend(est.diagnostics.iter().filter(|d| d.contains("failure")).cloned());
    Ok(out)
}

pub fn piterbarg(cfg: &RunConfig) -> Result<RunOutput> {
    let k = cfg.kernel()?;
    let v = matrix(&k.v, "kernel.v")?;
    let w = matrix(k.w.as_ref().ok_or_else(|| anyhow!("missing key `kernel.w`"))?, "kernel.w")?;
    let e = &cfg.estimation;
    let mut t = Table::new(&CONSTANT_HEADER);
    let mut all = Vec::new();
    for &h in &e.grid_steps {
        let est = piterbarg_estimate(k.alpha, &v, &w, k.interval, &e.lambda, h, e.n, e.seed)?;
        for p in &est.ladder {
            t.push(constant_row(
                "piterbarg_interval",
                Some(k.alpha),
                Some(p.lambda),
                Some(h),
                Some(e.n),
                p.value,
                p.stderr,
                Some(e.seed),
            ));
        }
        let lam = est.ladder.last().map(|p| p.lambda);
        t.push(constant_row("piterbarg", Some(k.alpha), lam, Some(h), Some(e.n), est.value, est.stderr, Some(e.seed)));
        all.push(est);
    }
    let mut out = RunOutput::new(t, &all)?;
    for est in &all {
        out.messages.extend(est.diagnostics.iter().cloned());
    }
    Ok(out)
}

pub fn constants_closed(cfg: &RunConfig) -> Result<RunOutput> {
    let mut t = Table::new(&CONSTANT_HEADER);
    let mut values: Vec<(String, f64)> = Vec::new();
    if let Some(c) = &cfg.closed {
        let w = c.w.as_ref().map(|w| DVector::from_column_slice(w));
        if let (Some(w), Some(v)) = (&w, &c.v) {
            values.push(("skew".into(), skew_constant(w, &matrix(v, "closed.v")?)?));
        }
        if let (Some(w), Some(xi), Some(a), Some(ii), Some(tau)) = (&w, &c.xi, &c.a, &c.index_i, c.tau_w) {
            values.push(("c_w".into(), c_w_constant(w, &matrix(xi, "closed.xi")?, &matrix(a, "closed.a")?, ii, tau)?));
        }
        if let (Some(beta), Some(tau)) = (c.beta, c.tau_w) {
            values.push(("beta_factor".into(), beta_factor(beta, tau)));
            values.push(("beta_factor_printed".into(), beta_factor_printed(beta, tau)));
        }
    } else {
        let ls = classify(&cfg.model()?, &cfg.b()?)?;
        let w = ls.w();
        match ls.regime {
            Regime::StationarySkew => values.push(("skew".into(), skew_constant(&w, &ls.v)?)),
            Regime::Sup | Regime::Sub | Regime::Critical => {
                let (xi, tau) =
                    (ls.xi.as_ref().expect("non-stationary structure"), ls.tau_w.expect("non-stationary structure"));
                values.push(("c_w".into(), c_w_constant(&w, xi, &ls.a, &ls.qp.index_i, tau)?));
                if let Some(beta) = ls.beta {
                    values.push(("beta_factor".into(), beta_factor(beta, tau)));
                    values.push(("beta_factor_printed".into(), beta_factor_printed(beta, tau)));
                }
            }
            Regime::Stationary => {}
        }
    }
    if values.is_empty() {
        bail!("no closed-form constant is computable from the given inputs");
    }
    for (name, v) in &values {
        t.push(constant_row(name, None, None, None, None, *v, 0.0, None));
    }
    let json: Vec<_> = values.iter().map(|(n, v)| serde_json::json!({ "name": n, "value": v })).collect();
    RunOutput::new(t, json)
}

pub fn tail_mc(cfg: &RunConfig) -> Result<RunOutput> {
    let model = cfg.model()?;
    let b = cfg.b()?;
    let e = &cfg.estimation;
    let mut sizes = e.grid_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut t = Table::new(&["u", "estimate", "stderr", "mode", "grid_n", "ess", "bound", "mu_hat", "N", "seed"]);
    let mut results = Vec::new();
    let mut messages = Vec::new();
    for &n in &sizes {
        let base = TailQuery::uniform(model.clone(), b.clone(), cfg.us()?[0], n)?;
        let mu = estimate_mu(&base, e.n, e.seed)?;
        for &u in &cfg.us()? {
            let q = TailQuery::uniform(model.clone(), b.clone(), u, n)?;
            let est = exceedance_mc(&q, e.n, e.seed, e.mode)?;
            let bound = if u > mu.value { Some(borell_tis_bound(&q, mu.value)?) } else { None };
            t.push(vec![
                num(u),
                num(est.estimate.value),
                num(est.estimate.stderr),
                est.mode.to_string(),
                n.to_string(),
                num(est.ess),
                opt(bound),
                num(mu.value),
                e.n.to_string(),
                e.seed.to_string(),
            ]);
            messages.extend(est.estimate.diagnostics.iter().map(|d| format!("u = {u}, grid {n}: {d}")));
            results.push(serde_json::json!({ "estimate": est, "bound": bound, "mu_hat": mu }));
        }
    }
    let mut out = RunOutput::new(t, results)?;
    out.messages = messages;
    Ok(out)
}

pub fn tail_mvn(cfg: &RunConfig) -> Result<RunOutput> {
    let sigma = SymmetricPd::new(cfg.sigma()?)?;
    let b = cfg.b()?;
    let e = &cfg.estimation;
    let mut t = Table::new(&["u", "estimate", "stderr", "asymptotic", "ratio", "N", "seed"]);
    let mut results = Vec::new();
    for &u in &cfg.us()? {
        let est = mvn_tail(&sigma, &b, u, e.mvn_points, e.seed)?;
        let asy = if u > 0.0 { Some(mvn_tail_asymptotic(&sigma, &b, u)?) } else { None };
        t.push(vec![
            num(u),
            num(est.value),
            num(est.stderr),
            opt(asy),
            opt(asy.map(|a| a / est.value)),
            est.replicates.to_string(),
            e.seed.to_string(),
        ]);
        results.push(serde_json::json!({ "u": u, "estimate": est, "asymptotic": asy }));
    }
    RunOutput::new(t, results)
}

fn constant_settings(cfg: &RunConfig) -> ConstantSettings {
    let e = &cfg.estimation;
    let mut lambdas = e.lambda.clone();
    lambdas.sort_by(f64::total_cmp);
    ConstantSettings {
        lambda: lambdas.last().copied().unwrap_or(8.0),
        piterbarg_lambdas: lambdas,
        grid_step: e.grid_steps.iter().copied().fold(f64::INFINITY, f64::min),
        n_paths: e.constant_n.unwrap_or(e.n),
        seed: e.seed,
    }
}

/// Refuses inputs whose structural checks fail on the configured grid.
fn require_hypotheses(cfg: &RunConfig, model: &CovarianceModel, b: &DVector<f64>) -> Result<()> {
    let report = verify_assumptions(model, b, &uniform_times(cfg, model.horizon())?);
    let failed: Vec<&str> =
        report.checks.iter().filter(|c| c.status == CheckStatus::Fail).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(ModelError::HypothesisFailed(format!("failed checks {}", failed.join(", "))).into())
    }
}

pub fn predict_cmd(cfg: &RunConfig) -> Result<RunOutput> {
    let model = cfg.model()?;
    let b = cfg.b()?;
    let e = &cfg.estimation;
    require_hypotheses(cfg, &model, &b)?;
    let ls = classify(&model, &b)?;
    let constant = estimate_constant(&ls, &constant_settings(cfg))?;
    let mut t = Table::new(&[
        "u",
        "predicted",
        "regime",
        "constant_value",
        "constant_stderr",
        "exponent",
        "tail",
        "beta_factor",
        "beta_factor_printed",
        "predicted_printed",
        "N",
        "seed",
    ]);
    let mut preds = Vec::new();
    for &u in &cfg.us()? {
        let p = predict(&ls, &b, u, &constant, e.mvn_points, e.seed)?;
        t.push(vec![
            num(u),
            num(p.value),
            p.regime.to_string(),
            num(p.constant),
            num(p.constant_stderr),
            num(p.u_exponent),
            num(p.tail),
            opt(p.beta_factor),
            opt(p.beta_factor_printed),
            opt(p.value_printed),
            constant_settings(cfg).n_paths.to_string(),
            e.seed.to_string(),
        ]);
        preds.push(p);
    }
    RunOutput::new(t, serde_json::json!({ "structure": ls, "constant": constant, "predictions": preds }))
}

pub fn compare_cmd(cfg: &RunConfig) -> Result<RunOutput> {
    let model = cfg.model()?;
    let b = cfg.b()?;
    let e = &cfg.estimation;
    let settings = CompareSettings {
        tail_paths: e.n,
        grid_sizes: e.grid_sizes.clone(),
        mode: e.mode,
        constants: constant_settings(cfg),
        mvn_points: e.mvn_points,
        budget: e.budget,
        matched_step: e.matched_step,
    };
    require_hypotheses(cfg, &model, &b)?;
    let c = compare(&model, &b, &cfg.us()?, &settings, e.seed)?;
    let mut t = Table::new(&[
        "u",
        "empirical",
        "emp_stderr",
        "predicted",
        "ratio",
        "regime",
        "constant_value",
        "constant_stderr",
        "exponent",
        "ratio_stderr",
        "grid_n",
        "ess",
        "extrapolated",
        "N",
        "seed",
    ]);
    for r in &c.rows {
        t.push(vec![
            num(r.u),
            num(r.empirical),
            num(r.emp_stderr),
            num(r.predicted),
            num(r.ratio),
            c.regime.to_string(),
            num(c.constant.value),
            num(c.constant.stderr),
            num(r.prediction.u_exponent),
            num(r.ratio_stderr),
            r.grid_n.to_string(),
            num(r.ess),
            opt(r.extrapolated),
            e.n.to_string(),
            e.seed.to_string(),
        ]);
    }
    let mut out = RunOutput::new(t, &c)?;
    out.messages.push(format!(
        "trend: ratio ≈ {:.4} ± {:.4} + {:.4}/u ({})",
        c.trend.intercept,
        c.trend.intercept_stderr,
        c.trend.slope,
        if c.trend.green { "green" } else { "not consistent with 1" }
    ));
    Ok(out)
}
