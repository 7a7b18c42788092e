//! Run configuration, read from TOML.
//!
//! Matrices are row-major nested arrays. Every section is optional except
//! `[estimation]`, whose `seed` is required; each subcommand checks for the
//! sections it needs.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use vgx_core::constants::IntervalMode;
use vgx_core::linalg::matrix_from_rows;
use vgx_core::models::CovarianceModel;
use vgx_core::tails::TailMode;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelSection>,
    pub target: Option<TargetSection>,
    /// A fixed covariance matrix for `qp` and `tail-mvn`.
    pub matrix: Option<MatrixSection>,
    pub kernel: Option<KernelSection>,
    pub closed: Option<ClosedSection>,
    pub estimation: EstimationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `FOU`, `OperatorFBM`, `LampertiFBM` or `FBMKernel`.
    pub family: String,
    pub h: Option<Vec<Vec<f64>>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub alpha: Option<f64>,
    pub v: Option<Vec<Vec<f64>>>,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub b: Vec<f64>,
    #[serde(default)]
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub alpha: f64,
    pub v: Vec<Vec<f64>>,
    /// Drift matrix of the Piterbarg constant.
    pub w: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub interval: IntervalMode,
}

/// Inputs of the closed-form constants.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedSection {
    pub w: Option<Vec<f64>>,
    /// Antisymmetric `V` of the skew constant.
    pub v: Option<Vec<Vec<f64>>>,
    pub xi: Option<Vec<Vec<f64>>>,
    pub a: Option<Vec<Vec<f64>>>,
    /// Zero-based.
    pub index_i: Option<Vec<usize>>,
    pub tau_w: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_lambdas")]
    pub lambda: Vec<f64>,
    #[serde(default = "default_steps")]
    pub grid_steps: Vec<f64>,
    #[serde(default = "default_grid_sizes")]
    pub grid_sizes: Vec<usize>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub mode: TailMode,
    #[serde(default = "default_mvn_points")]
    pub mvn_points: usize,
    /// Paths for constants estimated inside `predict` and `compare`.
    pub constant_n: Option<usize>,
    pub matched_step: Option<f64>,
    pub budget: Option<usize>,
}

fn default_n() -> usize {
    10_000
}
fn default_lambdas() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_steps() -> Vec<f64> {
    vec![0.05, 0.02]
}
fn default_grid_sizes() -> Vec<usize> {
    vec![101]
}
fn default_workers() -> usize {
    1
}
fn default_mvn_points() -> usize {
    1 << 14
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Also write the binary path dump in `sample`.
    #[serde(default)]
    pub dump: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: default_dir(), formats: default_formats(), dump: false }
    }
}

fn default_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| anyhow!("malformed config: {e}"))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("malformed config at `{path}`: {}", e.into_inner().message())
    })
}

pub fn load(path: &Path) -> Result<(RunConfig, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
    Ok((parse(text)?, bytes))
}

pub fn matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        bail!("`{key}` is empty");
    }
    matrix_from_rows(rows).ok_or_else(|| anyhow!("`{key}` has rows of different lengths"))
}

fn required<'a, T>(x: &'a Option<T>, key: &str) -> Result<&'a T> {
    x.as_ref().ok_or_else(|| anyhow!("missing key `{key}`"))
}

impl RunConfig {
    pub fn model(&self) -> Result<CovarianceModel> {
        let m = required(&self.model, "model")?;
        let t = m.horizon;
        let model = match m.family.as_str() {
            "FOU" => CovarianceModel::fou(matrix(required(&m.h, "model.h")?, "model.h")?, t)?,
            "OperatorFBM" => CovarianceModel::operator_fbm(
                matrix(required(&m.h, "model.h")?, "model.h")?,
                matrix(required(&m.sigma, "model.sigma")?, "model.sigma")?,
                t,
            )?,
            "LampertiFBM" => CovarianceModel::lamperti_fbm(
                matrix(required(&m.h, "model.h")?, "model.h")?,
                matrix(required(&m.sigma, "model.sigma")?, "model.sigma")?,
                t,
            )?,
            "FBMKernel" => CovarianceModel::fbm_kernel(
                *required(&m.alpha, "model.alpha")?,
                matrix(required(&m.v, "model.v")?, "model.v")?,
                t,
            )?,
            other => bail!("malformed config at `model.family`: unknown family `{other}`"),
        };
        Ok(model)
    }

    pub fn b(&self) -> Result<DVector<f64>> {
        let t = required(&self.target, "target")?;
        Ok(DVector::from_column_slice(&t.b))
    }

    pub fn us(&self) -> Result<Vec<f64>> {
        let t = required(&self.target, "target")?;
        if t.u.is_empty() {
            bail!("missing key `target.u`");
        }
        Ok(t.u.clone())
    }

    pub fn sigma(&self) -> Result<DMatrix<f64>> {
        let m = required(&self.matrix, "matrix")?;
        matrix(&m.sigma, "matrix.sigma")
    }

    pub fn kernel(&self) -> Result<&KernelSection> {
        required(&self.kernel, "kernel")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_names_the_key_path() {
        let err = parse("[estimation]\nseed = 1\nn = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("estimation.n"), "{err}");
        let err = parse("[estimation]\nn = 5\n").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        let err = parse("[estimation]\nseed = 1\n[target]\nb = [1, 1]\nbb = 2\n").unwrap_err().to_string();
        assert!(err.contains("target"), "{err}");
    }

    #[test]
    fn minimal_config_parses() {
        let c = parse("[estimation]\nseed = 3\n[matrix]\nsigma = [[1, 0], [0, 1]]\n").unwrap();
        assert_eq!(c.estimation.seed, 3);
        assert_eq!(c.sigma().unwrap(), DMatrix::identity(2, 2));
        assert!(c.model().is_err());
    }
}
