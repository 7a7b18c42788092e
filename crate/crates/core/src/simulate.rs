//! Gaussian path sampling on finite grids.
//!
//! Paths are `L z` with `L` a Cholesky factor of the stacked grid covariance
//! and `z` standard normals from a per-replicate counter stream. Replicates
//! are processed in fixed-width chunks aligned to the replicate index, so the
//! floating-point work done for replicate `r` never depends on how many
//! replicates or worker threads there are.

use crate::models::Cmf;
use crate::rng::replicate_rng;
use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::{self, Read, Write};
use thiserror::Error;

/// Largest supported `n · d`.
pub const MAX_GRID_DIM: usize = 8192;
/// Replicates per sampling chunk.
pub const CHUNK: usize = 128;
const ASYMMETRY_TOL: f64 = 1e-8;
pub const MAGIC: &[u8; 5] = b"VGXB1";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid too large: n·d = {0} exceeds {MAX_GRID_DIM}")]
    TooLarge(usize),
    #[error("covariance is not symmetric (deviation {0:e}); the model is inconsistent")]
    Asymmetric(f64),
    #[error("Cholesky failed even with jitter {0:e}; the kernel is not positive semi-definite")]
    NotPsd(f64),
    #[error("malformed path dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    times: Vec<f64>,
    dim: usize,
}

impl GridSpec {
    pub fn new(times: Vec<f64>, dim: usize) -> Result<Self, SimError> {
        if times.is_empty() || dim == 0 {
            return Err(SimError::InvalidGrid("need at least one time and one coordinate".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(SimError::InvalidGrid("non-finite time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::InvalidGrid("times must be strictly increasing".into()));
        }
        if times.len() * dim > MAX_GRID_DIM {
            return Err(SimError::TooLarge(times.len() * dim));
        }
        Ok(Self { times, dim })
    }

    /// `n` equally spaced points from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, n: usize, dim: usize) -> Result<Self, SimError> {
        if n == 1 {
            return Self::new(vec![start], dim);
        }
        let step = (end - start) / (n - 1) as f64;
        Self::new((0..n).map(|k| start + step * k as f64).collect(), dim)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of one stacked path, `n · d`.
    pub fn stacked_len(&self) -> usize {
        self.times.len() * self.dim
    }

    pub fn check_within(&self, lo: f64, hi: f64) -> Result<(), SimError> {
        let tol = 1e-12 * hi.abs().max(1.0);
        if self.times[0] < lo - tol || self.times[self.times.len() - 1] > hi + tol {
            return Err(SimError::InvalidGrid(format!("times must lie in [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Stacked covariance whose `(i, j)` block is `R(t_i, t_j)`.
pub fn build_grid_cov(cmf: &dyn Cmf, grid: &GridSpec) -> Result<DMatrix<f64>, SimError> {
    let d = grid.dim;
    if cmf.dim() != d {
        return Err(SimError::InvalidGrid(format!("grid dimension {d} but covariance dimension {}", cmf.dim())));
    }
    let n = grid.len();
    let mut m = DMatrix::zeros(n * d, n * d);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let ti = grid.times[i];
            let tj = grid.times[j];
            let r = cmf.cov(ti, tj);
            let r_rev = cmf.cov(tj, ti);
            worst = worst.max((&r - r_rev.transpose()).amax());
            scale = scale.max(r.amax());
            m.view_mut((i * d, j * d), (d, d)).copy_from(&r);
            if i != j {
                m.view_mut((j * d, i * d), (d, d)).copy_from(&r.transpose());
            }
        }
    }
    for i in 0..n {
        let blk = m.view((i * d, i * d), (d, d)).into_owned();
        worst = worst.max((&blk - blk.transpose()).amax());
    }
    if worst > ASYMMETRY_TOL * scale.max(1.0) {
        return Err(SimError::Asymmetric(worst));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    /// Relative jitter of the first retry, times `tr(M)/n`.
    pub base: f64,
    /// Number of tenfold escalations after the first retry.
    pub steps: i32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self { base: 1e-12, steps: 6 }
    }
}

/// Lower-triangular `L` with `L Lᵀ = M + jitter·I` on the non-null rows.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl PsdFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.l.nrows() == 0
    }
}

/// Cholesky factor with an escalating diagonal jitter. Rows and columns that
/// are identically zero (a process pinned at zero, e.g. at `t = 0`) are left
/// out of the factorization and stay exactly zero.
pub fn factor_psd(m: &DMatrix<f64>, policy: JitterPolicy) -> Result<PsdFactor, SimError> {
    let n = m.nrows();
    let active: Vec<usize> = (0..n).filter(|&i| m.row(i).iter().any(|&x| x != 0.0)).collect();
    let k = active.len();
    let sub = DMatrix::from_fn(k, k, |i, j| m[(active[i], active[j])]);
    let mean_diag = if k == 0 { 0.0 } else { sub.trace() / k as f64 };
    let jitters = std::iter::once(0.0).chain((0..=policy.steps).map(|s| policy.base * mean_diag * 10f64.powi(s)));
    let mut last = 0.0;
    for jitter in jitters {
        last = jitter;
        let mut trial = sub.clone();
        for i in 0..k {
            trial[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(trial) {
            let lk = ch.l();
            if lk.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let mut l = DMatrix::zeros(n, n);
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate().take(a + 1) {
                    l[(i, j)] = lk[(a, b)];
                }
            }
            return Ok(PsdFactor { l, jitter });
        }
    }
    Err(SimError::NotPsd(last))
}

/// Standard normals for one replicate.
pub fn replicate_normals(seed: u64, stream: u64, replicate: u64, out: &mut [f64]) {
    let mut rng = replicate_rng(seed, stream, replicate);
    for z in out.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
}

/// Samples `n_paths` stacked paths and applies `f(replicate, path)` to each.
/// The output is ordered by replicate index.
pub fn map_paths<T, F>(factor: &PsdFactor, n_paths: usize, seed: u64, stream: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    let m = factor.len();
    let n_chunks = n_paths.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let first = c * CHUNK;
            let used = CHUNK.min(n_paths - first);
            // Always a full-width chunk so every replicate sees the same
            // arithmetic regardless of n_paths.
            let mut z = DMatrix::zeros(m, CHUNK);
            for j in 0..used {
                let col = &mut z.as_mut_slice()[j * m..(j + 1) * m];
                replicate_normals(seed, stream, (first + j) as u64, col);
            }
            let x = factor.l() * z;
            let xs = x.as_slice();
            (0..used).map(|j| f(first + j, &xs[j * m..(j + 1) * m])).collect()
        })
        .collect();
    per_chunk.into_iter().flatten().collect()
}

#[derive(Debug, Clone)]
pub struct PathBatch {
    pub grid: GridSpec,
    pub n_paths: usize,
    /// `N × n × d`, row-major.
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub jitter: f64,
}

impl PathBatch {
    pub fn path(&self, r: usize) -> &[f64] {
        let m = self.grid.stacked_len();
        &self.values[r * m..(r + 1) * m]
    }

    pub fn value(&self, r: usize, i: usize, k: usize) -> f64 {
        self.path(r)[i * self.grid.dim + k]
    }
}

pub fn sample_paths(factor: &PsdFactor, grid: &GridSpec, n_paths: usize, seed: u64, stream: u64) -> PathBatch {
    assert_eq!(factor.len(), grid.stacked_len(), "factor does not match the grid");
    let rows = map_paths(factor, n_paths, seed, stream, |_, p| p.to_vec());
    PathBatch { grid: grid.clone(), n_paths, values: rows.concat(), seed, stream, jitter: factor.jitter() }
}

/// Convenience wrapper: grid covariance, factor, sample.
pub fn sample_cmf(
    cmf: &dyn Cmf,
    grid: &GridSpec,
    n_paths: usize,
    seed: u64,
    stream: u64,
) -> Result<PathBatch, SimError> {
    let cov = build_grid_cov(cmf, grid)?;
    let factor = factor_psd(&cov, JitterPolicy::default())?;
    Ok(sample_paths(&factor, grid, n_paths, seed, stream))
}

/// Largest absolute deviation between the sample second moment of the batch
/// (the mean is known to be zero) and the grid covariance.
pub fn empirical_cmf_residual(batch: &PathBatch, cmf: &dyn Cmf) -> Result<f64, SimError> {
    let target = build_grid_cov(cmf, &batch.grid)?;
    let m = batch.grid.stacked_len();
    let x = DMatrix::from_column_slice(m, batch.n_paths, &batch.values);
    let emp = (&x * x.transpose()) / batch.n_paths as f64;
    Ok((emp - target).amax())
}

/// Writes the batch as `VGXB1`, then `N`, `n`, `d`, `seed` as little-endian
/// `u64`, then the `N × n × d` values as little-endian `f64` in row-major order.
pub fn write_batch<W: Write>(batch: &PathBatch, mut w: W) -> Result<(), SimError> {
    w.write_all(MAGIC)?;
    for x in [batch.n_paths as u64, batch.grid.len() as u64, batch.grid.dim as u64, batch.seed] {
        w.write_all(&x.to_le_bytes())?;
    }
    for v in &batch.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchDump {
    pub n_paths: usize,
    pub n_times: usize,
    pub dim: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

pub fn read_batch<R: Read>(mut r: R) -> Result<BatchDump, SimError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SimError::Format("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut header = [0u64; 4];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u64::from_le_bytes(word);
    }
    let count = header[0]
        .checked_mul(header[1])
        .and_then(|x| x.checked_mul(header[2]))
        .ok_or_else(|| SimError::Format("dimensions overflow".into()))? as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    Ok(BatchDump {
        n_paths: header[0] as usize,
        n_times: header[1] as usize,
        dim: header[2] as usize,
        seed: header[3],
        values,
    })
}
