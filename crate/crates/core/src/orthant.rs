//! Exponentially weighted measure of a union of lower orthants,
//! `∫ e^{1ᵀx} 1{∃k: x < v_k} dx`.
//!
//! The integral over one orthant is `e^{1ᵀv}` and over an intersection it is
//! `e^{1ᵀ min(v_j, v_k)}`. Inclusion–exclusion is exact but exponential in the
//! number of points, so the default route sweeps instead: a sort for `d ≤ 2`,
//! slabs over the last coordinate with an incremental staircase for `d = 3`,
//! and recursive slabs above that. All arithmetic is done relative to the
//! componentwise maximum to keep exponentials in range.

use crate::linalg::CompensatedSum;
use crate::rng::{replicate_rng, streams};
use rand::Rng;
use rand_distr::Exp1;
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest number of maxima accepted by [`inclusion_exclusion`].
pub const INCLUSION_EXCLUSION_MAX: usize = 25;
/// Work budget (roughly `m^{d-2}` slab evaluations) for exact recursion in `d ≥ 4`.
pub const SLAB_BUDGET: f64 = 5e7;
/// Samples drawn by the importance-sampling fallback.
pub const FALLBACK_SAMPLES: usize = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum OrthantError {
    #[error("point set has dimension {0}, expected {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("{0} maxima exceed the inclusion-exclusion limit of {INCLUSION_EXCLUSION_MAX}")]
    TooManyPoints(usize),
    #[error("1ᵀv = {0} is negative")]
    NegativeDrift(f64),
}

/// Corner points `v_k` of lower orthants `{x < v_k}`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, points: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * points) }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self, OrthantError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(OrthantError::DimensionMismatch(data.len(), dim));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(OrthantError::NonFinite);
        }
        Ok(Self { dim, data })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, OrthantError> {
        let dim = points.first().map_or(1, Vec::len);
        let mut out = Self::with_capacity(dim, points.len());
        for p in points {
            out.push(p)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, p: &[f64]) -> Result<(), OrthantError> {
        if p.len() != self.dim {
            return Err(OrthantError::DimensionMismatch(p.len(), self.dim));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(OrthantError::NonFinite);
        }
        self.data.extend_from_slice(p);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    fn max_corner(&self) -> Vec<f64> {
        let mut m = vec![f64::NEG_INFINITY; self.dim];
        for p in self.iter() {
            for (mi, &x) in m.iter_mut().zip(p) {
                *mi = mi.max(x);
            }
        }
        m
    }
}

/// Componentwise-maximal points (duplicates collapsed). The union of
/// orthants is unchanged.
pub fn pareto_maxima(ps: &PointSet) -> PointSet {
    let mut idx: Vec<usize> = (0..ps.len()).collect();
    // A dominating point is lexicographically larger, so it comes first.
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (ps.point(a), ps.point(b));
        pb.iter().zip(pa).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = PointSet::with_capacity(ps.dim, idx.len().min(64));
    for k in idx {
        let p = ps.point(k);
        let dominated = out.iter().any(|q| q.iter().zip(p).all(|(a, b)| a >= b));
        if !dominated {
            out.data.extend_from_slice(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnionIntegral {
    pub value: f64,
    /// Zero for exact routes.
    pub stderr: f64,
    pub exact: bool,
}

/// `∫ e^{1ᵀx} 1{∃k: x < v_k} dx`.
pub fn union_integral(ps: &PointSet) -> UnionIntegral {
    let ln = ln_union_integral(ps);
    let value = ln.ln_value.exp();
    UnionIntegral { value, stderr: value * ln.rel_stderr, exact: ln.exact }
}

/// Logarithm of the union integral, for point sets whose values would
/// overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LnUnionIntegral {
    pub ln_value: f64,
    /// Standard error relative to the value; zero for exact routes.
    pub rel_stderr: f64,
    pub exact: bool,
}

pub fn ln_union_integral(ps: &PointSet) -> LnUnionIntegral {
    if ps.is_empty() {
        return LnUnionIntegral { ln_value: f64::NEG_INFINITY, rel_stderr: 0.0, exact: true };
    }
    let shift = ps.max_corner();
    let ln_scale: f64 = shift.iter().sum();
    let d = ps.dim;
    if d == 1 {
        return LnUnionIntegral { ln_value: ln_scale, rel_stderr: 0.0, exact: true };
    }
    let mut shifted = Vec::with_capacity(ps.data.len());
    for p in ps.iter() {
        shifted.extend(p.iter().zip(&shift).map(|(x, m)| x - m));
    }
    let maxima = pareto_maxima(&PointSet { dim: d, data: shifted });
    let m = maxima.len();
    let rows: Vec<&[f64]> = maxima.iter().collect();
    if d == 2 || (m as f64).powi(d as i32 - 2) <= SLAB_BUDGET {
        let v = slab(&rows, d);
        return LnUnionIntegral { ln_value: ln_scale + v.ln(), rel_stderr: 0.0, exact: true };
    }
    let (p, se) = sampled_fraction(&rows, d);
    if p == 0.0 {
        // No hits: fall back to the largest single orthant as a lower bound.
        let best = rows.iter().map(|r| r.iter().sum::<f64>()).fold(f64::NEG_INFINITY, f64::max);
        return LnUnionIntegral { ln_value: ln_scale + best, rel_stderr: 1.0, exact: false };
    }
    LnUnionIntegral { ln_value: ln_scale + p.ln(), rel_stderr: se / p, exact: false }
}

/// Shorthand for the value of [`union_integral`].
pub fn union_integral_value(ps: &PointSet) -> f64 {
    union_integral(ps).value
}

/// Exact union integral of shifted maxima (all coordinates ≤ 0).
fn slab(rows: &[&[f64]], d: usize) -> f64 {
    match d {
        1 => rows.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max).exp(),
        2 => sweep2(rows),
        3 => sweep3(rows),
        _ => {
            let mut order: Vec<&[f64]> = rows.to_vec();
            order.sort_by(|a, b| b[d - 1].total_cmp(&a[d - 1]));
            let mut acc = CompensatedSum::default();
            let mut prefix = PointSet::new(d - 1);
            for k in 0..order.len() {
                prefix.data.extend_from_slice(&order[k][..d - 1]);
                let z = order[k][d - 1];
                let width = match order.get(k + 1) {
                    Some(next) => z.exp() * -(next[d - 1] - z).exp_m1(),
                    None => z.exp(),
                };
                if width > 0.0 {
                    let reduced = pareto_maxima(&prefix);
                    let sub: Vec<&[f64]> = reduced.iter().collect();
                    acc.add(width * slab(&sub, d - 1));
                }
            }
            acc.value()
        }
    }
}

/// Staircase sweep for `d = 2`.
fn sweep2(rows: &[&[f64]]) -> f64 {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut acc = CompensatedSum::default();
    let mut prev_y = f64::NEG_INFINITY;
    for (x, y) in pts {
        if y <= prev_y {
            continue;
        }
        let band = if prev_y == f64::NEG_INFINITY { y.exp() } else { y.exp() * -(prev_y - y).exp_m1() };
        acc.add(x.exp() * band);
        prev_y = y;
    }
    acc.value()
}

/// Two-dimensional staircase with an exactly maintained weighted area.
#[derive(Default)]
struct Staircase {
    /// `x -> y`; `y` strictly decreases as `x` increases.
    steps: BTreeMap<Key, f64>,
    area: CompensatedSum,
}

#[derive(Clone, Copy)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Area contribution of a step at `(x, y)` whose right neighbour has height
/// `y_right` (`-∞` if none).
fn term(x: f64, y: f64, y_right: f64) -> f64 {
    if y_right == f64::NEG_INFINITY {
        (x + y).exp()
    } else {
        (x + y).exp() * -(y_right - y).exp_m1()
    }
}

impl Staircase {
    fn right_of(&self, x: f64) -> Option<(f64, f64)> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.steps.range((Excluded(Key(x)), Unbounded)).next().map(|(k, &y)| (k.0, y))
    }

    fn insert(&mut self, px: f64, py: f64) {
        use std::ops::Bound::{Included, Unbounded};
        if let Some((_, y)) = self.steps.range((Included(Key(px)), Unbounded)).next() {
            if *y >= py {
                return;
            }
        }
        let y_right = self.right_of(px).map_or(f64::NEG_INFINITY, |r| r.1);
        // Steps dominated by p are contiguous immediately left of px.
        let mut removed: Vec<(f64, f64)> = Vec::new();
        let mut left: Option<(f64, f64)> = None;
        for (k, &y) in self.steps.range(..=Key(px)).rev() {
            if y <= py {
                removed.push((k.0, y));
            } else {
                left = Some((k.0, y));
                break;
            }
        }
        // Removed steps, listed right to left; each one's right neighbour is
        // the previous entry (or the step right of px).
        let mut right_y = y_right;
        for &(x, y) in &removed {
            self.area.add(-term(x, y, right_y));
            self.steps.remove(&Key(x));
            right_y = y;
        }
        if let Some((lx, ly)) = left {
            self.area.add(-term(lx, ly, right_y));
            self.area.add(term(lx, ly, py));
        }
        self.area.add(term(px, py, y_right));
        self.steps.insert(Key(px), py);
    }
}

/// Slabs over the third coordinate with an incremental staircase.
fn sweep3(rows: &[&[f64]]) -> f64 {
    let mut order: Vec<&[f64]> = rows.to_vec();
    order.sort_by(|a, b| b[2].total_cmp(&a[2]));
    let mut stair = Staircase::default();
    let mut acc = CompensatedSum::default();
    for k in 0..order.len() {
        stair.insert(order[k][0], order[k][1]);
        let z = order[k][2];
        let width = match order.get(k + 1) {
            Some(next) => z.exp() * -(next[2] - z).exp_m1(),
            None => z.exp(),
        };
        acc.add(width * stair.area.value());
    }
    acc.value()
}

/// `P(∃k: X < v_k)` for `X_i = −E_i`, `E_i ~ Exp(1)` independent, with its
/// standard error. The union integral of shifted points equals this fraction.
fn sampled_fraction(rows: &[&[f64]], d: usize) -> (f64, f64) {
    let mut rng = replicate_rng(0, streams::ORTHANT_FALLBACK, rows.len() as u64);
    let mut x = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..FALLBACK_SAMPLES {
        for xi in x.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *xi = -e;
        }
        if rows.iter().any(|v| v.iter().zip(&x).all(|(vi, xi)| xi < vi)) {
            hits += 1;
        }
    }
    let n = FALLBACK_SAMPLES as f64;
    let p = hits as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Exact inclusion–exclusion over the Pareto maxima, for at most
/// [`INCLUSION_EXCLUSION_MAX`] maxima.
pub fn inclusion_exclusion(ps: &PointSet) -> Result<f64, OrthantError> {
    if ps.is_empty() {
        return Ok(0.0);
    }
    let shift = ps.max_corner();
    let mut shifted = Vec::with_capacity(ps.data.len());
    for p in ps.iter() {
        shifted.extend(p.iter().zip(&shift).map(|(x, m)| x - m));
    }
    let maxima = pareto_maxima(&PointSet { dim: ps.dim, data: shifted });
    if maxima.len() > INCLUSION_EXCLUSION_MAX {
        return Err(OrthantError::TooManyPoints(maxima.len()));
    }
    let rows: Vec<&[f64]> = maxima.iter().collect();
    let mut acc = CompensatedSum::default();
    let mut corner = vec![f64::INFINITY; ps.dim];
    subsets(&rows, 0, &mut corner, 0, &mut acc);
    Ok(acc.value().max(0.0) * shift.iter().sum::<f64>().exp())
}

fn subsets(rows: &[&[f64]], start: usize, corner: &mut Vec<f64>, size: usize, acc: &mut CompensatedSum) {
    for k in start..rows.len() {
        let saved = corner.clone();
        for (c, &v) in corner.iter_mut().zip(rows[k]) {
            *c = c.min(v);
        }
        let sign = if size.is_multiple_of(2) { 1.0 } else { -1.0 };
        acc.add(sign * corner.iter().sum::<f64>().exp());
        subsets(rows, k + 1, corner, size + 1, acc);
        *corner = saved;
    }
}

/// Union integral for the deterministic drift `{−t v : 0 ≤ t ≤ Λ}`:
/// `1 + Λ Σ v_i⁻` when `1ᵀv = 0`, else `1 + (1 − e^{−aΛ})/a · Σ v_i⁻`.
pub fn closed_form_linear_drift(v: &[f64], lambda: f64) -> Result<f64, OrthantError> {
    if v.iter().any(|x| !x.is_finite()) || lambda.is_nan() || lambda < 0.0 {
        return Err(OrthantError::NonFinite);
    }
    let a: f64 = v.iter().sum();
    if a < 0.0 {
        return Err(OrthantError::NegativeDrift(a));
    }
    let neg: f64 = v.iter().map(|x| (-x).max(0.0)).sum();
    if neg == 0.0 {
        return Ok(1.0);
    }
    if a == 0.0 {
        Ok(1.0 + lambda * neg)
    } else {
        Ok(1.0 + -(-a * lambda).exp_m1() / a * neg)
    }
}
