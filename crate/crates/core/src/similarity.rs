//! Similarity kernels: cosine similarity, equal-width quantization, the
//! quantized influence measure (QIM) and the I-score statistics it extends.
//!
//! Everything here is a pure function over borrowed slices, so the kernels
//! can be called from any number of threads.

use std::collections::BTreeMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default nominal bin count used by the judge.
pub const DEFAULT_BINS: usize = 16;
/// Accepted bin-count range for user-facing options.
pub const MIN_BINS: usize = 2;
pub const MAX_BINS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector (degenerate embedding)")]
    ZeroNorm,
    #[error("empty input")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("bin count must be at least 1, got {0}")]
    InvalidBinCount(usize),
    #[error("value at index {0} is not 0 or 1")]
    NonBinary(usize),
    #[error("response has zero variance")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, SimilarityError>;

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SimilarityError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension.max(1)])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    /// An all-zero vector has no direction and cannot be compared by cosine.
    pub fn is_degenerate(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = SimilarityError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Vec<f64> {
        e.0
    }
}

/// Double-double arithmetic, used so that cosine similarity is evaluated
/// with roughly 106 bits before the final rounding.
mod dd {
    #[derive(Clone, Copy, Debug)]
    pub struct Dd(pub f64, pub f64);

    #[inline]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd(s, b - (s - a))
    }

    #[inline]
    pub fn prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        Dd(p, a.mul_add(b, -p))
    }

    #[inline]
    pub fn add(a: Dd, b: Dd) -> Dd {
        let (s, e) = two_sum(a.0, b.0);
        quick_two_sum(s, e + a.1 + b.1)
    }

    #[inline]
    pub fn sub(a: Dd, b: Dd) -> Dd {
        add(a, Dd(-b.0, -b.1))
    }

    #[inline]
    pub fn mul(a: Dd, b: Dd) -> Dd {
        let p = prod(a.0, b.0);
        quick_two_sum(p.0, p.1 + a.0 * b.1 + a.1 * b.0)
    }

    fn mul_f64(a: Dd, b: f64) -> Dd {
        mul(a, Dd(b, 0.0))
    }

    pub fn div(a: Dd, b: Dd) -> Dd {
        let q1 = a.0 / b.0;
        let r = sub(a, mul_f64(b, q1));
        let q2 = r.0 / b.0;
        let r = sub(r, mul_f64(b, q2));
        let q3 = r.0 / b.0;
        add(quick_two_sum(q1, q2), Dd(q3, 0.0))
    }

    pub fn sqrt(a: Dd) -> Dd {
        if a.0 <= 0.0 {
            return Dd(0.0, 0.0);
        }
        let y = a.0.sqrt();
        let diff = sub(a, prod(y, y));
        quick_two_sum(y, diff.0 / (2.0 * y))
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(SimilarityError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// The dot product and both squared norms are accumulated in double-double
/// precision, so the result depends only on the exact real-valued sums. In
/// particular repeating every element of both inputs leaves the value
/// bit-for-bit unchanged, and `cosine_similarity(a, a)` is exactly `1.0`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(SimilarityError::Empty);
    }
    check_finite(a)?;
    check_finite(b)?;

    let zero = dd::Dd(0.0, 0.0);
    let (mut dot, mut na, mut nb) = (zero, zero, zero);
    for (&x, &y) in a.iter().zip(b) {
        dot = dd::add(dot, dd::prod(x, y));
        na = dd::add(na, dd::prod(x, x));
        nb = dd::add(nb, dd::prod(y, y));
    }
    if na.0 == 0.0 || nb.0 == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    let denom = dd::sqrt(dd::mul(na, nb));
    let cos = dd::div(dot, denom).0;
    Ok(cos.clamp(-1.0, 1.0))
}

/// How a real-valued array is cut into bins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningScheme {
    /// `q` intervals of equal width over `[min, max]`.
    #[default]
    EqualWidth,
    /// Interior edges at the empirical `i/q` quantiles.
    Quantile,
}

/// Bin count for a "q-bit" reading of the bin parameter (`2^bits` bins).
pub fn bins_for_bits(bits: u32) -> usize {
    1usize << bits.min(16)
}

/// Assignment of every array element to one of `q_requested` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPartition {
    pub q_requested: usize,
    /// `q_requested + 1` ascending edges.
    pub edges: Vec<f64>,
    pub labels: Vec<usize>,
    /// Sorted, distinct labels that actually occur.
    pub occupied: Vec<usize>,
}

impl BinPartition {
    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }
}

/// Equal-width quantization of `x` into `q` bins.
///
/// Element `v` goes to `floor((v - min) * q / (max - min))`, with the maximum
/// clamped into bin `q - 1`. A constant array maps entirely to bin 0.
pub fn quantize(x: &[f64], q: usize) -> Result<BinPartition> {
    quantize_with(x, q, BinningScheme::EqualWidth)
}

pub fn quantize_with(x: &[f64], q: usize, scheme: BinningScheme) -> Result<BinPartition> {
    if q == 0 {
        return Err(SimilarityError::InvalidBinCount(q));
    }
    if x.is_empty() {
        return Err(SimilarityError::Empty);
    }
    check_finite(x)?;

    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });

    let (edges, labels) = if max == min {
        (vec![min; q + 1], vec![0; x.len()])
    } else {
        match scheme {
            BinningScheme::EqualWidth => equal_width(x, q, min, max),
            BinningScheme::Quantile => quantile(x, q, min, max),
        }
    };

    let mut occupied = labels.clone();
    occupied.sort_unstable();
    occupied.dedup();

    Ok(BinPartition {
        q_requested: q,
        edges,
        labels,
        occupied,
    })
}

fn equal_width(x: &[f64], q: usize, min: f64, max: f64) -> (Vec<f64>, Vec<usize>) {
    let span = max - min;
    let qf = q as f64;
    let edges = (0..=q)
        .map(|i| if i == q { max } else { min + span * i as f64 / qf })
        .collect();
    let labels = x
        .iter()
        .map(|&v| {
            let idx = ((v - min) * qf / span).floor();
            (idx.max(0.0) as usize).min(q - 1)
        })
        .collect();
    (edges, labels)
}

fn quantile(x: &[f64], q: usize, min: f64, max: f64) -> (Vec<f64>, Vec<usize>) {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let interior: Vec<f64> = (1..q).map(|i| sorted[(i * n / q).min(n - 1)]).collect();
    let labels = x
        .iter()
        .map(|&v| interior.partition_point(|&e| e <= v).min(q - 1))
        .collect();
    let mut edges = Vec::with_capacity(q + 1);
    edges.push(min);
    edges.extend(interior);
    edges.push(max);
    (edges, labels)
}

/// Per-bin count and local mean of a response grouped by partition labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    pub label: usize,
    pub count: usize,
    pub local_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionStats {
    /// One entry per occupied label, ascending by label.
    pub bins: Vec<BinStat>,
    pub global_mean: f64,
    /// Population standard deviation (divisor `n`).
    pub sigma: f64,
    pub n: usize,
    /// True when every response value is identical.
    pub constant_response: bool,
}

impl PartitionStats {
    /// `Σ n_j² (Ȳ_j − Ȳ)²` over occupied partition elements.
    pub fn general_iscore(&self) -> f64 {
        if self.constant_response {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| {
                let n = b.count as f64;
                let d = b.local_mean - self.global_mean;
                n * n * d * d
            })
            .sum()
    }
}

pub fn partition_stats(labels: &[usize], y: &[f64]) -> Result<PartitionStats> {
    if labels.len() != y.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: labels.len(),
            right: y.len(),
        });
    }
    if y.is_empty() {
        return Err(SimilarityError::Empty);
    }
    check_finite(y)?;

    let n = y.len();
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&label, &v) in labels.iter().zip(y) {
        let e = groups.entry(label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += v;
    }
    let global_mean = y.iter().sum::<f64>() / n as f64;
    let constant_response = y.iter().all(|&v| v == y[0]);
    let sigma = if constant_response {
        0.0
    } else {
        (y.iter().map(|&v| (v - global_mean).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let bins = groups
        .into_iter()
        .map(|(label, (count, sum))| BinStat {
            label,
            count,
            local_mean: sum / count as f64,
        })
        .collect();

    Ok(PartitionStats {
        bins,
        global_mean,
        sigma,
        n,
        constant_response,
    })
}

/// General I-score `Σ n_j² (Ȳ_j − Ȳ)²` of `y` under the partition `labels`.
pub fn iscore_general(labels: &[usize], y: &[f64]) -> Result<f64> {
    Ok(partition_stats(labels, y)?.general_iscore())
}

/// Binary I-score `Σ_j [n₁(j) − n_j·π₁]²` for a 0/1 response.
pub fn iscore_binary(labels: &[usize], y: &[f64]) -> Result<f64> {
    if labels.len() != y.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: labels.len(),
            right: y.len(),
        });
    }
    if y.is_empty() {
        return Err(SimilarityError::Empty);
    }
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(SimilarityError::NonBinary(i));
    }
    let ones_total = y.iter().filter(|&&v| v == 1.0).count();
    let pi1 = ones_total as f64 / y.len() as f64;

    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&label, &v) in labels.iter().zip(y) {
        let e = groups.entry(label).or_insert((0, 0));
        e.0 += 1;
        if v == 1.0 {
            e.1 += 1;
        }
    }
    Ok(groups
        .values()
        .map(|&(nj, ones)| {
            let d = ones as f64 - nj as f64 * pi1;
            d * d
        })
        .sum())
}

/// `I / (n σ²)` with `σ²` the population variance of `y`.
pub fn normalized_iscore(labels: &[usize], y: &[f64]) -> Result<f64> {
    let stats = partition_stats(labels, y)?;
    if stats.constant_response || stats.sigma == 0.0 {
        return Err(SimilarityError::ZeroVariance);
    }
    Ok(stats.general_iscore() / (stats.n as f64 * stats.sigma * stats.sigma))
}

/// Quantized influence of query `x` on reference `y` with `q` equal-width bins.
///
/// `y` is grouped by the bins of `x`; the result is
/// `Σ (ȳ_local,i − ȳ_global)² · N_i²` over occupied bins divided by
/// `|occupied| · σ_Y`. A constant `y` scores 0.
pub fn qim(x: &[f64], y: &[f64], q: usize) -> Result<f64> {
    qim_with(x, y, q, BinningScheme::EqualWidth)
}

pub fn qim_with(x: &[f64], y: &[f64], q: usize, scheme: BinningScheme) -> Result<f64> {
    if x.len() != y.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let partition = quantize_with(x, q, scheme)?;
    let stats = partition_stats(&partition.labels, y)?;
    if stats.constant_response {
        return Ok(0.0);
    }
    Ok(stats.general_iscore() / (stats.bins.len() as f64 * stats.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(SimilarityError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(SimilarityError::ZeroNorm)
        );
        assert_eq!(
            cosine_similarity(&[f64::NAN], &[1.0]),
            Err(SimilarityError::NonFinite(0))
        );
    }

    #[test]
    fn quantize_examples() {
        let p = quantize(&[1.0, 1.0, 2.0, 2.0], 2).unwrap();
        assert_eq!(p.labels, vec![0, 0, 1, 1]);
        assert_eq!(p.edges, vec![1.0, 1.5, 2.0]);

        let p = quantize(&[5.0, 5.0, 5.0], 4).unwrap();
        assert_eq!(p.labels, vec![0, 0, 0]);
        assert_eq!(p.occupied, vec![0]);

        let p = quantize(&[0.0, 0.24, 0.5, 0.99], 4).unwrap();
        assert_eq!(p.labels, vec![0, 0, 2, 3]);
        assert_eq!(p.occupied, vec![0, 2, 3]);
        assert_eq!(p.edges.len(), 5);
    }

    #[test]
    fn quantize_rejects_zero_bins() {
        assert_eq!(quantize(&[1.0], 0), Err(SimilarityError::InvalidBinCount(0)));
        assert_eq!(quantize(&[], 3), Err(SimilarityError::Empty));
    }

    #[test]
    fn quantile_scheme_balances_counts() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64).powi(3)).collect();
        let p = quantize_with(&x, 4, BinningScheme::Quantile).unwrap();
        for bin in 0..4 {
            assert_eq!(p.labels.iter().filter(|&&l| l == bin).count(), 25);
        }
    }

    #[test]
    fn qim_examples() {
        let x = [1.0, 1.0, 2.0, 2.0];
        let y = [0.0, 0.0, 1.0, 1.0];
        assert!(close(qim(&x, &y, 2).unwrap(), 2.0, 1e-12));
        assert_eq!(qim(&[3.0, 1.0, 2.0], &[0.1, 0.1, 0.1], 4).unwrap(), 0.0);

        let rep = |v: &[f64]| v.iter().flat_map(|&e| [e; 3]).collect::<Vec<_>>();
        assert!(close(qim(&rep(&x), &rep(&y), 2).unwrap(), 18.0, 1e-12));
    }

    #[test]
    fn qim_length_mismatch() {
        assert!(matches!(
            qim(&[1.0, 2.0], &[1.0], 2),
            Err(SimilarityError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn iscore_examples() {
        assert_eq!(iscore_general(&[0, 0, 1, 1], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(iscore_general(&[7, 7, 7], &[1.0, 5.0, 2.0]).unwrap(), 0.0);
        assert_eq!(iscore_general(&[0, 1, 2], &[1.0, 2.0, 3.0]).unwrap(), 2.0);

        assert_eq!(iscore_binary(&[0, 0, 1, 1], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(iscore_binary(&[0, 1, 1], &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(iscore_binary(&[0, 1], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(
            iscore_binary(&[0, 1], &[1.0, 0.5]),
            Err(SimilarityError::NonBinary(1))
        );
    }

    #[test]
    fn normalized_examples() {
        assert!(close(
            normalized_iscore(&[0, 0, 1, 1], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            2.0,
            1e-12
        ));
        assert_eq!(normalized_iscore(&[0, 0, 0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        assert!(close(
            normalized_iscore(&[0, 1, 2], &[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            1e-12
        ));
        assert_eq!(
            normalized_iscore(&[0, 1], &[2.0, 2.0]),
            Err(SimilarityError::ZeroVariance)
        );
    }

    #[test]
    fn stats_weighted_mean_matches_global() {
        let labels = [0, 2, 2, 5, 5, 5];
        let y = [0.3, 1.2, -4.0, 2.5, 0.0, 7.75];
        let s = partition_stats(&labels, &y).unwrap();
        let total: usize = s.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, s.n);
        let weighted: f64 =
            s.bins.iter().map(|b| b.count as f64 * b.local_mean).sum::<f64>() / s.n as f64;
        assert!(close(weighted, s.global_mean, 1e-9));
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(Embedding::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::zeros(3).is_degenerate());
        let e: Embedding = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(e.dimension(), 2);
        assert!(serde_json::from_str::<Embedding>("[]").is_err());
    }

    #[test]
    fn bits_reading() {
        assert_eq!(bins_for_bits(4), 16);
        assert_eq!(bins_for_bits(5), 32);
    }
}
