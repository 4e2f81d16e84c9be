//! Stratified datasets with their CSV format and seeded splits, plus the
//! preprocessing helpers used to turn raw features into strata.
//!
//! CSV layout is a header `z,y1,...,yn` followed by one record per line, with
//! `z` a 0-based stratum index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Cholesky, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("line {line}: stratum {z} out of range for K = {k}")]
    Range { line: usize, z: usize, k: usize },
    #[error("series is empty")]
    EmptySeries,
    #[error("invalid percentiles ({lo}, {hi}); need 0 <= lo < hi <= 100")]
    InvalidPercentiles { lo: f64, hi: f64 },
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub z: usize,
    pub y: Vec<f64>,
}

/// Records `(z, y)` with `z ∈ [0, k)` and `y ∈ Rⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratDataset {
    n: usize,
    k: usize,
    records: Vec<Record>,
}

impl StratDataset {
    pub fn new(n: usize, k: usize, records: Vec<Record>) -> Result<Self, DataError> {
        for (i, r) in records.iter().enumerate() {
            if r.y.len() != n {
                return Err(DataError::DimensionMismatch { expected: n, got: r.y.len() });
            }
            if r.z >= k {
                return Err(DataError::Range { line: i + 2, z: r.z, k });
            }
        }
        Ok(Self { n, k, records })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same records with every `z` set to 0 and `k = 1`.
    pub fn pooled(&self) -> StratDataset {
        let records = self.records.iter().map(|r| Record { z: 0, y: r.y.clone() }).collect();
        StratDataset { n: self.n, k: 1, records }
    }

    pub fn subset(&self, idx: &[usize]) -> StratDataset {
        let records = idx.iter().map(|&i| self.records[i].clone()).collect();
        StratDataset { n: self.n, k: self.k, records }
    }

    /// Concatenation; both datasets must share `n` and `k`.
    pub fn concat(&self, other: &StratDataset) -> Result<StratDataset, DataError> {
        if self.n != other.n || self.k != other.k {
            return Err(DataError::DimensionMismatch { expected: self.n, got: other.n });
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(StratDataset { n: self.n, k: self.k, records })
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for r in &self.records {
            c[r.z] += 1;
        }
        c
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("z");
        for i in 1..=self.n {
            let _ = write!(s, ",y{i}");
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{}", r.z);
            for v in &r.y {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_csv_string()).map_err(|e| DataError::Io(e.to_string()))
    }
}

/// Loads `z,y1,...,yn`. With `n = None` the dimension comes from the header;
/// with `k = None` the stratum count is `max z + 1`.
pub fn load_csv(path: &Path, n: Option<usize>, k: Option<usize>) -> Result<StratDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(&text, n, k)
}

pub fn parse_csv(text: &str, n: Option<usize>, k: Option<usize>) -> Result<StratDataset, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse { line: 1, reason: "missing header".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"z") {
        return Err(DataError::Parse { line: 1, reason: "first column must be `z`".into() });
    }
    let n = n.unwrap_or(cols.len() - 1);
    if cols.len() != n + 1 {
        return Err(DataError::DimensionMismatch { expected: n, got: cols.len() - 1 });
    }
    let mut records = Vec::new();
    let mut max_z = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n + 1 {
            return Err(DataError::Parse {
                line: line_no,
                reason: format!("expected {} columns, got {}", n + 1, fields.len()),
            });
        }
        let z = fields[0]
            .parse::<usize>()
            .map_err(|e| DataError::Parse { line: line_no, reason: format!("z: {e}") })?;
        if let Some(k) = k {
            if z >= k {
                return Err(DataError::Range { line: line_no, z, k });
            }
        }
        max_z = max_z.max(z);
        let y = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DataError::Parse { line: line_no, reason: e.to_string() })?;
        records.push(Record { z, y });
    }
    let k = k.unwrap_or(if records.is_empty() { 1 } else { max_z + 1 });
    StratDataset::new(n, k, records)
}

/// Empirical quantile of a sorted sample at percentile `p ∈ [0, 100]`,
/// linearly interpolating between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * (p / 100.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Clips values to their `[q(p_lo), q(p_hi)]` percentile range.
pub fn winsorize(values: &[f64], p_lo: f64, p_hi: f64) -> Result<Vec<f64>, DataError> {
    if values.is_empty() {
        return Err(DataError::EmptySeries);
    }
    if !(0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0) {
        return Err(DataError::InvalidPercentiles { lo: p_lo, hi: p_hi });
    }
    // Thresholds are order statistics (nearest rank) so that winsorizing
    // twice gives the same series.
    let sorted = sorted_copy(values);
    let rank = |p: f64| ((p / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    let lo = sorted[rank(p_lo)];
    let hi = sorted[rank(p_hi)];
    Ok(values.iter().map(|v| v.clamp(lo, hi)).collect())
}

/// Quantile bin edges fitted on a training series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    /// Interior edges at percentiles `100·b/bins`, `b = 1..bins`.
    edges: Vec<f64>,
}

impl QuantileBins {
    pub fn fit(values: &[f64], bins: usize) -> Result<Self, DataError> {
        if bins == 0 {
            return Err(DataError::NoBins);
        }
        if values.is_empty() {
            return Err(DataError::EmptySeries);
        }
        let sorted = sorted_copy(values);
        let edges = (1..bins).map(|b| quantile_sorted(&sorted, 100.0 * b as f64 / bins as f64)).collect();
        Ok(Self { edges })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Number of edges strictly below `v`; values outside the training range
    /// land in the edge bins.
    pub fn assign(&self, v: f64) -> usize {
        self.edges.partition_point(|&e| e < v)
    }
}

/// Bins a series by its own empirical quantiles.
pub fn quantile_bin(values: &[f64], bins: usize) -> Result<Vec<usize>, DataError> {
    let q = QuantileBins::fit(values, bins)?;
    Ok(values.iter().map(|&v| q.assign(v)).collect())
}

/// Train/validation/test fractions and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, DataError> {
        let s = Self { train, val, test, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for f in [self.train, self.val, self.test] {
            if !(0.0..=1.0).contains(&f) {
                return Err(DataError::InvalidSplit(format!("fraction {f} outside [0, 1]")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DataError::InvalidSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle then contiguous slicing; validation and test sizes are
/// rounded down and the remainder goes to training. Each part keeps the
/// original record order.
pub fn split_indices(m: usize, spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let size = |f: f64| ((f * m as f64) + 1e-9).floor() as usize;
    let n_val = size(spec.val).min(m);
    let n_test = size(spec.test).min(m - n_val);
    let n_train = m - n_val - n_test;
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

pub fn split(
    ds: &StratDataset,
    spec: &SplitSpec,
) -> Result<(StratDataset, StratDataset, StratDataset), DataError> {
    let s = split_indices(ds.m(), spec)?;
    Ok((ds.subset(&s.train), ds.subset(&s.val), ds.subset(&s.test)))
}

/// Zero-mean Gaussian data whose covariance rotates smoothly around a cycle
/// of `k` strata (hours of a day, say).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclicConfig {
    pub seed: u64,
    pub k: usize,
    pub n: usize,
    pub samples: usize,
    /// Size of the periodic part of the covariance factor.
    pub amplitude: f64,
}

impl Default for CyclicConfig {
    fn default() -> Self {
        Self { seed: 0, k: 24, n: 6, samples: 1200, amplitude: 1.0 }
    }
}

/// True covariances `Σ_k = C_k C_kᵀ + 0.1·I` with
/// `C_k = C₀ + a·(cos φ_k C₁ + sin φ_k C₂)`, `φ_k = 2πk/K`, and records drawn
/// uniformly over strata.
pub fn cyclic_gaussian(cfg: &CyclicConfig) -> Result<(Vec<SymMatrix>, StratDataset), DataError> {
    let (k, n) = (cfg.k, cfg.n);
    if k == 0 || n == 0 {
        return Err(DataError::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut factor = || -> Vec<f64> { (0..n * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect() };
    let (c0, c1, c2) = (factor(), factor(), factor());
    let covs: Vec<SymMatrix> = (0..k)
        .map(|z| {
            let phi = 2.0 * std::f64::consts::PI * z as f64 / k as f64;
            let (cs, sn) = (cfg.amplitude * phi.cos(), cfg.amplitude * phi.sin());
            let c: Vec<f64> = (0..n * n).map(|p| c0[p] + cs * c1[p] + sn * c2[p]).collect();
            SymMatrix::from_lower_fn(n, |i, j| {
                let dot: f64 = (0..n).map(|l| c[i * n + l] * c[j * n + l]).sum();
                dot + if i == j { 0.1 } else { 0.0 }
            })
        })
        .collect();
    let chols: Vec<Cholesky> = covs.iter().map(|c| Cholesky::new(c).expect("C Cᵀ + 0.1 I is positive definite")).collect();
    let records = (0..cfg.samples)
        .map(|_| {
            let z = rng.random_range(0..k);
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            Record { z, y: chols[z].lower_mul(&g) }
        })
        .collect();
    Ok((covs, StratDataset::new(n, k, records)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_records() {
        let ds = parse_csv("z,y1,y2\n0,1.0,2.0\n1,-1,0.5\n", Some(2), None).unwrap();
        assert_eq!(parse_csv("z,y1,y2\n0,1.0,2.0\n", None, None).unwrap().n(), 2);
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.records()[1].y, vec![-1.0, 0.5]);
    }

    #[test]
    fn parse_errors() {
        let err = parse_csv("z,y1,y2\n0,1.0\n", Some(2), None).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
        let err = parse_csv("z,y1\n3,1.0\n", Some(1), Some(3)).unwrap_err();
        assert_eq!(err, DataError::Range { line: 2, z: 3, k: 3 });
        let err = parse_csv("z,y1\n0,abc\n", Some(1), None).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
        assert!(matches!(parse_csv("z,y1,y2\n", Some(3), None), Err(DataError::DimensionMismatch { .. })));
        assert!(matches!(parse_csv("k,y1\n", Some(1), None), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let ds = StratDataset::new(
            2,
            3,
            vec![Record { z: 2, y: vec![0.1, 1.0 / 3.0] }, Record { z: 0, y: vec![-1e-300, 7.0] }],
        )
        .unwrap();
        assert_eq!(parse_csv(&ds.to_csv_string(), Some(2), Some(3)).unwrap(), ds);
    }

    #[test]
    fn winsorize_constant_and_clip() {
        assert_eq!(winsorize(&[2.0; 5], 5.0, 95.0).unwrap(), vec![2.0; 5]);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let w = winsorize(&v, 5.0, 95.0).unwrap();
        assert_eq!(w[0], 6.0);
        assert_eq!(w[99], 95.0);
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
        assert!(matches!(winsorize(&[], 5.0, 95.0), Err(DataError::EmptySeries)));
        assert!(matches!(winsorize(&v, 50.0, 5.0), Err(DataError::InvalidPercentiles { .. })));
    }

    #[test]
    fn winsorize_idempotent() {
        let v: Vec<f64> = (0..57).map(|i| ((i * 37) % 57) as f64 * 1.3 - 20.0).collect();
        let once = winsorize(&v, 5.0, 95.0).unwrap();
        let twice = winsorize(&once, 5.0, 95.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn quantile_bins_uniform() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let b = quantile_bin(&v, 10).unwrap();
        for bin in 0..10 {
            assert_eq!(b.iter().filter(|&&x| x == bin).count(), 10);
        }
        assert_eq!(quantile_bin(&[4.0; 7], 5).unwrap(), vec![0; 7]);
        assert_eq!(QuantileBins::fit(&v, 50).unwrap().bins(), 50);
        assert!(matches!(quantile_bin(&v, 0), Err(DataError::NoBins)));
    }

    #[test]
    fn quantile_bins_clamp_unseen_values() {
        let q = QuantileBins::fit(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(q.assign(-100.0), 0);
        assert_eq!(q.assign(100.0), 3);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 7).unwrap();
        let s = split_indices(10, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split_indices(10, &spec).unwrap());
        let all = split_indices(9, &SplitSpec::new(1.0, 0.0, 0.0, 1).unwrap()).unwrap();
        assert_eq!(all.train, (0..9).collect::<Vec<_>>());
        assert!(SplitSpec::new(0.5, 0.2, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.2, -0.2, 0.0, 0).is_err());
    }

    #[test]
    fn split_is_partition() {
        for seed in 0..1000u64 {
            let m = (seed % 37) as usize;
            let s = split_indices(m, &SplitSpec::new(0.6, 0.2, 0.2, seed).unwrap()).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..m).collect::<Vec<_>>());
            assert!((s.val.len() as f64 - 0.2 * m as f64).abs() <= 1.0);
            assert!((s.test.len() as f64 - 0.2 * m as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn cyclic_generator_is_seeded_and_periodic() {
        let cfg = CyclicConfig { samples: 100, ..CyclicConfig::default() };
        let (covs, ds) = cyclic_gaussian(&cfg).unwrap();
        let (_, again) = cyclic_gaussian(&cfg).unwrap();
        assert_eq!(ds, again);
        assert_eq!(ds.m(), 100);
        assert_eq!(covs.len(), 24);
        let wrap = covs[23].frobenius_distance(&covs[0]);
        let far = covs[12].frobenius_distance(&covs[0]);
        assert!(wrap < far);
    }
}
