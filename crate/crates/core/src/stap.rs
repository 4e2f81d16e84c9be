//! Synthetic space-time adaptive processing (STAP) experiment: interference
//! covariances indexed by radar orientation, the complex-to-real embedding,
//! steering vectors, the matched-filter detection statistic and ROC curves.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Record, StratDataset};
use crate::graph::{cartesian_product, cycle_graph, path_graph, GraphError, RegGraph};
use crate::linalg::{sym_eig, Cholesky, LinalgError, SymMatrix};
use crate::model::StratModel;

pub const RANGE_KM: (f64, f64) = (35.0, 50.0);
pub const AZIMUTH_DEG: (f64, f64) = (87.0, 267.0);
pub const DOPPLER_HZ: (f64, f64) = (-992.0, 992.0);

// Independent random streams drawn from one base seed.
const STREAM_BASIS: u64 = 0;
const STREAM_ALLOCATION: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_TRIALS: u64 = 3;

#[derive(Debug, Error)]
pub enum StapError {
    #[error("steering vector is zero")]
    ZeroSteering,
    #[error("ROC needs both positive and negative labels")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("invalid STAP configuration: {0}")]
    InvalidConfig(String),
    #[error("model has K = {model} but the experiment has {expected} strata")]
    ModelShape { model: usize, expected: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Dense Hermitian matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexHermitian {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexHermitian {
    /// Hermitian part `(M + Mᴴ)/2` of a square row-major matrix.
    pub fn new(dim: usize, mut data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch { expected: dim * dim, got: data.len() });
        }
        for i in 0..dim {
            data[i * dim + i] = Complex64::new(data[i * dim + i].re, 0.0);
            for j in 0..i {
                let v = 0.5 * (data[i * dim + j] + data[j * dim + i].conj());
                data[i * dim + j] = v;
                data[j * dim + i] = v.conj();
            }
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex64::new(0.0, 0.0); dim * dim] }
    }

    /// `B·Bᴴ/dim` for a standard complex Gaussian `B`.
    pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let b: Vec<Complex64> = (0..dim * dim)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(s * re, s * im)
            })
            .collect();
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..dim {
                    acc += b[i * dim + l] * b[j * dim + l].conj();
                }
                acc /= dim as f64;
                data[i * dim + j] = acc;
                data[j * dim + i] = acc.conj();
            }
        }
        Self { dim, data }
    }

    /// Inverse of [`realify`]: reads `Re` and `Im` back from a real embedding,
    /// averaging the redundant blocks.
    pub fn from_real_embedding(m: &SymMatrix) -> Result<Self, LinalgError> {
        let n2 = m.dim();
        if n2 % 2 != 0 {
            return Err(LinalgError::DimensionMismatch { expected: n2 + 1, got: n2 });
        }
        let d = n2 / 2;
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let re = 0.5 * (m.get(i, j) + m.get(d + i, d + j));
                let im = 0.5 * (m.get(d + i, j) - m.get(i, d + j));
                data.push(Complex64::new(re, im));
            }
        }
        Self::new(d, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i].re).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        Self { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b * c).collect() }
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.data[i * self.dim + j] * v[j]).sum()).collect()
    }
}

/// Real symmetric embedding `[[Re H, −Im H], [Im H, Re H]]`.
pub fn realify(h: &ComplexHermitian) -> SymMatrix {
    let d = h.dim();
    SymMatrix::from_lower_fn(2 * d, |i, j| {
        let (bi, ii) = (i / d, i % d);
        let (bj, jj) = (j / d, j % d);
        let v = h.get(ii, jj);
        match (bi, bj) {
            (0, 0) | (1, 1) => v.re,
            (1, 0) => v.im,
            _ => -v.im,
        }
    })
}

/// `(Re v, Im v)`.
pub fn realify_vector(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

/// Binned radar orientation; `r`, `a`, `d` are bin centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarOrientation {
    /// Range (km).
    pub r: f64,
    /// Azimuth (degrees).
    pub a: f64,
    /// Doppler frequency (Hz).
    pub d: f64,
    pub bin: [usize; 3],
}

fn bin_center(span: (f64, f64), bins: usize, i: usize) -> f64 {
    span.0 + (span.1 - span.0) * (i as f64 + 0.5) / bins as f64
}

impl RadarOrientation {
    pub fn from_bins(bins: [usize; 3], bin: [usize; 3]) -> Self {
        Self {
            r: bin_center(RANGE_KM, bins[0], bin[0]),
            a: bin_center(AZIMUTH_DEG, bins[1], bin[1]),
            d: bin_center(DOPPLER_HZ, bins[2], bin[2]),
            bin,
        }
    }

    /// Stratum index `(i_r·B_a + i_a)·B_d + i_d`, matching the vertex order of
    /// the range □ azimuth □ Doppler product graph.
    pub fn index(&self, bins: [usize; 3]) -> usize {
        (self.bin[0] * bins[1] + self.bin[1]) * bins[2] + self.bin[2]
    }

    pub fn from_index(bins: [usize; 3], k: usize) -> Self {
        let i_d = k % bins[2];
        let i_a = (k / bins[2]) % bins[1];
        let i_r = k / (bins[1] * bins[2]);
        Self::from_bins(bins, [i_r, i_a, i_d])
    }

    pub fn range_coefficient(&self) -> f64 {
        (4e4 / self.r).powi(2)
    }

    pub fn azimuth_coefficient(&self) -> f64 {
        let t = std::f64::consts::PI * self.a / 180.0;
        t.cos() + t.sin()
    }

    pub fn doppler_coefficient(&self) -> f64 {
        1.0 + self.d / 1000.0
    }

    fn coefficients(&self) -> [f64; 3] {
        [self.range_coefficient(), self.azimuth_coefficient(), self.doppler_coefficient()]
    }
}

/// Generator and experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StapConfig {
    pub seed: u64,
    /// Complex dimension; records have `2·complex_dim` coordinates.
    pub complex_dim: usize,
    /// Bins for range, azimuth, Doppler.
    pub bins: [usize; 3],
    /// Total number of records.
    pub samples: usize,
    /// Fraction of strata that receive samples.
    pub active_fraction: f64,
    pub pulse_repetition_hz: f64,
    /// Eigenvalue floor relative to the mean absolute eigenvalue of each `Σ̃_z`.
    pub pd_floor_rel: f64,
    /// Rescale each basis matrix to unit trace over the mean absolute value of
    /// its coefficient on the bin grid, so no term dominates. Off reproduces
    /// the raw mixing formula.
    pub normalize: bool,
    /// Overall interference power multiplier.
    pub interference_scale: f64,
    /// Detection trials; trial `t` uses stratum `t mod K`.
    pub trials: usize,
}

impl Default for StapConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl StapConfig {
    /// K = 1000, n = 30, about 2900 records.
    pub fn full() -> Self {
        Self {
            seed: 0,
            complex_dim: 15,
            bins: [10, 10, 10],
            samples: 2900,
            active_fraction: 0.375,
            pulse_repetition_hz: 1984.0,
            pd_floor_rel: 1e-3,
            normalize: true,
            interference_scale: 100.0,
            trials: 1000,
        }
    }

    /// K = 250, n = 16.
    pub fn reduced() -> Self {
        Self { complex_dim: 8, bins: [10, 5, 5], samples: 725, interference_scale: 30.0, ..Self::full() }
    }

    /// K = 8, n = 4.
    pub fn small() -> Self {
        Self {
            complex_dim: 2,
            bins: [2, 2, 2],
            samples: 64,
            active_fraction: 1.0,
            interference_scale: 3.0,
            trials: 200,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "reduced" => Some(Self::reduced()),
            "small" => Some(Self::small()),
            _ => None,
        }
    }

    pub fn k(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn n(&self) -> usize {
        2 * self.complex_dim
    }

    pub fn validate(&self) -> Result<(), StapError> {
        let bad = |m: &str| Err(StapError::InvalidConfig(m.to_string()));
        if self.complex_dim == 0 || self.bins.contains(&0) {
            return bad("dimensions and bin counts must be positive");
        }
        if !(self.pulse_repetition_hz > 0.0) {
            return bad("pulse_repetition_hz must be positive");
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return bad("active_fraction must lie in (0, 1]");
        }
        if !(self.pd_floor_rel > 0.0) || !(self.interference_scale > 0.0) {
            return bad("pd_floor_rel and interference_scale must be positive");
        }
        Ok(())
    }

    /// Range path □ azimuth cycle □ Doppler path with the given edge weights.
    /// A factor with fewer than three bins uses a path.
    pub fn graph(&self, weights: [f64; 3]) -> Result<RegGraph, GraphError> {
        let factor = |k: usize, w: f64, cyclic: bool| {
            if w == 0.0 {
                RegGraph::edgeless(k)
            } else if cyclic && k >= 3 {
                cycle_graph(k, w)
            } else {
                path_graph(k, w)
            }
        };
        let g = cartesian_product(
            &factor(self.bins[0], weights[0], false)?,
            &factor(self.bins[1], weights[1], true)?,
        );
        Ok(cartesian_product(&g, &factor(self.bins[2], weights[2], false)?))
    }
}

/// Interference covariance of one stratum.
#[derive(Debug, Clone)]
pub struct TrueCovariance {
    pub orientation: RadarOrientation,
    pub complex: ComplexHermitian,
    pub real: SymMatrix,
    /// Eigenvalue floor enforced on `real`.
    pub pd_floor: f64,
}

/// Draws the three basis matrices and mixes them for every orientation,
/// clamping eigenvalues at the configured floor.
pub fn generate_true_covariances(cfg: &StapConfig) -> Result<Vec<TrueCovariance>, StapError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_BASIS);
    let mut basis: Vec<ComplexHermitian> = (0..3).map(|_| ComplexHermitian::random_psd(&mut rng, cfg.complex_dim)).collect();
    let orientations: Vec<RadarOrientation> = (0..cfg.k()).map(|k| RadarOrientation::from_index(cfg.bins, k)).collect();
    if cfg.normalize {
        for (t, b) in basis.iter_mut().enumerate() {
            let mean_abs =
                orientations.iter().map(|o| o.coefficients()[t].abs()).sum::<f64>() / orientations.len() as f64;
            *b = b.scaled(1.0 / (b.trace() * mean_abs.max(f64::MIN_POSITIVE)));
        }
    }
    orientations
        .into_par_iter()
        .map(|o| {
            let c = o.coefficients();
            let mixed = ComplexHermitian::zeros(cfg.complex_dim)
                .add_scaled(c[0], &basis[0])
                .add_scaled(c[1], &basis[1])
                .add_scaled(c[2], &basis[2])
                .scaled(cfg.interference_scale);
            let (complex, real, pd_floor) = repair(&mixed, cfg.pd_floor_rel)?;
            Ok(TrueCovariance { orientation: o, complex, real, pd_floor })
        })
        .collect()
}

/// Eigenvalue clamp on the real embedding at `floor_rel` times the mean
/// absolute eigenvalue; returns the repaired matrix, its embedding and the floor.
fn repair(h: &ComplexHermitian, floor_rel: f64) -> Result<(ComplexHermitian, SymMatrix, f64), StapError> {
    let real = realify(h);
    let eig = sym_eig(&real)?;
    let mean_abs = eig.values.iter().map(|v| v.abs()).sum::<f64>() / eig.values.len() as f64;
    let floor = floor_rel * mean_abs;
    if eig.values[0] >= floor {
        return Ok((h.clone(), real, floor));
    }
    // Slightly above the floor so re-extraction rounding keeps min_eig ≥ floor.
    let target = floor * (1.0 + 1e-8);
    let clamped: Vec<f64> = eig.values.iter().map(|v| v.max(target)).collect();
    let complex = ComplexHermitian::from_real_embedding(&SymMatrix::from_eigen(&eig.q, &clamped))?;
    let real = realify(&complex);
    Ok((complex, real, floor))
}

/// Per-stratum record counts: a seeded subset of `⌈active_fraction·K⌉`
/// strata receives all samples, allocated multinomially with exponential
/// weights.
pub fn allocate_samples(cfg: &StapConfig) -> Result<Vec<usize>, StapError> {
    cfg.validate()?;
    let k = cfg.k();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_ALLOCATION);
    let active_count = ((cfg.active_fraction * k as f64).ceil() as usize).clamp(1, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let active = &order[..active_count];
    let weights: Vec<f64> = (0..active_count).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| StapError::InvalidConfig(e.to_string()))?;
    let mut counts = vec![0usize; k];
    for _ in 0..cfg.samples {
        counts[active[dist.sample(&mut rng)]] += 1;
    }
    Ok(counts)
}

/// Zero-mean Gaussian records, ordered by stratum. Stratum `k` draws from its
/// own generator seeded with `seed XOR k`.
pub fn sample_dataset(truth: &[TrueCovariance], cfg: &StapConfig) -> Result<StratDataset, StapError> {
    if truth.len() != cfg.k() {
        return Err(StapError::ModelShape { model: truth.len(), expected: cfg.k() });
    }
    let counts = allocate_samples(cfg)?;
    let per_stratum: Vec<Vec<Record>> = truth
        .par_iter()
        .zip(counts.par_iter())
        .enumerate()
        .map(|(k, (t, &count))| {
            if count == 0 {
                return Ok(Vec::new());
            }
            let chol = Cholesky::new(&t.real)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ k as u64);
            rng.set_stream(STREAM_SAMPLES);
            Ok((0..count).map(|_| Record { z: k, y: gaussian_draw(&chol, &mut rng) }).collect())
        })
        .collect::<Result<_, LinalgError>>()?;
    let records = per_stratum.into_iter().flatten().collect();
    StratDataset::new(cfg.n(), cfg.k(), records).map_err(|e| StapError::InvalidConfig(e.to_string()))
}

fn gaussian_draw<R: Rng + ?Sized>(chol: &Cholesky, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..chol.dim()).map(|_| rng.sample(StandardNormal)).collect();
    chol.lower_mul(&g)
}

/// Complex steering vector `(1, z_d, z_d²) ⊗ (1, z_a, …, z_a⁴)` for the
/// default 15-element array, generalised to `complex_dim = n_d · n_a` with
/// `n_d = 3` when 3 divides the dimension and `n_d = 1` otherwise.
pub fn steering_vector_complex(z: &RadarOrientation, f_r: f64, complex_dim: usize) -> Vec<Complex64> {
    let n_d = if complex_dim % 3 == 0 { 3 } else { 1 };
    let n_a = complex_dim / n_d;
    let tau = 2.0 * std::f64::consts::PI;
    let z_a = Complex64::from_polar(1.0, tau * z.a.to_radians().sin());
    let z_d = Complex64::from_polar(1.0, tau * z.d / f_r);
    let mut s = Vec::with_capacity(complex_dim);
    for p in 0..n_d {
        for q in 0..n_a {
            s.push(z_d.powu(p as u32) * z_a.powu(q as u32));
        }
    }
    s
}

/// Real steering vector `(Re s̃, Im s̃)` of length `2·complex_dim`.
pub fn steering_vector(z: &RadarOrientation, f_r: f64, complex_dim: usize) -> Vec<f64> {
    realify_vector(&steering_vector_complex(z, f_r, complex_dim))
}

/// Matched-filter statistic `(sᵀθy)² / (sᵀθs)`.
pub fn detection_stat(s: &[f64], theta: &SymMatrix, y: &[f64]) -> Result<f64, StapError> {
    if s.iter().all(|&v| v == 0.0) {
        return Err(StapError::ZeroSteering);
    }
    let ts = theta.mat_vec(s);
    let num: f64 = ts.iter().zip(y).map(|(a, b)| a * b).sum();
    let den: f64 = ts.iter().zip(s).map(|(a, b)| a * b).sum();
    Ok(num * num / den)
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)` and trapezoidal area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl Roc {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// Sweeps the threshold over every distinct score, high to low. Equal scores
/// enter together, so a tie contributes a diagonal segment.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Roc, StapError> {
    if scores.len() != labels.len() {
        return Err(StapError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StapError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let last = points[points.len() - 1];
        auc += (p.0 - last.0) * (p.1 + last.1) * 0.5;
        points.push(p);
    }
    Ok(Roc { points, auc })
}

/// Seeded detection trials: noise `d ~ N(0, Σ*_z)` plus the steering vector
/// with probability ½.
#[derive(Debug, Clone)]
pub struct DetectionTrials {
    pub strata: Vec<usize>,
    pub y: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    steering: Vec<Vec<f64>>,
}

impl DetectionTrials {
    /// Trials against the true covariances `Σ*_z`, in stratum order.
    pub fn generate(true_cov: &[SymMatrix], cfg: &StapConfig) -> Result<Self, StapError> {
        if true_cov.len() != cfg.k() {
            return Err(StapError::ModelShape { model: true_cov.len(), expected: cfg.k() });
        }
        let steering: Vec<Vec<f64>> = (0..cfg.k())
            .map(|k| {
                let o = RadarOrientation::from_index(cfg.bins, k);
                steering_vector(&o, cfg.pulse_repetition_hz, cfg.complex_dim)
            })
            .collect();
        let mut chol: Vec<Option<Cholesky>> = vec![None; true_cov.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_TRIALS);
        let mut out = Self { strata: Vec::new(), y: Vec::new(), labels: Vec::new(), steering };
        for t in 0..cfg.trials {
            let z = t % true_cov.len();
            if chol[z].is_none() {
                chol[z] = Some(Cholesky::new(&true_cov[z])?);
            }
            let target = rng.random_bool(0.5);
            let mut y = gaussian_draw(chol[z].as_ref().unwrap(), &mut rng);
            if target {
                for (v, s) in y.iter_mut().zip(&out.steering[z]) {
                    *v += s;
                }
            }
            out.strata.push(z);
            out.y.push(y);
            out.labels.push(target);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Scores every trial with `θ_z` (or the single `θ` of a common model).
    pub fn scores(&self, theta: &[SymMatrix]) -> Result<Vec<f64>, StapError> {
        let k = self.steering.len();
        if theta.len() != 1 && theta.len() != k {
            return Err(StapError::ModelShape { model: theta.len(), expected: k });
        }
        self.strata
            .iter()
            .zip(&self.y)
            .map(|(&z, y)| {
                let th = if theta.len() == 1 { &theta[0] } else { &theta[z] };
                detection_stat(&self.steering[z], th, y)
            })
            .collect()
    }

    pub fn roc(&self, theta: &[SymMatrix]) -> Result<Roc, StapError> {
        roc_curve(&self.scores(theta)?, &self.labels)
    }
}

/// ROC curves of the common model, the stratified model and the true
/// precision matrices on one shared set of trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub common: Roc,
    pub stratified: Roc,
    pub truth: Roc,
}

pub fn detection_experiment(
    common: &StratModel,
    stratified: &StratModel,
    true_cov: &[SymMatrix],
    cfg: &StapConfig,
) -> Result<DetectionReport, StapError> {
    let trials = DetectionTrials::generate(true_cov, cfg)?;
    let true_theta = true_cov.iter().map(|c| Cholesky::new(c).map(|c| c.inverse())).collect::<Result<Vec<_>, _>>()?;
    Ok(DetectionReport {
        common: trials.roc(common.theta())?,
        stratified: trials.roc(stratified.theta())?,
        truth: trials.roc(&true_theta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eig;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn realify_examples() {
        let h = ComplexHermitian::new(1, vec![c(2.0, 0.0)]).unwrap();
        assert_eq!(realify(&h), SymMatrix::identity(2).scaled(2.0));
        let h = ComplexHermitian::new(2, vec![c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]).unwrap();
        let r = realify(&h);
        let eig = sym_eig(&r).unwrap();
        for (v, e) in eig.values.iter().zip([1.0, 1.0, 3.0, 3.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert!((r.trace() - 2.0 * h.trace()).abs() < 1e-15);
    }

    #[test]
    fn realify_vector_examples() {
        assert_eq!(realify_vector(&[c(1.0, 0.0)]), vec![1.0, 0.0]);
        assert_eq!(realify_vector(&[c(0.0, 1.0)]), vec![0.0, 1.0]);
    }

    #[test]
    fn realify_is_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..6 {
            let h1 = ComplexHermitian::random_psd(&mut rng, d);
            let h2 = ComplexHermitian::random_psd(&mut rng, d).scaled(-0.7);
            let sum = h1.add_scaled(1.0, &h2);
            assert!(realify(&sum).frobenius_distance(&(&realify(&h1) + &realify(&h2))) < 1e-12);
            let v: Vec<Complex64> =
                (0..d).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
            let lhs = realify(&h1).mat_vec(&realify_vector(&v));
            let rhs = realify_vector(&h1.mul_vec(&v));
            assert!(lhs.iter().zip(&rhs).all(|(a, b)| (a - b).abs() < 1e-12));
            let back = ComplexHermitian::from_real_embedding(&realify(&h1)).unwrap();
            assert!(back.data.iter().zip(&h1.data).all(|(a, b)| (a - b).norm() < 1e-15));
        }
    }

    #[test]
    fn hermitian_construction() {
        let h = ComplexHermitian::new(2, vec![c(1.0, 3.0), c(1.0, 1.0), c(3.0, 1.0), c(2.0, 0.0)]).unwrap();
        assert_eq!(h.get(0, 0), c(1.0, 0.0));
        assert_eq!(h.get(1, 0), h.get(0, 1).conj());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ComplexHermitian::random_psd(&mut rng, 4);
        assert!(min_eig(&realify(&p)).unwrap() > -1e-12);
    }

    #[test]
    fn orientation_bins() {
        let bins = [10, 10, 10];
        let o = RadarOrientation::from_bins(bins, [0, 0, 0]);
        assert!((o.r - 35.75).abs() < 1e-12 && (o.a - 96.0).abs() < 1e-12 && (o.d + 892.8).abs() < 1e-9);
        for k in 0..1000 {
            let o = RadarOrientation::from_index(bins, k);
            assert_eq!(o.index(bins), k);
            assert!((35.0..=50.0).contains(&o.r) && (87.0..=267.0).contains(&o.a) && o.d.abs() <= 992.0);
        }
        let o = RadarOrientation { r: 4e4, a: 225.0, d: 0.0, bin: [0; 3] };
        assert_eq!(o.range_coefficient(), 1.0);
        assert!((o.azimuth_coefficient() + 2f64.sqrt()).abs() < 1e-12);
        let min_on_grid = (87..=267)
            .map(|a| RadarOrientation { a: a as f64, ..o }.azimuth_coefficient())
            .fold(f64::INFINITY, f64::min);
        assert!((min_on_grid - o.azimuth_coefficient()).abs() < 1e-12);
    }

    #[test]
    fn generated_covariances_are_floored() {
        for normalize in [true, false] {
            let cfg = StapConfig { normalize, ..StapConfig::reduced() };
            let truth = generate_true_covariances(&cfg).unwrap();
            assert_eq!(truth.len(), 250);
            for t in &truth {
                assert!(t.pd_floor > 0.0);
                assert!(min_eig(&t.real).unwrap() >= t.pd_floor);
                assert_eq!(t.real.dim(), 16);
            }
        }
    }

    #[test]
    fn full_preset_covariances_are_positive_definite() {
        let truth = generate_true_covariances(&StapConfig::full()).unwrap();
        assert_eq!(truth.len(), 1000);
        assert!(truth.iter().all(|t| Cholesky::new(&t.real).is_ok()));
    }

    #[test]
    fn allocation_matches_sparsity_profile() {
        let cfg = StapConfig::full();
        let counts = allocate_samples(&cfg).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 2900);
        let empty = counts.iter().filter(|&&c| c == 0).count();
        assert!((625..700).contains(&empty), "{empty} empty strata");
    }

    #[test]
    fn sampling_is_deterministic_and_finite() {
        let cfg = StapConfig::small();
        let truth = generate_true_covariances(&cfg).unwrap();
        let a = sample_dataset(&truth, &cfg).unwrap();
        let b = sample_dataset(&truth, &cfg).unwrap();
        assert_eq!(a.m(), cfg.samples);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert!(a.records().iter().all(|r| r.y.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn sample_covariance_converges() {
        let cfg = StapConfig::small();
        let truth = generate_true_covariances(&cfg).unwrap();
        let chol = Cholesky::new(&truth[3].real).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = cfg.n();
        let draws = 100_000;
        let mut acc = vec![0.0; n * n];
        for _ in 0..draws {
            let y = gaussian_draw(&chol, &mut rng);
            for i in 0..n {
                for j in 0..n {
                    acc[i * n + j] += y[i] * y[j] / draws as f64;
                }
            }
        }
        let s = SymMatrix::new(n, acc).unwrap();
        assert!(s.frobenius_distance(&truth[3].real) <= 0.05 * truth[3].real.frobenius_norm());
    }

    #[test]
    fn steering_examples() {
        let o = RadarOrientation { r: 40.0, a: 180.0, d: 0.0, bin: [0; 3] };
        let s = steering_vector(&o, 1984.0, 15);
        for i in 0..15 {
            assert!((s[i] - 1.0).abs() < 1e-12 && s[15 + i].abs() < 1e-12);
        }
        for k in [0, 17, 999] {
            let o = RadarOrientation::from_index([10, 10, 10], k);
            let s = steering_vector(&o, 1984.0, 15);
            assert!((s.iter().map(|v| v * v).sum::<f64>() - 15.0).abs() < 1e-12);
        }
        let o1 = RadarOrientation { d: 1984.0, ..RadarOrientation::from_index([10, 10, 10], 5) };
        let o0 = RadarOrientation { d: 0.0, ..o1 };
        let (s1, s0) = (steering_vector(&o1, 1984.0, 15), steering_vector(&o0, 1984.0, 15));
        assert!(s1.iter().zip(&s0).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn detection_stat_examples() {
        let id = SymMatrix::identity(2);
        assert_eq!(detection_stat(&[1.0, 0.0], &id, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(detection_stat(&[1.0, 0.0], &id, &[0.0, 5.0]).unwrap(), 0.0);
        let th = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let a = detection_stat(&[0.4, -1.0], &th, &[1.5, 0.2]).unwrap();
        let b = detection_stat(&[0.4, -1.0], &th, &[4.5, 0.6]).unwrap();
        assert!((b - 9.0 * a).abs() < 1e-12 * b);
        assert!(matches!(detection_stat(&[0.0, 0.0], &id, &[1.0, 1.0]), Err(StapError::ZeroSteering)));
    }

    #[test]
    fn roc_examples() {
        let r = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_curve(&[1.0; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        let r = roc_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        assert!(matches!(roc_curve(&[1.0, 2.0], &[true, true]), Err(StapError::SingleClass)));
        assert!(roc_curve(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn auc_invariant_under_theta_scaling() {
        let cfg = StapConfig::small();
        let truth = generate_true_covariances(&cfg).unwrap();
        let covs: Vec<SymMatrix> = truth.iter().map(|t| t.real.clone()).collect();
        let trials = DetectionTrials::generate(&covs, &cfg).unwrap();
        let theta: Vec<SymMatrix> = truth.iter().map(|t| Cholesky::new(&t.real).unwrap().inverse()).collect();
        let scaled: Vec<SymMatrix> = theta.iter().map(|t| t.scaled(8.0)).collect();
        assert_eq!(trials.roc(&theta).unwrap().auc, trials.roc(&scaled).unwrap().auc);
    }

    #[test]
    fn graph_matches_orientation_index() {
        let cfg = StapConfig::full();
        let g = cfg.graph([1.0, 2.0, 3.0]).unwrap();
        assert_eq!(crate::graph::laplacian(&g).nnz(), 6600);
        let o = RadarOrientation::from_bins(cfg.bins, [3, 9, 4]);
        let o2 = RadarOrientation::from_bins(cfg.bins, [3, 0, 4]);
        let (a, b) = (o.index(cfg.bins), o2.index(cfg.bins));
        assert!(g.edges().iter().any(|e| (e.i, e.j) == (a.min(b), a.max(b)) && e.w == 2.0));
    }

    #[test]
    fn grid_template_matches_orientation_graph() {
        let cfg = StapConfig::reduced();
        let t = crate::model::GraphTemplate::parse("path:10,cycle:5,path:5").unwrap();
        assert_eq!(t.build(&[1.0, 2.0, 3.0]).unwrap(), cfg.graph([1.0, 2.0, 3.0]).unwrap());
    }
}
