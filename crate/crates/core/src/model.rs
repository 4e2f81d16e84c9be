//! Fitted stratified Gaussian models: sufficient statistics, fitting,
//! scoring, conditional forecasting, hyper-parameter search and the
//! `strat-cov/1` JSON model file.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::data::{Record, StratDataset};
use crate::graph::{laplacian, GraphError, GraphSpec, RegGraph};
use crate::linalg::{spd_inverse, spd_solve, sym_eig, Cholesky, LinalgError, Matrix, SymMatrix};
use crate::prox::{LocalRegularizer, StratumStats, EPS_PD};
use crate::solver::{fit_admm, AdmmFit, Diagnostics, FitConfig, SolverError};

pub const MODEL_VERSION: &str = "strat-cov/1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("ADMM did not converge; the returned model is the last iterate")]
    NotConverged(Box<StratModel>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid forecast request: {0}")]
    InvalidForecast(String),
    #[error("hyper-parameter grid is empty")]
    EmptyGrid,
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Per-stratum counts and empirical covariances `S_k = (1/n_k) Σ y yᵀ`.
pub fn sufficient_stats(ds: &StratDataset) -> Vec<StratumStats> {
    let n = ds.n();
    let mut sums = vec![vec![0.0; n * n]; ds.k()];
    let mut counts = vec![0usize; ds.k()];
    for r in ds.records() {
        counts[r.z] += 1;
        let s = &mut sums[r.z];
        for i in 0..n {
            for j in 0..=i {
                s[i * n + j] += r.y[i] * r.y[j];
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| {
            if c == 0 {
                return StratumStats::empty(n);
            }
            let inv = 1.0 / c as f64;
            StratumStats::new(c, SymMatrix::from_lower_fn(n, |i, j| s[i * n + j] * inv))
        })
        .collect()
}

/// Solver summary stored alongside a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub objective: f64,
    pub config: FitConfig,
    /// Strata whose `θ̂_k` needed an eigenvalue clamp to stay positive definite.
    pub clamped_strata: usize,
}

/// Collection of natural parameters `θ_k = Σ_k⁻¹` with the graph and
/// regularizer they were fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct StratModel {
    theta: Vec<SymMatrix>,
    graph: RegGraph,
    reg: LocalRegularizer,
    fit: Option<FitSummary>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    #[serde(rename = "K")]
    k: usize,
    n: usize,
    graph: RegGraph,
    reg: LocalRegularizer,
    theta: Vec<SymMatrix>,
    fit: Option<FitSummary>,
}

impl StratModel {
    /// Checks shapes and positive definiteness.
    pub fn new(
        theta: Vec<SymMatrix>,
        graph: RegGraph,
        reg: LocalRegularizer,
        fit: Option<FitSummary>,
    ) -> Result<Self, ModelError> {
        let n = theta.first().map(SymMatrix::dim).ok_or(ModelError::DimensionMismatch(
            "model needs at least one stratum".into(),
        ))?;
        if theta.len() != graph.k() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} matrices for a graph with {} vertices",
                theta.len(),
                graph.k()
            )));
        }
        for t in &theta {
            if t.dim() != n {
                return Err(ModelError::DimensionMismatch("strata differ in dimension".into()));
            }
            Cholesky::new(t)?;
        }
        Ok(Self { theta, graph, reg, fit })
    }

    /// Model with `θ_k = Σ_k⁻¹` for known covariances.
    pub fn from_covariances(covs: &[SymMatrix], graph: RegGraph) -> Result<Self, ModelError> {
        let theta = covs.iter().map(spd_inverse).collect::<Result<Vec<_>, _>>()?;
        Self::new(theta, graph, LocalRegularizer::None, None)
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn n(&self) -> usize {
        self.theta[0].dim()
    }

    pub fn theta(&self) -> &[SymMatrix] {
        &self.theta
    }

    pub fn graph(&self) -> &RegGraph {
        &self.graph
    }

    pub fn reg(&self) -> &LocalRegularizer {
        &self.reg
    }

    pub fn fit_summary(&self) -> Option<&FitSummary> {
        self.fit.as_ref()
    }

    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.converged)
    }

    /// `Σ_k = θ_k⁻¹`.
    pub fn covariances(&self) -> Result<Vec<SymMatrix>, ModelError> {
        Ok(self.theta.iter().map(spd_inverse).collect::<Result<Vec<_>, _>>()?)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION.to_string(),
            k: self.k(),
            n: self.n(),
            graph: self.graph.clone(),
            reg: self.reg,
            theta: self.theta.clone(),
            fit: self.fit.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(ModelError::Format(format!("unsupported version `{}`", file.version)));
        }
        if file.k != file.theta.len() || file.theta.iter().any(|t| t.dim() != file.n) {
            return Err(ModelError::Format("K/n do not match theta".into()));
        }
        Self::new(file.theta, file.graph, file.reg, file.fit)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

/// A fitted model together with the solver's per-iteration history.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: StratModel,
    pub diagnostics: Diagnostics,
}

/// Fits `θ` by ADMM. A run that hits the iteration cap is returned inside
/// [`ModelError::NotConverged`].
pub fn fit(
    ds: &StratDataset,
    graph: &RegGraph,
    reg: &LocalRegularizer,
    config: &FitConfig,
) -> Result<StratModel, ModelError> {
    let out = fit_detailed(ds, graph, reg, config)?;
    if out.model.converged() {
        Ok(out.model)
    } else {
        Err(ModelError::NotConverged(Box::new(out.model)))
    }
}

/// Like [`fit`], but a run that hits the iteration cap is returned normally
/// with `converged = false` in its summary.
pub fn fit_detailed(
    ds: &StratDataset,
    graph: &RegGraph,
    reg: &LocalRegularizer,
    config: &FitConfig,
) -> Result<FitOutcome, ModelError> {
    if ds.k() != graph.k() {
        return Err(ModelError::DimensionMismatch(format!(
            "dataset has K = {} but graph has {} vertices",
            ds.k(),
            graph.k()
        )));
    }
    if !graph.is_connected() && matches!(reg, LocalRegularizer::None) {
        warn!("regularization graph is disconnected and there is no local regularization; the solution may not be unique");
    }
    let stats = sufficient_stats(ds);
    let lap = laplacian(graph);
    let fit = match fit_admm(&stats, &lap, reg, config) {
        Ok(f) => f,
        Err(SolverError::MaxIterExceeded(f)) => *f,
        Err(e) => return Err(e.into()),
    };
    let diagnostics = fit.diagnostics.clone();
    Ok(FitOutcome { model: assemble(fit, graph, reg, config)?, diagnostics })
}

/// The unstratified baseline: all records pooled into one stratum.
pub fn fit_common(ds: &StratDataset, reg: &LocalRegularizer, config: &FitConfig) -> Result<StratModel, ModelError> {
    fit(&ds.pooled(), &RegGraph::edgeless(1)?, reg, config)
}

fn assemble(
    fit: AdmmFit,
    graph: &RegGraph,
    reg: &LocalRegularizer,
    config: &FitConfig,
) -> Result<StratModel, ModelError> {
    let mut clamped = 0;
    let mut theta = Vec::with_capacity(fit.theta_hat.len());
    for t in fit.theta_hat {
        let eig = sym_eig(&t)?;
        if eig.values[0] < EPS_PD {
            clamped += 1;
            let x: Vec<f64> = eig.values.iter().map(|v| v.max(EPS_PD)).collect();
            theta.push(SymMatrix::from_eigen(&eig.q, &x));
        } else {
            theta.push(t);
        }
    }
    if clamped > 0 {
        warn!("{clamped} fitted strata had eigenvalues below {EPS_PD:e}; clamped");
    }
    let d = &fit.diagnostics;
    let last = d.last().copied();
    let summary = FitSummary {
        converged: d.converged,
        iterations: d.iterations,
        r_norm: last.map_or(f64::NAN, |r| r.r_norm),
        s_norm: last.map_or(f64::NAN, |r| r.s_norm),
        eps_pri: last.map_or(f64::NAN, |r| r.eps_pri),
        eps_dual: last.map_or(f64::NAN, |r| r.eps_dual),
        objective: last.map_or(f64::NAN, |r| r.objective),
        config: *config,
        clamped_strata: clamped,
    };
    StratModel::new(theta, graph.clone(), *reg, Some(summary))
}

/// `(1/m) Σ_k n_k (Tr(S_k θ_k) − log det θ_k)` over the dataset's own
/// statistics. A single-stratum (common) model is scored on the pooled data.
pub fn average_loss(model: &StratModel, ds: &StratDataset) -> Result<f64, ModelError> {
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let pooled;
    let ds = if model.k() == 1 && ds.k() != 1 {
        pooled = ds.pooled();
        &pooled
    } else {
        ds
    };
    check_shape(model, ds)?;
    let stats = sufficient_stats(ds);
    let mut total = 0.0;
    for (s, t) in stats.iter().zip(model.theta()) {
        if s.count == 0 {
            continue;
        }
        let ld = Cholesky::new(t)?.log_det();
        total += s.count as f64 * (s.cov.trace_product(t) - ld);
    }
    Ok(total / ds.m() as f64)
}

fn check_shape(model: &StratModel, ds: &StratDataset) -> Result<(), ModelError> {
    if model.k() != ds.k() || model.n() != ds.n() {
        return Err(ModelError::DimensionMismatch(format!(
            "model is K={} n={}, dataset is K={} n={}",
            model.k(),
            model.n(),
            ds.k(),
            ds.n()
        )));
    }
    Ok(())
}

/// `D(θ) = (1/(Kn)) Σ_k (Tr(Σ*_k θ_k) − log det θ_k)`. A single-stratum
/// (common) model uses its one `θ` for every `k`.
pub fn d_metric(model: &StratModel, true_cov: &[SymMatrix]) -> Result<f64, ModelError> {
    let common = model.k() == 1;
    if (!common && true_cov.len() != model.k()) || true_cov.is_empty() || true_cov.iter().any(|c| c.dim() != model.n()) {
        return Err(ModelError::DimensionMismatch(format!(
            "{} true covariances for a model with K = {}",
            true_cov.len(),
            model.k()
        )));
    }
    let log_dets = model.theta().iter().map(|t| Ok(Cholesky::new(t)?.log_det())).collect::<Result<Vec<f64>, ModelError>>()?;
    let mut total = 0.0;
    for (k, c) in true_cov.iter().enumerate() {
        let j = if common { 0 } else { k };
        total += c.trace_product(&model.theta()[j]) - log_dets[j];
    }
    Ok(total / (true_cov.len() * model.n()) as f64)
}

/// Gaussian conditional of the hidden coordinates given the observed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub hidden: Vec<usize>,
    /// `μ_B = −θ_BB⁻¹ θ_BA y_A`.
    pub mean: Vec<f64>,
    /// `θ_BB⁻¹`.
    pub cov: SymMatrix,
}

/// Conditions stratum `z`'s zero-mean Gaussian on `y_obs` at indices `observed`.
pub fn conditional_forecast(
    model: &StratModel,
    z: usize,
    observed: &[usize],
    y_obs: &[f64],
) -> Result<Forecast, ModelError> {
    let n = model.n();
    if z >= model.k() {
        return Err(ModelError::InvalidForecast(format!("stratum {z} out of range")));
    }
    if observed.is_empty() || observed.len() >= n {
        return Err(ModelError::InvalidForecast(
            "observed set must be a nonempty proper subset of the coordinates".into(),
        ));
    }
    if observed.len() != y_obs.len() {
        return Err(ModelError::InvalidForecast("observed values do not match index set".into()));
    }
    let mut is_obs = vec![false; n];
    for &i in observed {
        if i >= n || is_obs[i] {
            return Err(ModelError::InvalidForecast(format!("bad or repeated index {i}")));
        }
        is_obs[i] = true;
    }
    let hidden: Vec<usize> = (0..n).filter(|&i| !is_obs[i]).collect();
    let theta = &model.theta()[z];
    let t_bb = theta.submatrix(&hidden);
    let t_ba = theta.block(&hidden, observed);
    let rhs = t_ba.matmul(&Matrix::column_vector(y_obs))?;
    let (mean, cov) = if hidden.len() == 1 {
        let d = t_bb.get(0, 0);
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { index: 0, pivot: d }.into());
        }
        (vec![-rhs.get(0, 0) / d], SymMatrix::from_diag(&[1.0 / d]))
    } else {
        let mean = spd_solve(&t_bb, &rhs)?.as_slice().iter().map(|v| -v).collect();
        (mean, spd_inverse(&t_bb)?)
    };
    Ok(Forecast { hidden, mean, cov })
}

/// Root-mean-square error of forecasting coordinates outside `observed`
/// from those inside, averaged over records (one RMSE per record).
pub fn forecast_rmse(model: &StratModel, ds: &StratDataset, observed: &[usize]) -> Result<f64, ModelError> {
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if model.n() != ds.n() {
        return Err(ModelError::DimensionMismatch("model and dataset differ in n".into()));
    }
    if let Some(&i) = observed.iter().find(|&&i| i >= model.n()) {
        return Err(ModelError::InvalidForecast(format!("bad or repeated index {i}")));
    }
    let mut total = 0.0;
    for r in ds.records() {
        let z = if model.k() == 1 { 0 } else { r.z };
        let y_obs: Vec<f64> = observed.iter().map(|&i| r.y[i]).collect();
        let f = conditional_forecast(model, z, observed, &y_obs)?;
        let se: f64 = f.hidden.iter().zip(&f.mean).map(|(&i, m)| (r.y[i] - m).powi(2)).sum();
        total += (se / f.hidden.len() as f64).sqrt();
    }
    Ok(total / ds.m() as f64)
}

/// One factor of a product regularization graph whose edge weight is a
/// hyper-parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphFactor {
    Path { k: usize },
    Cycle { k: usize },
    Empty { k: usize },
}

impl GraphFactor {
    pub fn k(&self) -> usize {
        match *self {
            GraphFactor::Path { k } | GraphFactor::Cycle { k } | GraphFactor::Empty { k } => k,
        }
    }

    fn spec(&self, w: f64) -> GraphSpec {
        match *self {
            _ if w == 0.0 => GraphSpec::Empty { k: self.k() },
            GraphFactor::Path { k } => GraphSpec::Path { k, w },
            GraphFactor::Cycle { k } => GraphSpec::Cycle { k, w },
            GraphFactor::Empty { k } => GraphSpec::Empty { k },
        }
    }
}

/// Product graph with one edge weight per factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphTemplate {
    pub factors: Vec<GraphFactor>,
}

impl GraphTemplate {
    /// Single isolated vertex (the common model).
    pub fn single() -> Self {
        Self { factors: vec![GraphFactor::Empty { k: 1 }] }
    }

    pub fn k(&self) -> usize {
        self.factors.iter().map(GraphFactor::k).product()
    }

    /// Parses `path:10,cycle:10,empty:4`.
    pub fn parse(s: &str) -> Result<Self, GraphError> {
        let bad = |reason: &str| GraphError::Spec { spec: s.to_string(), reason: reason.to_string() };
        let factors = s
            .split(',')
            .map(|f| {
                let (kind, k) = f.trim().split_once(':').ok_or_else(|| bad("expected kind:K"))?;
                let k = k.trim().parse::<usize>().map_err(|_| bad("K must be an integer"))?;
                match kind.trim() {
                    "path" => Ok(GraphFactor::Path { k }),
                    "cycle" => Ok(GraphFactor::Cycle { k }),
                    "empty" => Ok(GraphFactor::Empty { k }),
                    _ => Err(bad("factor kind must be path, cycle or empty")),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if factors.is_empty() {
            return Err(bad("no factors"));
        }
        Ok(Self { factors })
    }

    /// Graph spec with the given per-factor weights; a zero weight drops that
    /// factor's edges.
    pub fn spec(&self, weights: &[f64]) -> Result<GraphSpec, GraphError> {
        if weights.len() != self.factors.len() {
            return Err(GraphError::Spec {
                spec: format!("{self:?}"),
                reason: format!("{} weights for {} factors", weights.len(), self.factors.len()),
            });
        }
        let parts: Vec<GraphSpec> = self.factors.iter().zip(weights).map(|(f, &w)| f.spec(w)).collect();
        Ok(if parts.len() == 1 { parts.into_iter().next().unwrap() } else { GraphSpec::Product(parts) })
    }

    pub fn build(&self, weights: &[f64]) -> Result<RegGraph, GraphError> {
        self.spec(weights)?.build()
    }
}

/// Cartesian grid over local regularizers and per-factor edge weights,
/// enumerated regularizer-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub local: Vec<LocalRegularizer>,
    pub edge_weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub reg: LocalRegularizer,
    pub edge_weights: Vec<f64>,
}

impl HyperGrid {
    pub fn points(&self) -> Vec<GridPoint> {
        let weights: Vec<Vec<f64>> =
            if self.edge_weights.is_empty() { vec![Vec::new()] } else { self.edge_weights.clone() };
        self.local
            .iter()
            .flat_map(|r| weights.iter().map(move |w| GridPoint { reg: *r, edge_weights: w.clone() }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub point: GridPoint,
    pub val_loss: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: GridPoint,
    pub model: StratModel,
    pub log: Vec<GridEntry>,
}

/// Fits one model per grid point on `train`, scores each by average loss on
/// `val`, and returns the first minimizer.
pub fn grid_search(
    train: &StratDataset,
    val: &StratDataset,
    template: &GraphTemplate,
    grid: &HyperGrid,
    config: &FitConfig,
) -> Result<GridSearchResult, ModelError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let (train, val) = if template.k() == 1 && train.k() != 1 {
        (train.pooled(), val.pooled())
    } else {
        (train.clone(), val.clone())
    };
    let mut log = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64, StratModel)> = None;
    for (idx, point) in points.iter().enumerate() {
        let graph = template.build(&point.edge_weights)?;
        let model = match fit(&train, &graph, &point.reg, config) {
            Ok(m) => m,
            Err(ModelError::NotConverged(m)) => {
                warn!("grid point {idx} ({}) did not converge", point.reg);
                *m
            }
            Err(e) => return Err(e),
        };
        let val_loss = average_loss(&model, &val)?;
        let fs = model.fit_summary();
        log.push(GridEntry {
            point: point.clone(),
            val_loss,
            converged: model.converged(),
            iterations: fs.map_or(0, |f| f.iterations),
        });
        if best.as_ref().is_none_or(|(_, l, _)| val_loss < *l) {
            best = Some((idx, val_loss, model));
        }
    }
    let (best_index, _, model) = best.expect("nonempty grid");
    Ok(GridSearchResult { best_index, best: points[best_index].clone(), model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::path_graph;

    fn ds(n: usize, k: usize, recs: &[(usize, &[f64])]) -> StratDataset {
        StratDataset::new(n, k, recs.iter().map(|(z, y)| Record { z: *z, y: y.to_vec() }).collect()).unwrap()
    }

    #[test]
    fn stats_examples() {
        let d = ds(2, 3, &[(0, &[1.0, 0.0]), (0, &[0.0, 1.0]), (2, &[1.0, 2.0])]);
        let s = sufficient_stats(&d);
        assert_eq!(s[0].count, 2);
        assert_eq!(s[0].cov, SymMatrix::identity(2).scaled(0.5));
        assert_eq!(s[1].count, 0);
        assert_eq!(s[1].cov, SymMatrix::zeros(2));
        assert_eq!(s[2].cov, SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap());
        assert_eq!(s.iter().map(|x| x.count).sum::<usize>(), d.m());
    }

    #[test]
    fn average_loss_identity_model() {
        let d = ds(3, 1, &[(0, &[1.0, 2.0, -2.0])]);
        let m = StratModel::new(vec![SymMatrix::identity(3)], RegGraph::edgeless(1).unwrap(), LocalRegularizer::None, None)
            .unwrap();
        assert!((average_loss(&m, &d).unwrap() - 9.0).abs() < 1e-14);
        let empty = StratDataset::new(3, 1, vec![]).unwrap();
        assert!(matches!(average_loss(&m, &empty), Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn average_loss_duplicate_invariant() {
        let d = ds(2, 2, &[(0, &[1.0, 0.5]), (1, &[-0.3, 2.0]), (1, &[0.7, 0.1])]);
        let m = StratModel::new(
            vec![SymMatrix::from_diag(&[2.0, 1.0]), SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 3.0]]).unwrap()],
            path_graph(2, 1.0).unwrap(),
            LocalRegularizer::None,
            None,
        )
        .unwrap();
        let doubled = d.concat(&d).unwrap();
        let a = average_loss(&m, &d).unwrap();
        let b = average_loss(&m, &doubled).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn d_metric_at_identity() {
        let m = StratModel::new(vec![SymMatrix::identity(4); 3], path_graph(3, 1.0).unwrap(), LocalRegularizer::None, None)
            .unwrap();
        assert!((d_metric(&m, &vec![SymMatrix::identity(4); 3]).unwrap() - 1.0).abs() < 1e-15);
        assert!(d_metric(&m, &[SymMatrix::identity(4)]).is_err());
        let common = StratModel::new(vec![SymMatrix::identity(4)], RegGraph::edgeless(1).unwrap(), LocalRegularizer::None, None)
            .unwrap();
        let d = d_metric(&common, &[SymMatrix::identity(4), SymMatrix::identity(4).scaled(3.0)]).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
    }

    #[test]
    fn forecast_two_by_two() {
        let theta = SymMatrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let m = StratModel::new(vec![theta], RegGraph::edgeless(1).unwrap(), LocalRegularizer::None, None).unwrap();
        let f = conditional_forecast(&m, 0, &[0], &[1.0]).unwrap();
        assert_eq!(f.hidden, vec![1]);
        assert!((f.mean[0] - 0.5).abs() < 1e-15);
        assert!((f.cov.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn forecast_rejects_bad_index_sets() {
        let m = StratModel::new(vec![SymMatrix::identity(3)], RegGraph::edgeless(1).unwrap(), LocalRegularizer::None, None)
            .unwrap();
        assert!(conditional_forecast(&m, 0, &[], &[]).is_err());
        assert!(conditional_forecast(&m, 0, &[0, 1, 2], &[1.0, 1.0, 1.0]).is_err());
        assert!(conditional_forecast(&m, 0, &[0, 0], &[1.0, 1.0]).is_err());
        assert!(conditional_forecast(&m, 1, &[0], &[1.0]).is_err());
        let f = conditional_forecast(&m, 0, &[1], &[3.0]).unwrap();
        assert_eq!(f.mean, vec![0.0, 0.0]);
        assert_eq!(f.cov, SymMatrix::identity(2));
        let ds = StratDataset::new(3, 1, vec![Record { z: 0, y: vec![1.0, 2.0, 3.0] }]).unwrap();
        assert!(matches!(forecast_rmse(&m, &ds, &[0, 7]), Err(ModelError::InvalidForecast(_))));
    }

    #[test]
    fn model_json_roundtrip() {
        let m = StratModel::new(
            vec![SymMatrix::from_rows(&[vec![1.0 / 3.0, 0.1], vec![0.1, 2.0]]).unwrap(), SymMatrix::identity(2)],
            path_graph(2, 0.7).unwrap(),
            LocalRegularizer::TracePlusOffDiagL1 { gamma_tr: 0.1, gamma_od: 0.2 },
            None,
        )
        .unwrap();
        let back = StratModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_json().replace("strat-cov/1", "strat-cov/0");
        assert!(matches!(StratModel::from_json(&bad), Err(ModelError::Format(_))));
        let extra = m.to_json().replacen('{', "{\"extra\": 1,", 1);
        assert!(StratModel::from_json(&extra).is_err());
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = StratModel::from_covariances(&[SymMatrix::from_diag(&[0.3, 7.0])], RegGraph::edgeless(1).unwrap())
            .unwrap();
        m.save(&path).unwrap();
        assert_eq!(StratModel::load(&path).unwrap(), m);
        assert!(matches!(StratModel::load(&dir.path().join("none.json")), Err(ModelError::Io(_))));
    }

    #[test]
    fn model_rejects_indefinite_theta() {
        let r = StratModel::new(
            vec![SymMatrix::from_diag(&[1.0, -1.0])],
            RegGraph::edgeless(1).unwrap(),
            LocalRegularizer::None,
            None,
        );
        assert!(matches!(r, Err(ModelError::Linalg(LinalgError::NotPositiveDefinite { .. }))));
    }

    #[test]
    fn template_builds_products() {
        let t = GraphTemplate::parse("path:10, cycle:10, path:10").unwrap();
        assert_eq!(t.k(), 1000);
        let g = t.build(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(laplacian(&g).nnz(), 6600);
        let g = t.build(&[1.0, 0.0, 3.0]).unwrap();
        assert_eq!(g.edges().len(), 2800 - 10 * 100);
        assert!(t.build(&[1.0]).is_err());
        assert_eq!(GraphTemplate::single().build(&[0.0]).unwrap().k(), 1);
    }

    #[test]
    fn grid_points_are_reg_major() {
        let grid = HyperGrid {
            local: vec![LocalRegularizer::Trace { gamma: 1.0 }, LocalRegularizer::Trace { gamma: 2.0 }],
            edge_weights: vec![vec![1.0], vec![5.0]],
        };
        let pts = grid.points();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].edge_weights, vec![5.0]);
        assert_eq!(pts[2].reg, LocalRegularizer::Trace { gamma: 2.0 });
        let no_edges = HyperGrid { local: vec![LocalRegularizer::None], edge_weights: vec![] };
        assert_eq!(no_edges.points().len(), 1);
    }
}
