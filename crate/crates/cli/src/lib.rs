//! Command implementations behind the `stratcov` binary.
//!
//! Every subcommand accepts `--config <file.json>` whose keys are the long
//! flag names; a flag given on the command line wins over the file.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use stratcov::data::{self, cyclic_gaussian, CyclicConfig, SplitSpec, StratDataset};
use stratcov::graph::{cycle_graph, GraphSpec};
use stratcov::linalg::SymMatrix;
use stratcov::model::{self, GraphTemplate, HyperGrid, StratModel};
use stratcov::prox::LocalRegularizer;
use stratcov::solver::FitConfig;
use stratcov::stap::{self, DetectionTrials, StapConfig};

pub const SEED_ENV: &str = "STRATCOV_SEED";

/// Bad configuration or usage; the binary exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "stratcov", version, about = "Laplacian-regularized stratified covariance estimation")]
pub struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset, its true model and a train/val/test split.
    Generate(GenerateArgs),
    /// Fit a stratified (or common) model by ADMM.
    Fit(FitArgs),
    /// Average loss and D(θ) of fitted models on a dataset.
    Eval(EvalArgs),
    /// Radar target detection ROC curves.
    Detect(DetectArgs),
    /// Conditional-Gaussian forecasting RMSE.
    Forecast(ForecastArgs),
    /// Hyper-parameter search scored by validation loss.
    Gridsearch(GridArgs),
}

/// Reads the optional JSON config and lets flags override its keys.
trait Layered: Sized + DeserializeOwned {
    fn config_path(&self) -> Option<&Path>;
    fn overlay(self, base: Self) -> Self;

    fn resolve(self) -> Result<Self> {
        match self.config_path().map(Path::to_path_buf) {
            None => Ok(self),
            Some(path) => {
                let text = fs::read_to_string(&path)
                    .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
                let base: Self = serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
                Ok(self.overlay(base))
            }
        }
    }
}

macro_rules! layered {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Layered for $ty {
            fn config_path(&self) -> Option<&Path> {
                self.config.as_deref()
            }

            fn overlay(self, base: Self) -> Self {
                Self { config: self.config, $($field: self.$field.or(base.$field)),* }
            }
        }
    };
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| config_err(format!("missing required setting `{name}`")))
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| config_err(format!("{SEED_ENV} must be an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn parse_list<T: FromStr>(items: &[String], what: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    items.iter().map(|s| s.parse::<T>().map_err(|e| config_err(format!("invalid {what} `{s}`: {e}")))).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_data(path: &Path, k: Option<usize>) -> Result<StratDataset> {
    data::load_csv(path, None, k).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<StratModel> {
    StratModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Fixed-width text table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ")
        };
        writeln!(f, "{}", line(&self.header).trim_end())?;
        for r in &self.rows {
            writeln!(f, "{}", line(r).trim_end())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// Radar interference over range × azimuth × Doppler bins.
    Stap,
    /// Covariance rotating around a cycle of strata.
    Cyclic,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenerateArgs {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Generator [default: stap].
    #[arg(long, value_enum)]
    pub kind: Option<DataKind>,
    /// STAP preset: full, reduced or small [default: full].
    #[arg(long)]
    pub preset: Option<String>,
    /// Base seed [default: $STRATCOV_SEED, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of records.
    #[arg(long)]
    pub samples: Option<usize>,
    /// STAP: overall interference power.
    #[arg(long)]
    pub interference_scale: Option<f64>,
    /// STAP: balance the three covariance terms (true/false).
    #[arg(long)]
    pub normalize: Option<bool>,
    /// STAP: eigenvalue floor relative to the mean absolute eigenvalue.
    #[arg(long)]
    pub pd_floor_rel: Option<f64>,
    /// STAP: fraction of strata that receive records.
    #[arg(long)]
    pub active_fraction: Option<f64>,
    /// STAP: number of detection trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Cyclic: number of strata [default: 24].
    #[arg(long)]
    pub k: Option<usize>,
    /// Cyclic: dimension [default: 6].
    #[arg(long)]
    pub n: Option<usize>,
    /// Cyclic: size of the periodic covariance component [default: 1].
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Training fraction [default: 0.64].
    #[arg(long)]
    pub train: Option<f64>,
    /// Validation fraction [default: 0.16].
    #[arg(long)]
    pub val: Option<f64>,
    /// Test fraction [default: 0.2].
    #[arg(long)]
    pub test: Option<f64>,
}

layered!(GenerateArgs {
    out_dir, kind, preset, seed, samples, interference_scale, normalize, pd_floor_rel, active_fraction, trials, k, n,
    amplitude, train, val, test
});

/// Resolved generator settings, written to `generator.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    Stap(StapConfig),
    Cyclic(CyclicConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub out_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub table: Table,
}

impl fmt::Display for GenerateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.table)
    }
}

pub fn cmd_generate(args: GenerateArgs) -> Result<GenerateReport> {
    let a = args.resolve()?;
    let out_dir = required(a.out_dir, "out-dir")?;
    let seed = a.seed.or(seed_from_env()?).unwrap_or(0);
    let kind = a.kind.unwrap_or(DataKind::Stap);
    let (generator, covs, ds, graph) = match kind {
        DataKind::Stap => {
            if a.k.is_some() || a.n.is_some() || a.amplitude.is_some() {
                bail!(config_err("k, n and amplitude apply to the cyclic generator only"));
            }
            let preset = a.preset.as_deref().unwrap_or("full");
            let base = StapConfig::preset(preset).ok_or_else(|| config_err(format!("unknown preset `{preset}`")))?;
            let cfg = StapConfig {
                seed,
                samples: a.samples.unwrap_or(base.samples),
                interference_scale: a.interference_scale.unwrap_or(base.interference_scale),
                normalize: a.normalize.unwrap_or(base.normalize),
                pd_floor_rel: a.pd_floor_rel.unwrap_or(base.pd_floor_rel),
                active_fraction: a.active_fraction.unwrap_or(base.active_fraction),
                trials: a.trials.unwrap_or(base.trials),
                ..base
            };
            cfg.validate().map_err(|e| config_err(e.to_string()))?;
            let truth = stap::generate_true_covariances(&cfg)?;
            let ds = stap::sample_dataset(&truth, &cfg)?;
            let covs: Vec<SymMatrix> = truth.into_iter().map(|t| t.real).collect();
            let graph = cfg.graph([1.0; 3])?;
            (GeneratorConfig::Stap(cfg), covs, ds, graph)
        }
        DataKind::Cyclic => {
            let stap_only = a.preset.is_some()
                || a.interference_scale.is_some()
                || a.normalize.is_some()
                || a.pd_floor_rel.is_some()
                || a.active_fraction.is_some()
                || a.trials.is_some();
            if stap_only {
                bail!(config_err("preset and radar settings apply to the stap generator only"));
            }
            let base = CyclicConfig::default();
            let cfg = CyclicConfig {
                seed,
                k: a.k.unwrap_or(base.k),
                n: a.n.unwrap_or(base.n),
                samples: a.samples.unwrap_or(base.samples),
                amplitude: a.amplitude.unwrap_or(base.amplitude),
            };
            if cfg.k < 3 || cfg.n == 0 {
                bail!(config_err("cyclic generator needs k ≥ 3 and n ≥ 1"));
            }
            let (covs, ds) = cyclic_gaussian(&cfg)?;
            let graph = cycle_graph(cfg.k, 1.0)?;
            (GeneratorConfig::Cyclic(cfg), covs, ds, graph)
        }
    };
    let spec = SplitSpec::new(a.train.unwrap_or(0.64), a.val.unwrap_or(0.16), a.test.unwrap_or(0.2), seed)
        .map_err(|e| config_err(e.to_string()))?;
    let idx = data::split_indices(ds.m(), &spec)?;
    let truth = StratModel::from_covariances(&covs, graph)?;

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_file(&out_dir.join("data.csv"), &ds.to_csv_string())?;
    write_file(&out_dir.join("train.csv"), &ds.subset(&idx.train).to_csv_string())?;
    write_file(&out_dir.join("val.csv"), &ds.subset(&idx.val).to_csv_string())?;
    write_file(&out_dir.join("test.csv"), &ds.subset(&idx.test).to_csv_string())?;
    write_file(&out_dir.join("truth.json"), &truth.to_json())?;
    let manifest = SplitManifest { spec, train: idx.train.clone(), val: idx.val.clone(), test: idx.test.clone() };
    write_file(&out_dir.join("split.json"), &serde_json::to_string_pretty(&manifest)?)?;
    write_file(&out_dir.join("generator.json"), &serde_json::to_string_pretty(&generator)?)?;

    let counts = ds.subset(&idx.train).counts();
    let mut table = Table::new(&["K", "n", "records", "train", "val", "test", "empty_train_strata", "max_per_stratum"]);
    table.push(vec![
        ds.k().to_string(),
        ds.n().to_string(),
        ds.m().to_string(),
        idx.train.len().to_string(),
        idx.val.len().to_string(),
        idx.test.len().to_string(),
        counts.iter().filter(|&&c| c == 0).count().to_string(),
        counts.iter().max().copied().unwrap_or(0).to_string(),
    ]);
    Ok(GenerateReport { out_dir, generator, table })
}

/// Solver flags shared by `fit` and `gridsearch`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SolverArgs {
    /// ADMM penalty ω [default: 0.1].
    #[arg(long)]
    pub omega: Option<f64>,
    /// Absolute tolerance [default: 1e-3].
    #[arg(long)]
    pub eps_abs: Option<f64>,
    /// Relative tolerance [default: 1e-3].
    #[arg(long)]
    pub eps_rel: Option<f64>,
    /// Iteration cap [default: 1000].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative residual tolerance of the Laplacian CG solves [default: 1e-10].
    #[arg(long)]
    pub cg_tol: Option<f64>,
    /// CG iteration cap [default: 10·K].
    #[arg(long)]
    pub cg_max_iter: Option<usize>,
}

impl SolverArgs {
    fn overlay(self, base: Self) -> Self {
        Self {
            omega: self.omega.or(base.omega),
            eps_abs: self.eps_abs.or(base.eps_abs),
            eps_rel: self.eps_rel.or(base.eps_rel),
            max_iter: self.max_iter.or(base.max_iter),
            cg_tol: self.cg_tol.or(base.cg_tol),
            cg_max_iter: self.cg_max_iter.or(base.cg_max_iter),
        }
    }

    fn to_config(&self) -> Result<FitConfig> {
        let d = FitConfig::default();
        let cfg = FitConfig {
            omega: self.omega.unwrap_or(d.omega),
            eps_abs: self.eps_abs.unwrap_or(d.eps_abs),
            eps_rel: self.eps_rel.unwrap_or(d.eps_rel),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            cg_tol: self.cg_tol.unwrap_or(d.cg_tol),
            cg_max_iter: self.cg_max_iter.or(d.cg_max_iter),
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FitArgs {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Training CSV (`z,y1,...,yn`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Regularization graph, e.g. `product:[path:10:1,cycle:10:1,path:10:1]`.
    #[arg(long)]
    pub graph: Option<String>,
    /// Fit one model to all records pooled (ignores the graph).
    #[arg(long)]
    pub common: Option<bool>,
    /// Local regularizer: none, trace:g, frobenius:g, l1:g, trace_od:g_tr:g_od [default: none].
    #[arg(long)]
    pub reg: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Output model file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration residual CSV.
    #[arg(long)]
    pub residuals: Option<PathBuf>,
}

impl Layered for FitArgs {
    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn overlay(self, base: Self) -> Self {
        Self {
            config: self.config,
            data: self.data.or(base.data),
            graph: self.graph.or(base.graph),
            common: self.common.or(base.common),
            reg: self.reg.or(base.reg),
            solver: self.solver.overlay(base.solver),
            out: self.out.or(base.out),
            residuals: self.residuals.or(base.residuals),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: StratModel,
    pub out: PathBuf,
    pub table: Table,
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.table)
    }
}

fn summary_row(table: &mut Table, name: &str, m: &StratModel) {
    let s = m.fit_summary();
    let g = |f: fn(&model::FitSummary) -> String| s.map_or_else(|| "-".to_string(), f);
    table.push(vec![
        name.to_string(),
        m.k().to_string(),
        g(|s| s.converged.to_string()),
        g(|s| s.iterations.to_string()),
        g(|s| format!("{:.3e}", s.r_norm)),
        g(|s| format!("{:.3e}", s.s_norm)),
        g(|s| format!("{:.6}", s.objective)),
    ]);
}

pub fn cmd_fit(args: FitArgs) -> Result<FitReport> {
    let a = args.resolve()?;
    let data_path = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let reg: LocalRegularizer = a
        .reg
        .as_deref()
        .unwrap_or("none")
        .parse()
        .map_err(|e| config_err(format!("invalid reg: {e}")))?;
    let config = a.solver.to_config()?;
    let common = a.common.unwrap_or(false);
    let (ds, graph) = if common {
        (load_data(&data_path, None)?.pooled(), stratcov::RegGraph::edgeless(1)?)
    } else {
        let spec = required(a.graph, "graph")?;
        let graph = GraphSpec::parse(&spec).and_then(|g| g.build()).map_err(|e| config_err(format!("invalid graph: {e}")))?;
        (load_data(&data_path, Some(graph.k()))?, graph)
    };
    let outcome = model::fit_detailed(&ds, &graph, &reg, &config)?;
    if !outcome.model.converged() {
        log::warn!("ADMM stopped at the iteration cap without converging");
    }
    outcome.model.save(&out)?;
    if let Some(path) = &a.residuals {
        write_file(path, &outcome.diagnostics.residual_csv())?;
    }
    let mut table = Table::new(&["model", "K", "converged", "iterations", "r_norm", "s_norm", "objective"]);
    summary_row(&mut table, &model_name(&out), &outcome.model);
    Ok(FitReport { model: outcome.model, out, table })
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Evaluation CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model files (comma separated).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub models: Option<Vec<PathBuf>>,
    /// True model file; adds the D(θ) column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

layered!(EvalArgs { data, models, truth, out });

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub k: usize,
    pub avg_loss: f64,
    pub d: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub table: Table,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.table)
    }
}

pub fn cmd_eval(args: EvalArgs) -> Result<EvalReport> {
    let a = args.resolve()?;
    let data_path = required(a.data, "data")?;
    let models = required(a.models, "models")?;
    let truth_cov = match a.truth.as_deref() {
        Some(p) => Some(load_model(p)?.covariances()?),
        None => None,
    };
    let mut rows = Vec::new();
    for path in &models {
        let m = load_model(path)?;
        let k = if m.k() == 1 { None } else { Some(m.k()) };
        let ds = load_data(&data_path, k)?;
        let avg_loss = model::average_loss(&m, &ds)?;
        let d = truth_cov.as_deref().map(|c| model::d_metric(&m, c)).transpose()?;
        rows.push(EvalRow { name: model_name(path), k: m.k(), avg_loss, d });
    }
    let mut table = Table::new(&["model", "K", "avg_loss", "D"]);
    for r in &rows {
        table.push(vec![
            r.name.clone(),
            r.k.to_string(),
            r.avg_loss.to_string(),
            r.d.map_or_else(|| "-".to_string(), |d| d.to_string()),
        ]);
    }
    if let Some(out) = &a.out {
        write_file(out, &table.to_csv())?;
    }
    Ok(EvalReport { rows, table })
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DetectArgs {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// `generator.json` written by `generate` (STAP kind).
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// True model file (its θ are the inverse interference covariances).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Model files to score (comma separated).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub models: Option<Vec<PathBuf>>,
    /// Number of trials [default: from the generator].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Directory for `roc_<model>.csv` files and `auc.csv`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

layered!(DetectArgs { generator, truth, models, trials, out_dir });

#[derive(Debug, Clone)]
pub struct DetectReport {
    /// `(name, roc)`; the last entry is the true model.
    pub curves: Vec<(String, stap::Roc)>,
    pub table: Table,
}

impl DetectReport {
    pub fn auc(&self, name: &str) -> Option<f64> {
        self.curves.iter().find(|(n, _)| n == name).map(|(_, r)| r.auc)
    }
}

impl fmt::Display for DetectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.table)
    }
}

fn read_generator(path: &Path) -> Result<GeneratorConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("invalid generator file {}: {e}", path.display())))
}

pub fn cmd_detect(args: DetectArgs) -> Result<DetectReport> {
    let a = args.resolve()?;
    let mut cfg = match read_generator(&required(a.generator, "generator")?)? {
        GeneratorConfig::Stap(c) => c,
        GeneratorConfig::Cyclic(_) => bail!(config_err("detection needs a STAP generator")),
    };
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    let truth = load_model(&required(a.truth, "truth")?)?;
    let models = required(a.models, "models")?;
    let out_dir = required(a.out_dir, "out-dir")?;
    let covs = truth.covariances()?;
    let trials = DetectionTrials::generate(&covs, &cfg)?;
    let mut curves = Vec::new();
    for path in &models {
        let m = load_model(path)?;
        curves.push((model_name(path), trials.roc(m.theta())?));
    }
    curves.push(("truth".to_string(), trials.roc(truth.theta())?));
    let mut table = Table::new(&["model", "auc"]);
    for (name, roc) in &curves {
        write_file(&out_dir.join(format!("roc_{name}.csv")), &roc.to_csv())?;
        table.push(vec![name.clone(), format!("{:.6}", roc.auc)]);
    }
    write_file(&out_dir.join("auc.csv"), &table.to_csv())?;
    Ok(DetectReport { curves, table })
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ForecastArgs {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Evaluation CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model files (comma separated).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub models: Option<Vec<PathBuf>>,
    /// Observed coordinate indices (comma separated) [default: first half].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub observed: Option<Vec<usize>>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

layered!(ForecastArgs { data, models, observed, out });

#[derive(Debug, Clone)]
pub struct ForecastReport {
    /// `(name, rmse)`.
    pub rows: Vec<(String, f64)>,
    pub table: Table,
}

impl fmt::Display for ForecastReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.table)
    }
}

pub fn cmd_forecast(args: ForecastArgs) -> Result<ForecastReport> {
    let a = args.resolve()?;
    let data_path = required(a.data, "data")?;
    let models = required(a.models, "models")?;
    let mut rows = Vec::new();
    for path in &models {
        let m = load_model(path)?;
        let k = if m.k() == 1 { None } else { Some(m.k()) };
        let ds = load_data(&data_path, k)?;
        let observed = a.observed.clone().unwrap_or_else(|| (0..m.n() / 2).collect());
        let rmse = model::forecast_rmse(&m, &ds, &observed).map_err(|e| match e {
            model::ModelError::InvalidForecast(msg) => config_err(msg),
            other => other.into(),
        })?;
        rows.push((model_name(path), rmse));
    }
    let mut table = Table::new(&["model", "rmse"]);
    for (name, rmse) in &rows {
        table.push(vec![name.clone(), rmse.to_string()]);
    }
    if let Some(out) = &a.out {
        write_file(out, &table.to_csv())?;
    }
    Ok(ForecastReport { rows, table })
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GridArgs {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Training CSV.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation CSV.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Graph factors, e.g. `path:10,cycle:10,path:10`; `empty:1` is the common model.
    #[arg(long)]
    pub template: Option<String>,
    /// Local regularizers to try (comma separated, see `fit --reg`).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub local: Option<Vec<String>>,
    /// Edge-weight vectors to try, one `w1:w2:...` per factor (comma separated).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub weights: Option<Vec<String>>,
    /// Refit the best point on train + validation [default: true].
    #[arg(long)]
    pub refit: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Output model file (best point).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl Layered for GridArgs {
    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn overlay(self, base: Self) -> Self {
        Self {
            config: self.config,
            train: self.train.or(base.train),
            val: self.val.or(base.val),
            template: self.template.or(base.template),
            local: self.local.or(base.local),
            weights: self.weights.or(base.weights),
            refit: self.refit.or(base.refit),
            solver: self.solver.overlay(base.solver),
            out: self.out.or(base.out),
            log: self.log.or(base.log),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub result: model::GridSearchResult,
    /// The model written to `out` (refit on train + validation when enabled).
    pub model: StratModel,
    pub table: Table,
}

impl fmt::Display for GridReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.table)?;
        writeln!(f, "best: #{} {} weights {:?}", self.result.best_index, self.result.best.reg, self.result.best.edge_weights)
    }
}

fn parse_weights(s: &str) -> Result<Vec<f64>> {
    s.split(':')
        .map(|w| w.trim().parse::<f64>().map_err(|_| config_err(format!("invalid edge weights `{s}`"))))
        .collect()
}

pub fn cmd_gridsearch(args: GridArgs) -> Result<GridReport> {
    let a = args.resolve()?;
    let template = GraphTemplate::parse(a.template.as_deref().unwrap_or("empty:1"))
        .map_err(|e| config_err(format!("invalid template: {e}")))?;
    let local: Vec<LocalRegularizer> = parse_list(&a.local.unwrap_or_else(|| vec!["none".into()]), "regularizer")?;
    let weights = match a.weights {
        Some(ws) => ws.iter().map(|w| parse_weights(w)).collect::<Result<Vec<_>>>()?,
        None => vec![vec![0.0; template.factors.len()]],
    };
    if let Some(w) = weights.iter().find(|w| w.len() != template.factors.len()) {
        bail!(config_err(format!("{} edge weights for {} graph factors", w.len(), template.factors.len())));
    }
    for w in &weights {
        template.build(w).map_err(|e| config_err(format!("invalid template: {e}")))?;
    }
    let config = a.solver.to_config()?;
    // a one-vertex template is the common model: any stratum labels are pooled
    let k = (template.k() > 1).then(|| template.k());
    let train = load_data(&required(a.train, "train")?, k)?;
    let val = load_data(&required(a.val, "val")?, k)?;
    let out = required(a.out, "out")?;
    let grid = HyperGrid { local, edge_weights: weights };
    let result = model::grid_search(&train, &val, &template, &grid, &config)?;
    let model = if a.refit.unwrap_or(true) {
        let all = train.concat(&val)?;
        let all = if template.k() == 1 { all.pooled() } else { all };
        let graph = template.build(&result.best.edge_weights)?;
        match model::fit(&all, &graph, &result.best.reg, &config) {
            Ok(m) => m,
            Err(model::ModelError::NotConverged(m)) => {
                log::warn!("refit of the best grid point did not converge");
                *m
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        result.model.clone()
    };
    model.save(&out)?;
    let mut table = Table::new(&["index", "reg", "edge_weights", "val_loss", "converged", "iterations"]);
    for (i, e) in result.log.iter().enumerate() {
        let w: Vec<String> = e.point.edge_weights.iter().map(f64::to_string).collect();
        table.push(vec![
            i.to_string(),
            e.point.reg.to_string(),
            w.join(":"),
            e.val_loss.to_string(),
            e.converged.to_string(),
            e.iterations.to_string(),
        ]);
    }
    if let Some(log) = &a.log {
        write_file(log, &table.to_csv())?;
    }
    Ok(GridReport { result, model, table })
}

/// Runs one parsed command line and returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(config_err("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring thread pool")?;
    }
    let mut out = String::new();
    match cli.command {
        Command::Generate(a) => write!(out, "{}", cmd_generate(a)?)?,
        Command::Fit(a) => write!(out, "{}", cmd_fit(a)?)?,
        Command::Eval(a) => write!(out, "{}", cmd_eval(a)?)?,
        Command::Detect(a) => write!(out, "{}", cmd_detect(a)?)?,
        Command::Forecast(a) => write!(out, "{}", cmd_forecast(a)?)?,
        Command::Gridsearch(a) => write!(out, "{}", cmd_gridsearch(a)?)?,
    }
    Ok(out)
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        2
    } else {
        1
    }
}
