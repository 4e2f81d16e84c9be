//! Laplacian-regularized joint estimation of inverse covariance matrices for
//! Gaussian models whose parameters depend on a categorical stratification
//! feature.
//!
//! Each stratum `k` of a graph with `K` vertices carries a precision matrix
//! `θ_k`. Fitting minimizes per-stratum negative log-likelihoods plus a graph
//! Laplacian penalty `½ Σ_(i,j)∈E W_ij ‖θ_i − θ_j‖²_F` that pulls neighbouring
//! strata together. A local regularizer on each `θ_k` is optional.
//! The solver is ADMM with per-stratum proximal steps and a sparse
//! Laplacian solve shared by all matrix entries.

pub mod data;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod prox;
pub mod solver;
pub mod stap;

pub use data::{Record, SplitSpec, StratDataset};
pub use graph::{cartesian_product, cycle_graph, laplacian, path_graph, GraphSpec, RegGraph, SparseLaplacian};
pub use linalg::{LinalgError, Matrix, SymMatrix};
pub use model::{fit, fit_common, fit_detailed, FitOutcome, FitSummary, ModelError, StratModel};
pub use prox::{LocalRegularizer, StratumStats, EPS_PD};
pub use solver::{fit_admm, AdmmFit, AdmmState, Diagnostics, FitConfig, SolverError};
