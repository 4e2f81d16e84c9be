//! Deterministic inputs shared by the benchmarks.

use stratcov::graph::Block;
use stratcov::model::sufficient_stats;
use stratcov::stap::{generate_true_covariances, sample_dataset, StapConfig};
use stratcov::{laplacian, SparseLaplacian, StratumStats, SymMatrix};

/// Dense, well-spread symmetric test matrix.
pub fn sym_matrix(n: usize) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |i, j| ((i * 31 + j * 17) as f64).sin() + if i == j { n as f64 * 0.1 } else { 0.0 })
}

/// Deterministic right-hand sides for the Laplacian solve.
pub fn block(k: usize, cols: usize) -> Block {
    let columns: Vec<Vec<f64>> = (0..cols).map(|c| (0..k).map(|i| ((i * 7 + c * 13) as f64).cos()).collect()).collect();
    Block::from_columns(k, &columns)
}

/// Sufficient statistics and Laplacian of a generated radar problem.
pub fn stap_problem(cfg: &StapConfig) -> (Vec<StratumStats>, SparseLaplacian) {
    let truth = generate_true_covariances(cfg).expect("valid preset");
    let ds = sample_dataset(&truth, cfg).expect("valid preset");
    let graph = cfg.graph([100.0; 3]).expect("valid preset");
    (sufficient_stats(&ds), laplacian(&graph))
}
