#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stratcov::graph::Edge;
use stratcov::linalg::SymMatrix;
use stratcov::prox::StratumStats;
use stratcov::RegGraph;
use stratcov_oracle::{OracleInstance, SmoothReg};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `B Bᵀ / n + shift·I` with Gaussian `B`.
pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> SymMatrix {
    let b: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    SymMatrix::from_lower_fn(n, |i, j| {
        let dot: f64 = (0..n).map(|p| b[i * n + p] * b[j * n + p]).sum();
        dot / n as f64 + if i == j { shift } else { 0.0 }
    })
}

/// Empirical covariance of `m` standard normal draws.
pub fn sample_cov(rng: &mut impl Rng, n: usize, m: usize) -> SymMatrix {
    let ys: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    SymMatrix::from_lower_fn(n, |i, j| ys.iter().map(|y| y[i] * y[j]).sum::<f64>() / m as f64)
}

/// Random connected graph: a spanning path plus extra random edges.
pub fn random_graph(rng: &mut impl Rng, k: usize, extra: usize) -> RegGraph {
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..k {
        pairs.insert((i - 1, i));
    }
    for _ in 0..extra {
        let i = rng.random_range(0..k);
        let j = rng.random_range(0..k);
        if i != j {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let edges = pairs.into_iter().map(|(i, j)| Edge { i, j, w: rng.random_range(0.1..2.0) }).collect();
    RegGraph::new(k, edges).unwrap()
}

pub fn dense(m: &SymMatrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

pub fn oracle_instance(stats: &[StratumStats], graph: &RegGraph, reg: SmoothReg) -> OracleInstance {
    OracleInstance {
        k: stats.len(),
        n: stats[0].dim(),
        counts: stats.iter().map(|s| s.count).collect(),
        covs: stats.iter().map(|s| dense(&s.cov)).collect(),
        edges: graph.edges().iter().map(|e| (e.i, e.j, e.w)).collect(),
        reg,
    }
}
