//! ADMM driver for Laplacian-regularized joint covariance estimation.
//!
//! The problem `Σ_k ℓ_k(θ_k) + r(θ_k) + ½ Σ W_ij ‖θ_i − θ_j‖_F²` is split into
//! a loss block `θ`, a regularizer block `θ̃` and a Laplacian block `θ̂`, with
//! consensus constraints `θ = θ̂`, `θ̃ = θ̂`. Each iteration:
//!
//! 1. `θ_k ← prox_{ωℓ_k}(θ̂_k − U_k)` (parallel over strata)
//! 2. `θ̃_k ← prox_{ωr}(θ̂_k − Ũ_k)` (parallel over strata)
//! 3. `θ̂ ← prox_{ωL/2}(½(θ + U + θ̃ + Ũ))`, i.e. `n(n+1)/2` systems
//!    `(L + (2/ω)I) x = (1/ω)(θ + U + θ̃ + Ũ)_ij` solved by warm-started PCG
//! 4. `U ← U + θ − θ̂`, `Ũ ← Ũ + θ̃ − θ̂`

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{solve_regularized_laplacian, Block, CgOptions, GraphError, RegGraph, SparseLaplacian};
use crate::linalg::{log_det, LinalgError, SymMatrix};
use crate::prox::{prox_local, prox_loss_parts, LocalRegularizer, RegularizerError, StratumStats};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Regularizer(#[from] RegularizerError),
    #[error("problem has no unique solution: every stratum is empty and there is no local regularization")]
    NotUnique,
    #[error("ADMM did not converge within {} iterations", .0.diagnostics.iterations)]
    MaxIterExceeded(Box<AdmmFit>),
    #[error("ADMM iterates became non-finite at iteration {0}")]
    Diverged(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("Laplacian solve failed: {0}")]
    Laplacian(#[from] GraphError),
}

/// ADMM penalty, tolerances and iteration caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub omega: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
    /// Per-column CG cap; `None` means `10·K`.
    pub cg_max_iter: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { omega: 0.1, eps_abs: 1e-3, eps_rel: 1e-3, max_iter: 1000, cg_tol: 1e-10, cg_max_iter: None }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SolverError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("omega", self.omega)?;
        positive("eps_abs", self.eps_abs)?;
        positive("eps_rel", self.eps_rel)?;
        positive("cg_tol", self.cg_tol)?;
        if self.eps_abs > 1.0 || self.eps_rel > 1.0 {
            return Err(SolverError::InvalidConfig("tolerances must not exceed 1".into()));
        }
        if self.max_iter == 0 || self.cg_max_iter == Some(0) {
            return Err(SolverError::InvalidConfig("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// The five ADMM iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub theta: Vec<SymMatrix>,
    pub theta_tilde: Vec<SymMatrix>,
    pub theta_hat: Vec<SymMatrix>,
    pub u: Vec<SymMatrix>,
    pub u_tilde: Vec<SymMatrix>,
    pub iter: usize,
}

impl AdmmState {
    /// All iterates zero.
    pub fn zeros(k: usize, n: usize) -> Self {
        let z = vec![SymMatrix::zeros(n); k];
        Self {
            theta: z.clone(),
            theta_tilde: z.clone(),
            theta_hat: z.clone(),
            u: z.clone(),
            u_tilde: z,
            iter: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    fn check_shape(&self, k: usize, n: usize) -> Result<(), SolverError> {
        let groups = [&self.theta, &self.theta_tilde, &self.theta_hat, &self.u, &self.u_tilde];
        for g in groups {
            if g.len() != k || g.iter().any(|m| m.dim() != n) {
                return Err(SolverError::DimensionMismatch(format!(
                    "warm-start state must hold {k} matrices of size {n}"
                )));
            }
        }
        Ok(())
    }
}

/// One row of the residual history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    /// Objective at the loss block `θ`, which is always positive definite.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: Duration,
}

impl Diagnostics {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.history.last()
    }

    /// `iter,r_norm,s_norm,eps_pri,eps_dual,objective` table.
    pub fn residual_csv(&self) -> String {
        let mut s = String::from("iter,r_norm,s_norm,eps_pri,eps_dual,objective\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.r_norm, r.s_norm, r.eps_pri, r.eps_dual, r.objective
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct AdmmFit {
    /// Laplacian block `θ̂`, symmetric by construction.
    pub theta_hat: Vec<SymMatrix>,
    pub state: AdmmState,
    pub diagnostics: Diagnostics,
}

/// Runs ADMM from the all-zero initialization.
pub fn fit_admm(
    stats: &[StratumStats],
    lap: &SparseLaplacian,
    reg: &LocalRegularizer,
    config: &FitConfig,
) -> Result<AdmmFit, SolverError> {
    let n = stats.first().map(StratumStats::dim).ok_or_else(|| {
        SolverError::DimensionMismatch("at least one stratum is required".into())
    })?;
    fit_admm_from(AdmmState::zeros(stats.len(), n), stats, lap, reg, config)
}

/// Runs ADMM starting from `state`.
pub fn fit_admm_from(
    mut state: AdmmState,
    stats: &[StratumStats],
    lap: &SparseLaplacian,
    reg: &LocalRegularizer,
    config: &FitConfig,
) -> Result<AdmmFit, SolverError> {
    let start = Instant::now();
    config.validate()?;
    reg.validate()?;
    let k = stats.len();
    if k != lap.k() {
        return Err(SolverError::DimensionMismatch(format!(
            "{k} strata but Laplacian has {} vertices",
            lap.k()
        )));
    }
    let n = stats.first().map(StratumStats::dim).unwrap_or(0);
    if n == 0 || stats.iter().any(|s| s.dim() != n) {
        return Err(SolverError::DimensionMismatch("all strata must share one dimension".into()));
    }
    if stats.iter().all(|s| s.count == 0) && *reg == LocalRegularizer::None {
        return Err(SolverError::NotUnique);
    }
    state.check_shape(k, n)?;

    let omega = config.omega;
    let pairs = n * (n + 1) / 2;
    let cg = CgOptions { tol: config.cg_tol, max_iter: config.cg_max_iter };
    let abs_scale = ((2 * k * n * n) as f64).sqrt() * config.eps_abs;
    let mut hat_block = pack_lower(&state.theta_hat, k, n, 1.0);
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iter {
        state.iter += 1;
        let t = state.iter;

        // 1. loss prox
        let loss: Vec<_> = (0..k)
            .into_par_iter()
            .map(|i| prox_loss_parts(&(&state.theta_hat[i] - &state.u[i]), &stats[i], omega))
            .collect::<Result<_, _>>()?;
        let mut log_dets = Vec::with_capacity(k);
        state.theta = loss
            .into_iter()
            .map(|p| {
                log_dets.push(p.log_det);
                p.theta
            })
            .collect();

        // 2. local regularizer prox
        state.theta_tilde = (0..k)
            .into_par_iter()
            .map(|i| prox_local(&(&state.theta_hat[i] - &state.u_tilde[i]), reg, omega))
            .collect();

        // 3. Laplacian prox
        let rhs = pack_sum(&state, k, n, 1.0 / omega);
        let solved = solve_regularized_laplacian(lap, omega, &rhs, Some(&hat_block), cg)?;
        hat_block = solved.x;
        let new_hat = unpack_lower(&hat_block, k, n);

        let hat_change_sq: f64 =
            new_hat.iter().zip(&state.theta_hat).map(|(a, b)| a.frobenius_distance_sq(b)).sum();
        state.theta_hat = new_hat;

        // 4. dual update
        for i in 0..k {
            state.u[i] = &(&state.u[i] + &state.theta[i]) - &state.theta_hat[i];
            state.u_tilde[i] = &(&state.u_tilde[i] + &state.theta_tilde[i]) - &state.theta_hat[i];
        }

        let mut r_sq = 0.0;
        let mut loss_block_sq = 0.0;
        let mut hat_sq = 0.0;
        let mut dual_sq = 0.0;
        for i in 0..k {
            r_sq += state.theta[i].frobenius_distance_sq(&state.theta_hat[i])
                + state.theta_tilde[i].frobenius_distance_sq(&state.theta_hat[i]);
            loss_block_sq += state.theta[i].frobenius_norm_sq() + state.theta_tilde[i].frobenius_norm_sq();
            hat_sq += 2.0 * state.theta_hat[i].frobenius_norm_sq();
            dual_sq += state.u[i].frobenius_norm_sq() + state.u_tilde[i].frobenius_norm_sq();
        }
        let r_norm = r_sq.sqrt();
        let s_norm = (2.0 * hat_change_sq).sqrt() / omega;
        let eps_pri = abs_scale + config.eps_rel * loss_block_sq.sqrt().max(hat_sq.sqrt());
        let eps_dual = abs_scale + config.eps_rel / omega * dual_sq.sqrt();
        let objective = objective_with_log_dets(&state.theta, &log_dets, stats, lap, reg);
        if !(r_norm.is_finite() && s_norm.is_finite()) {
            return Err(SolverError::Diverged(t));
        }
        history.push(IterationRecord { iter: t, r_norm, s_norm, eps_pri, eps_dual, objective });
        debug_assert_eq!(hat_block.cols(), pairs);

        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
    }

    let diagnostics = Diagnostics {
        iterations: history.len(),
        history,
        converged,
        wall_time: start.elapsed(),
    };
    let fit = AdmmFit { theta_hat: state.theta_hat.clone(), state, diagnostics };
    if converged {
        Ok(fit)
    } else {
        Err(SolverError::MaxIterExceeded(Box::new(fit)))
    }
}

/// Index of `(i, j)`, `i ≥ j`, in the packed lower triangle.
#[inline]
fn pair_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn pack_lower(mats: &[SymMatrix], k: usize, n: usize, scale: f64) -> Block {
    let mut b = Block::zeros(k, n * (n + 1) / 2);
    for (s, m) in mats.iter().enumerate() {
        for i in 0..n {
            for j in 0..=i {
                b.set(s, pair_index(i, j), scale * m.get(i, j));
            }
        }
    }
    b
}

fn pack_sum(state: &AdmmState, k: usize, n: usize, scale: f64) -> Block {
    let mut b = Block::zeros(k, n * (n + 1) / 2);
    for s in 0..k {
        let (a, u, at, ut) = (&state.theta[s], &state.u[s], &state.theta_tilde[s], &state.u_tilde[s]);
        for i in 0..n {
            for j in 0..=i {
                let v = a.get(i, j) + u.get(i, j) + at.get(i, j) + ut.get(i, j);
                b.set(s, pair_index(i, j), scale * v);
            }
        }
    }
    b
}

fn unpack_lower(b: &Block, k: usize, n: usize) -> Vec<SymMatrix> {
    (0..k)
        .map(|s| {
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = b.get(s, pair_index(i, j));
                    data[i * n + j] = v;
                    data[j * n + i] = v;
                }
            }
            SymMatrix::from_symmetric_unchecked(n, data)
        })
        .collect()
}

/// `½ Σ_{u,v} θ_{·uv}ᵀ L θ_{·uv}`, i.e. `½ Tr(θᵀ (I ⊗ L) θ)`.
pub fn laplacian_penalty(theta: &[SymMatrix], lap: &SparseLaplacian) -> f64 {
    let k = theta.len();
    assert_eq!(k, lap.k());
    let n = theta.first().map_or(0, SymMatrix::dim);
    let mut col = vec![0.0; k];
    let mut total = 0.0;
    for u in 0..n {
        for v in 0..n {
            for (c, t) in col.iter_mut().zip(theta) {
                *c = t.get(u, v);
            }
            total += lap.quadratic_form(&col);
        }
    }
    0.5 * total
}

/// `½ Σ_{(i,j) ∈ E} W_ij ‖θ_i − θ_j‖_F²`, each undirected edge counted once.
/// Equal to [`laplacian_penalty`].
pub fn laplacian_penalty_edges(theta: &[SymMatrix], graph: &RegGraph) -> f64 {
    0.5 * graph
        .edges()
        .iter()
        .map(|e| e.w * theta[e.i].frobenius_distance_sq(&theta[e.j]))
        .sum::<f64>()
}

/// Full objective `Σ_k [n_k(Tr(S_k θ_k) − log det θ_k) + r(θ_k)] + ½ Σ W_ij ‖θ_i − θ_j‖²`.
pub fn objective(
    theta: &[SymMatrix],
    stats: &[StratumStats],
    lap: &SparseLaplacian,
    reg: &LocalRegularizer,
) -> Result<f64, SolverError> {
    if theta.len() != stats.len() || theta.len() != lap.k() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} matrices, {} strata, {} graph vertices",
            theta.len(),
            stats.len(),
            lap.k()
        )));
    }
    let log_dets = theta.iter().map(log_det).collect::<Result<Vec<_>, _>>()?;
    Ok(objective_with_log_dets(theta, &log_dets, stats, lap, reg))
}

fn objective_with_log_dets(
    theta: &[SymMatrix],
    log_dets: &[f64],
    stats: &[StratumStats],
    lap: &SparseLaplacian,
    reg: &LocalRegularizer,
) -> f64 {
    let local: f64 = theta
        .iter()
        .zip(log_dets)
        .zip(stats)
        .map(|((t, ld), s)| {
            let loss = if s.count == 0 { 0.0 } else { s.count as f64 * (s.cov.trace_product(t) - ld) };
            loss + reg.value(t)
        })
        .sum();
    local + laplacian_penalty(theta, lap)
}
