//! Closed-form proximal operators for the Gaussian loss and the local
//! regularizers, with `prox_{ωf}(V) = argmin_θ ωf(θ) + ½‖θ − V‖_F²`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sym_eig, LinalgError, SymMatrix};

/// Eigenvalue floor used when projecting onto the positive definite cone
/// (empty strata, and the final clamp of fitted models).
pub const EPS_PD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizerError {
    #[error("regularization weight must be finite and nonnegative, got {0}")]
    InvalidWeight(f64),
    #[error("invalid regularizer `{0}`: expected none, trace:g, frobenius:g, l1:g or trace_od:g1:g2")]
    Parse(String),
}

/// Local regularizer `r(θ)` applied to every stratum.
///
/// `Frobenius(γ)` is `(γ/2)‖θ‖_F²`, whose prox is `V / (1 + ωγ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalRegularizer {
    #[default]
    None,
    Trace {
        gamma: f64,
    },
    Frobenius {
        gamma: f64,
    },
    L1 {
        gamma: f64,
    },
    /// `γ_tr Tr θ + γ_od Σ_{i≠j} |θ_ij|`.
    TracePlusOffDiagL1 {
        gamma_tr: f64,
        gamma_od: f64,
    },
}

impl LocalRegularizer {
    pub fn validate(&self) -> Result<(), RegularizerError> {
        let check = |g: f64| {
            if g.is_finite() && g >= 0.0 {
                Ok(())
            } else {
                Err(RegularizerError::InvalidWeight(g))
            }
        };
        match *self {
            LocalRegularizer::None => Ok(()),
            LocalRegularizer::Trace { gamma }
            | LocalRegularizer::Frobenius { gamma }
            | LocalRegularizer::L1 { gamma } => check(gamma),
            LocalRegularizer::TracePlusOffDiagL1 { gamma_tr, gamma_od } => {
                check(gamma_tr)?;
                check(gamma_od)
            }
        }
    }

    /// `r(θ)`.
    pub fn value(&self, theta: &SymMatrix) -> f64 {
        let n = theta.dim();
        match *self {
            LocalRegularizer::None => 0.0,
            LocalRegularizer::Trace { gamma } => gamma * theta.trace(),
            LocalRegularizer::Frobenius { gamma } => 0.5 * gamma * theta.frobenius_norm_sq(),
            LocalRegularizer::L1 { gamma } => gamma * theta.as_slice().iter().map(|x| x.abs()).sum::<f64>(),
            LocalRegularizer::TracePlusOffDiagL1 { gamma_tr, gamma_od } => {
                let mut od = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            od += theta.get(i, j).abs();
                        }
                    }
                }
                gamma_tr * theta.trace() + gamma_od * od
            }
        }
    }

    /// Differentiable everywhere (gradient-based oracles apply).
    pub fn is_smooth(&self) -> bool {
        matches!(
            self,
            LocalRegularizer::None | LocalRegularizer::Trace { .. } | LocalRegularizer::Frobenius { .. }
        )
    }
}

impl fmt::Display for LocalRegularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalRegularizer::None => write!(f, "none"),
            LocalRegularizer::Trace { gamma } => write!(f, "trace:{gamma}"),
            LocalRegularizer::Frobenius { gamma } => write!(f, "frobenius:{gamma}"),
            LocalRegularizer::L1 { gamma } => write!(f, "l1:{gamma}"),
            LocalRegularizer::TracePlusOffDiagL1 { gamma_tr, gamma_od } => {
                write!(f, "trace_od:{gamma_tr}:{gamma_od}")
            }
        }
    }
}

impl FromStr for LocalRegularizer {
    type Err = RegularizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RegularizerError::Parse(s.to_string());
        let fields: Vec<&str> = s.trim().split(':').collect();
        let num = |f: &str| f.trim().parse::<f64>().map_err(|_| bad());
        let reg = match fields.as_slice() {
            ["none"] => LocalRegularizer::None,
            ["trace", g] => LocalRegularizer::Trace { gamma: num(g)? },
            ["frobenius", g] => LocalRegularizer::Frobenius { gamma: num(g)? },
            ["l1", g] => LocalRegularizer::L1 { gamma: num(g)? },
            ["trace_od", g1, g2] => LocalRegularizer::TracePlusOffDiagL1 { gamma_tr: num(g1)?, gamma_od: num(g2)? },
            _ => return Err(bad()),
        };
        reg.validate()?;
        Ok(reg)
    }
}

/// Per-stratum sufficient statistics: sample count and empirical covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumStats {
    pub count: usize,
    /// `(1/n_k) Σ y yᵀ`; the zero matrix when `count == 0`.
    pub cov: SymMatrix,
}

impl StratumStats {
    pub fn empty(n: usize) -> Self {
        Self { count: 0, cov: SymMatrix::zeros(n) }
    }

    pub fn new(count: usize, cov: SymMatrix) -> Self {
        let cov = if count == 0 { SymMatrix::zeros(cov.dim()) } else { cov };
        Self { count, cov }
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

/// Loss prox result together with `log det θ`, which falls out of the
/// eigenvalues for free.
pub(crate) struct LossProx {
    pub theta: SymMatrix,
    pub log_det: f64,
}

/// `prox_{ωℓ_k}(V)` for `ℓ_k(θ) = n_k (Tr(S_k θ) − log det θ)`.
///
/// With `(1/(ω n_k)) V − S_k = Q diag(d) Qᵀ` the result is `Q diag(x) Qᵀ`,
/// `x_i = (ω n_k d_i + sqrt((ω n_k d_i)² + 4 ω n_k)) / 2`. Empty strata project
/// onto the cone `θ ⪰ EPS_PD · I`.
pub fn prox_loss(v: &SymMatrix, stats: &StratumStats, omega: f64) -> Result<SymMatrix, LinalgError> {
    Ok(prox_loss_parts(v, stats, omega)?.theta)
}

pub(crate) fn prox_loss_parts(v: &SymMatrix, stats: &StratumStats, omega: f64) -> Result<LossProx, LinalgError> {
    if v.dim() != stats.dim() {
        return Err(LinalgError::DimensionMismatch { expected: stats.dim(), got: v.dim() });
    }
    if stats.count == 0 {
        let eig = sym_eig(v)?;
        let x: Vec<f64> = eig.values.iter().map(|&d| d.max(EPS_PD)).collect();
        let log_det = x.iter().map(|x| x.ln()).sum();
        return Ok(LossProx { theta: SymMatrix::from_eigen(&eig.q, &x), log_det });
    }
    let b = omega * stats.count as f64;
    let shifted = &v.scaled(1.0 / b) - &stats.cov;
    let eig = sym_eig(&shifted)?;
    let x: Vec<f64> = eig
        .values
        .iter()
        .map(|&d| {
            let a = b * d;
            let root = (a * a + 4.0 * b).sqrt();
            // the two forms are equal; pick the one without cancellation
            if a >= 0.0 {
                0.5 * (a + root)
            } else {
                2.0 * b / (root - a)
            }
        })
        .collect();
    let log_det = x.iter().map(|x| x.ln()).sum();
    Ok(LossProx { theta: SymMatrix::from_eigen(&eig.q, &x), log_det })
}

/// `prox_{ωr}(V)` for the local regularizer.
pub fn prox_local(v: &SymMatrix, reg: &LocalRegularizer, omega: f64) -> SymMatrix {
    match *reg {
        LocalRegularizer::None => v.clone(),
        LocalRegularizer::Trace { gamma } => v.shift_diag(-omega * gamma),
        LocalRegularizer::Frobenius { gamma } => v.scaled(1.0 / (1.0 + omega * gamma)),
        LocalRegularizer::L1 { gamma } => {
            let t = omega * gamma;
            v.map_entries(|_, _, x| soft_threshold(x, t))
        }
        LocalRegularizer::TracePlusOffDiagL1 { gamma_tr, gamma_od } => {
            let t = omega * gamma_od;
            let shift = omega * gamma_tr;
            v.map_entries(|i, j, x| if i == j { x - shift } else { soft_threshold(x, t) })
        }
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    (x - t).max(0.0) - (-x - t).max(0.0)
}
