//! Slow, dependency-free reference implementations used as ground truth in
//! tests. Matrices are dense row-major `Vec<f64>`.

use std::fmt;

/// Smooth local regularizers supported by [`reference_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothReg {
    /// `γ·Tr θ`
    Trace(f64),
    /// `(γ/2)·‖θ‖²_F`
    Frobenius(f64),
}

/// A tiny stratified problem.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub k: usize,
    pub n: usize,
    pub counts: Vec<usize>,
    /// Empirical covariances, one `n×n` row-major block per stratum.
    pub covs: Vec<Vec<f64>>,
    /// Undirected edges `(i, j, w)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub reg: SmoothReg,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    LineSearchFailure { iter: usize, grad_norm: f64 },
    NotPositiveDefinite,
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::LineSearchFailure { iter, grad_norm } => {
                write!(f, "line search failed at iteration {iter} (gradient norm {grad_norm:e})")
            }
            OracleError::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Lower Cholesky factor, or `None` if `a` is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = v / d;
        }
    }
    Some(l)
}

pub fn log_det(a: &[f64], n: usize) -> Option<f64> {
    cholesky(a, n).map(|l| (0..n).map(|i| 2.0 * l[i * n + i].ln()).sum())
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x * n + c].abs().total_cmp(&m[y * n + c].abs()))?;
        if m[p * n + c] == 0.0 {
            return None;
        }
        for j in 0..n {
            m.swap(c * n + j, p * n + j);
            inv.swap(c * n + j, p * n + j);
        }
        let d = m[c * n + c];
        for j in 0..n {
            m[c * n + j] /= d;
            inv[c * n + j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r * n + c];
                if f != 0.0 {
                    for j in 0..n {
                        m[r * n + j] -= f * m[c * n + j];
                        inv[r * n + j] -= f * inv[c * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Solves `A x = b` densely (Gaussian elimination via the inverse).
pub fn dense_solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let inv = inverse(a, n)?;
    Some((0..n).map(|i| (0..n).map(|j| inv[i * n + j] * b[j]).sum()).collect())
}

/// Dense weighted Laplacian.
pub fn dense_laplacian(k: usize, edges: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut l = vec![0.0; k * k];
    for &(i, j, w) in edges {
        l[i * k + j] -= w;
        l[j * k + i] -= w;
        l[i * k + i] += w;
        l[j * k + j] += w;
    }
    l
}

impl OracleInstance {
    /// Full objective; `None` outside the positive definite cone.
    pub fn objective(&self, theta: &[Vec<f64>]) -> Option<f64> {
        let n = self.n;
        let mut f = 0.0;
        for k in 0..self.k {
            let t = &theta[k];
            let ld = log_det(t, n)?;
            let c = self.counts[k] as f64;
            if c > 0.0 {
                let tr: f64 = (0..n * n).map(|p| self.covs[k][p] * t[p]).sum();
                f += c * (tr - ld);
            }
            f += match self.reg {
                SmoothReg::Trace(g) => g * (0..n).map(|i| t[i * n + i]).sum::<f64>(),
                SmoothReg::Frobenius(g) => 0.5 * g * t.iter().map(|v| v * v).sum::<f64>(),
            };
        }
        for &(i, j, w) in &self.edges {
            let d: f64 = theta[i].iter().zip(&theta[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            f += 0.5 * w * d;
        }
        Some(f)
    }

    /// Gradient `n_k(S_k − θ_k⁻¹) + ∇r(θ_k) + ((L ⊗ I)θ)_k`.
    pub fn gradient(&self, theta: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
        let n = self.n;
        let lap = dense_laplacian(self.k, &self.edges);
        let mut grad = Vec::with_capacity(self.k);
        for k in 0..self.k {
            let t = &theta[k];
            let c = self.counts[k] as f64;
            let inv = inverse(t, n)?;
            let mut g = vec![0.0; n * n];
            for p in 0..n * n {
                g[p] = c * (self.covs[k][p] - inv[p]);
                g[p] += match self.reg {
                    SmoothReg::Trace(gm) => {
                        if p / n == p % n {
                            gm
                        } else {
                            0.0
                        }
                    }
                    SmoothReg::Frobenius(gm) => gm * t[p],
                };
                for (j, th) in theta.iter().enumerate() {
                    g[p] += lap[k * self.k + j] * th[p];
                }
            }
            grad.push(g);
        }
        Some(grad)
    }
}

fn norm(v: &[Vec<f64>]) -> f64 {
    v.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent with Armijo backtracking from `θ_k = I` until the
/// gradient Frobenius norm is at most `tol`.
pub fn reference_solve(inst: &OracleInstance, tol: f64) -> Result<Vec<Vec<f64>>, OracleError> {
    let n = inst.n;
    let mut theta: Vec<Vec<f64>> = (0..inst.k)
        .map(|_| {
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                t[i * n + i] = 1.0;
            }
            t
        })
        .collect();
    let mut f = inst.objective(&theta).ok_or(OracleError::NotPositiveDefinite)?;
    let mut step = 1.0;
    for iter in 0..2_000_000 {
        let g = inst.gradient(&theta).ok_or(OracleError::NotPositiveDefinite)?;
        let gn = norm(&g);
        if gn <= tol {
            return Ok(theta);
        }
        let mut accepted = false;
        step *= 2.0;
        for _ in 0..200 {
            let cand: Vec<Vec<f64>> =
                theta.iter().zip(&g).map(|(t, gk)| t.iter().zip(gk).map(|(a, b)| a - step * b).collect()).collect();
            if let Some(fc) = inst.objective(&cand) {
                // Below roundoff the objective cannot rank steps, so a smaller
                // gradient is required instead.
                let noise = 1e-12 * f.abs().max(1.0);
                let ok = if (fc - f).abs() <= noise {
                    inst.gradient(&cand).is_some_and(|gc| norm(&gc) < gn)
                } else {
                    fc <= f - 1e-4 * step * gn * gn
                };
                if ok {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(OracleError::LineSearchFailure { iter, grad_norm: gn });
        }
    }
    Err(OracleError::LineSearchFailure { iter: 2_000_000, grad_norm: norm(&inst.gradient(&theta).unwrap_or_default()) })
}

/// Scalar loss prox: the positive root of `ω·n_k·(s − 1/x) + x − v = 0`, by
/// bisection.
pub fn prox_oracle_1d(v: f64, s: f64, n_k: f64, omega: f64) -> f64 {
    let c = omega * n_k;
    let g = |x: f64| x - v + c * s - c / x;
    let mut hi = 1.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    while g(lo) > 0.0 {
        lo *= 0.5;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting ½.
pub fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_ratio() {
        let x = prox_oracle_1d(1.0, 0.0, 1.0, 1.0);
        assert!((x - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!(prox_oracle_1d(0.0, 1e6, 1.0, 1.0) > 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_bruteforce(&[0.9, 0.8, 0.3], &[true, false, true]), 0.5);
        assert_eq!(auc_bruteforce(&[2.0, 2.0], &[true, false]), 0.5);
        assert_eq!(auc_bruteforce(&[3.0, 1.0], &[true, false]), 1.0);
    }

    #[test]
    fn scalar_trace_closed_form() {
        let inst = OracleInstance {
            k: 1,
            n: 1,
            counts: vec![1],
            covs: vec![vec![4.0]],
            edges: vec![],
            reg: SmoothReg::Trace(1.0),
        };
        let t = reference_solve(&inst, 1e-12).unwrap();
        assert!((t[0][0] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn inverse_and_solve() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let inv = inverse(&a, 2).unwrap();
        assert!((inv[0] - 3.0 / 11.0).abs() < 1e-15);
        let x = dense_solve(&[2.0, -1.0, -1.0, 2.0], 2, &[1.0, 0.0]).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(cholesky(&[1.0, 0.0, 0.0, -1.0], 2).is_none());
    }
}
