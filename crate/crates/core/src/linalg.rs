//! Dense symmetric linear algebra.
//!
//! Every precision matrix, empirical covariance and prox argument in the crate
//! is a [`SymMatrix`]. The eigendecomposition is cyclic Jacobi: it is slower
//! than tridiagonal QR for large `n`, but the matrices here are small (tens of
//! rows) and Jacobi is accurate and unconditionally convergent.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Sweep cap for the Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius threshold, relative to `‖A‖_F`.
pub const JACOBI_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps (non-finite input?)")]
    NoConvergence { sweeps: usize },
}

/// General dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Single-column matrix.
    pub fn column_vector(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::DimensionMismatch { expected: c, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F`; panics on shape mismatch.
    pub fn frobenius_distance(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// Dense symmetric `n × n` matrix.
///
/// Constructors store `(M + Mᵀ)/2`, so `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries, symmetrizing.
    pub fn new(n: usize, mut data: Vec<f64>) -> Result<Self, LinalgError> {
        if n == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if data.len() != n * n {
            return Err(LinalgError::DimensionMismatch { expected: n * n, got: data.len() });
        }
        symmetrize_in_place(n, &mut data);
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let m = Matrix::from_rows(rows)?;
        Self::from_matrix(&m)
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self, LinalgError> {
        if m.rows != m.cols {
            return Err(LinalgError::DimensionMismatch { expected: m.rows, got: m.cols });
        }
        Self::new(m.rows, m.data.clone())
    }

    /// Builds from a function of `(i, j)` evaluated on the lower triangle and mirrored.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 1, "SymMatrix dimension must be at least 1");
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_lower_fn(n, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self::from_lower_fn(d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    /// `Q · diag(values) · Qᵀ`.
    pub fn from_eigen(q: &Matrix, values: &[f64]) -> Self {
        let n = values.len();
        assert_eq!((q.rows, q.cols), (n, n));
        Self::from_lower_fn(n, |i, j| {
            let qi = &q.data[i * n..(i + 1) * n];
            let qj = &q.data[j * n..(j + 1) * n];
            qi.iter().zip(qj).zip(values).map(|((a, b), d)| a * d * b).sum()
        })
    }

    /// Wraps entries that are already exactly symmetric.
    pub(crate) fn from_symmetric_unchecked(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.n, cols: self.n, data: self.data.clone() }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius_distance(&self, other: &SymMatrix) -> f64 {
        self.frobenius_distance_sq(other).sqrt()
    }

    pub fn frobenius_distance_sq(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `Tr(A B)` for symmetric `A`, `B`, i.e. the entrywise inner product.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        Self { n: self.n, data: self.data.iter().map(|x| c * x).collect() }
    }

    /// `A + cI`.
    pub fn shift_diag(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            out.data[i * self.n + i] += c;
        }
        out
    }

    /// Applies `f` to every entry; `f` receives `(i, j, value)` and must be symmetric in `(i, j)`.
    pub fn map_entries(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SymMatrix {
        let n = self.n;
        Self::from_lower_fn(n, |i, j| f(i, j, self.get(i, j)))
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mat_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn mul_matrix(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        self.to_matrix().matmul(b)
    }

    /// Principal submatrix on the given index set.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        Self::from_lower_fn(idx.len(), |i, j| self.get(idx[i], idx[j]))
    }

    /// Rectangular block with rows `rows` and columns `cols`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                m.set(a, b, self.get(i, j));
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SymMatrix {}x{} [", self.n, self.n)?;
        for row in self.data.chunks(self.n) {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, rhs.n);
        SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, rhs.n);
        SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        if rows.len() != rows.first().map_or(0, Vec::len) {
            return Err(serde::de::Error::custom("symmetric matrix must be square"));
        }
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

fn symmetrize_in_place(n: usize, data: &mut [f64]) {
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (data[i * n + j] + data[j * n + i]);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
}

/// Orthogonal eigendecomposition `A = Q diag(values) Qᵀ`, values ascending.
#[derive(Debug, Clone)]
pub struct EigenPair {
    /// Eigenvectors as columns.
    pub q: Matrix,
    pub values: Vec<f64>,
}

impl EigenPair {
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_eigen(&self.q, &self.values)
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps over all `(p, q)` pairs until the off-diagonal Frobenius norm drops
/// below `JACOBI_REL_TOL · ‖A‖_F`. Only fails on non-finite input.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenPair, LinalgError> {
    let n = a.n;
    let mut m = a.data.clone();
    // Rows of `vt` are the eigenvectors, so rotations touch contiguous memory.
    let mut vt = Matrix::identity(n);
    let norm = a.frobenius_norm();
    if !norm.is_finite() {
        return Err(LinalgError::NoConvergence { sweeps: 0 });
    }
    let threshold = JACOBI_REL_TOL * norm;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(n, &m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Jᵀ A J touches only rows and columns p, q; update the rows and
                // mirror them into the columns.
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[p * n + k];
                    let akq = m[q * n + k];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    m[p * n + k] = np;
                    m[q * n + k] = nq;
                    m[k * n + p] = np;
                    m[k * n + q] = nq;
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                let (head, tail) = vt.data.split_at_mut(q * n);
                let row_p = &mut head[p * n..(p + 1) * n];
                let row_q = &mut tail[..n];
                for (vp, vq) in row_p.iter_mut().zip(row_q.iter_mut()) {
                    let (a, b) = (*vp, *vq);
                    *vp = c * a - s * b;
                    *vq = s * a + c * b;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(n, &m) > threshold {
        return Err(LinalgError::NoConvergence { sweeps: JACOBI_MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut q = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            q.data[k * n + new] = vt.data[old * n + k];
        }
    }
    Ok(EigenPair { q, values })
}

fn off_diagonal_norm(n: usize, m: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[i * n + j] * m[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Smallest eigenvalue.
pub fn min_eig(a: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(sym_eig(a)?.values[0])
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &SymMatrix) -> Result<Self, LinalgError> {
        let n = a.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn factor_entry(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// `L x` (used to colour white noise).
    pub fn lower_mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|i| (0..=i).map(|k| self.l[i * n + k] * x[k]).sum()).collect()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        if b.rows != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, got: b.rows });
        }
        let mut x = Matrix::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let col = self.solve_vec(&b.column(j));
            for (i, v) in col.into_iter().enumerate() {
                x.set(i, j, v);
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> SymMatrix {
        let inv = self.solve(&Matrix::identity(self.n)).expect("square identity");
        SymMatrix::from_matrix(&inv).expect("square")
    }
}

/// Solves `A X = B` for positive definite `A`.
pub fn spd_solve(a: &SymMatrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    Cholesky::new(a)?.solve(b)
}

/// `log det A` for positive definite `A`.
pub fn log_det(a: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(Cholesky::new(a)?.log_det())
}

pub fn spd_inverse(a: &SymMatrix) -> Result<SymMatrix, LinalgError> {
    Ok(Cholesky::new(a)?.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        SymMatrix::from_lower_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check_eig(a: &SymMatrix) {
        let n = a.dim();
        let e = sym_eig(a).unwrap();
        let qtq = e.q.transpose().matmul(&e.q).unwrap();
        assert!(qtq.frobenius_distance(&Matrix::identity(n)) <= 1e-10 * n as f64);
        let rec = e.reconstruct();
        assert!(rec.frobenius_distance(a) <= 1e-8 * (1.0 + a.frobenius_norm()));
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&SymMatrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        check_eig(&SymMatrix::identity(2));
    }

    #[test]
    fn diagonal_eigenvalues_sorted() {
        let e = sym_eig(&SymMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 3.0]);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=20 {
            for _ in 0..5 {
                check_eig(&random_sym(&mut rng, n));
            }
        }
    }

    #[test]
    fn shift_moves_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let a = random_sym(&mut rng, n);
            let c: f64 = rng.random_range(-5.0..5.0);
            let e0 = sym_eig(&a).unwrap().values;
            let e1 = sym_eig(&a.shift_diag(c)).unwrap().values;
            for (x, y) in e0.iter().zip(&e1) {
                assert!((x + c - y).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sym(&mut rng, 7);
        let e1 = sym_eig(&a).unwrap();
        let e2 = sym_eig(&a).unwrap();
        assert_eq!(e1.values, e2.values);
        assert_eq!(e1.q, e2.q);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let a = SymMatrix::from_diag(&[1.0, f64::NAN]);
        assert!(matches!(sym_eig(&a), Err(LinalgError::NoConvergence { .. })));
    }

    #[test]
    fn min_eig_cases() {
        assert_eq!(min_eig(&SymMatrix::identity(3)).unwrap(), 1.0);
        assert_eq!(min_eig(&SymMatrix::from_diag(&[-1.0, 5.0])).unwrap(), -1.0);
    }

    #[test]
    fn spd_solve_small_cases() {
        let x = spd_solve(&SymMatrix::identity(2), &Matrix::column_vector(&[3.0, -2.0])).unwrap();
        assert_eq!(x.as_slice(), &[3.0, -2.0]);
        let x = spd_solve(&SymMatrix::from_diag(&[2.0, 4.0]), &Matrix::column_vector(&[2.0, 4.0]))
            .unwrap();
        assert!(x.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = SymMatrix::from_diag(&[1.0, -1.0]);
        let err = spd_solve(&a, &Matrix::column_vector(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, LinalgError::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn spd_solve_recovers_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..10 {
            let m = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let mmt = m.matmul(&m.transpose()).unwrap();
            let a = SymMatrix::from_matrix(&mmt).unwrap().shift_diag(1.0);
            let x0 = Matrix::from_vec(n, 3, (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap();
            let b = a.mul_matrix(&x0).unwrap();
            let x = spd_solve(&a, &b).unwrap();
            assert!(x.frobenius_distance(&x0) <= 1e-8 * x0.frobenius_norm());
            let resid = a.mul_matrix(&x).unwrap().frobenius_distance(&b);
            assert!(resid <= 1e-10 * (1.0 + b.frobenius_norm()));
        }
    }

    #[test]
    fn construction_symmetrizes() {
        let a = SymMatrix::new(2, vec![1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), 3.0);
        assert!(SymMatrix::new(0, vec![]).is_err());
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_sym(&mut rng, 4);
        let s = serde_json::to_string(&a).unwrap();
        let b: SymMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
