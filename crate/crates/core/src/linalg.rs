//! Small dense real matrices, symmetric eigen-analysis and the continuous
//! Lyapunov-equation solver.
//!
//! Dimensions are runtime values. Everything here is sized for the handful of
//! states a state-affine plant carries, so the algorithms favour accuracy over
//! asymptotic speed: cyclic Jacobi for symmetric spectra, one-sided Jacobi for
//! singular values, and a dense solve over the `n(n+1)/2` free entries of a
//! symmetric unknown for the Lyapunov equation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Sub};

/// Relative singular-value threshold used by [`observability_rank`].
pub const RANK_TOL: f64 = 1e-10;

/// Linear algebra failures.
#[derive(Clone, Debug, PartialEq)]
pub enum LinalgError {
    /// A NaN or infinite entry was found.
    NonFinite,
    /// The linear operator of a matrix equation is singular.
    NoUniqueSolution,
    /// A factorization that needs a positive definite matrix failed.
    NotPositiveDefinite,
    /// Operand shapes do not agree.
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFinite => write!(f, "non-finite matrix"),
            Self::NoUniqueSolution => write!(f, "no unique solution"),
            Self::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
            Self::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
        }
    }
}

impl core::error::Error for LinalgError {}

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting bad lengths and
    /// non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    expected: (rows.len(), cols),
                    found: (rows.len(), r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Column vector `n x 1`.
    pub fn column(entries: &[f64]) -> Self {
        Self {
            rows: entries.len(),
            cols: 1,
            data: entries.to_vec(),
        }
    }

    /// Row vector `1 x n`.
    pub fn row(entries: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: entries.len(),
            data: entries.to_vec(),
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// `self + k * Id`. Panics if not square.
    pub fn shifted(&self, k: f64) -> Self {
        assert!(self.is_square(), "shift of a non-square matrix");
        let mut m = self.clone();
        for i in 0..self.rows {
            m.data[i * self.cols + i] += k;
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// Matrix-vector product. Panics on a length mismatch.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Singular values in descending order (one-sided Jacobi).
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(self)
    }

    /// Spectral norm `‖M‖₂`.
    pub fn operator_norm(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum dimension mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "matrix difference dimension mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

/// Real symmetric matrix, stored in full and kept exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            inner: Matrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Matrix::identity(n),
        }
    }

    /// Symmetrizes `(M + M')/2`. Panics if `m` is not square.
    pub fn from_matrix(m: &Matrix) -> Self {
        assert!(m.is_square(), "symmetric matrix must be square");
        let n = m.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out.set(i, i, m.get(i, i));
            for j in (i + 1)..n {
                let v = 0.5 * (m.get(i, j) + m.get(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        Self { inner: out }
    }

    /// Symmetric `n x n` matrix from row-major entries.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        Ok(Self::from_matrix(&Matrix::from_row_major(n, n, data)?))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let m = Matrix::from_rows(rows)?;
        if !m.is_square() {
            return Err(LinalgError::DimensionMismatch {
                expected: (m.rows(), m.rows()),
                found: m.shape(),
            });
        }
        Ok(Self::from_matrix(&m))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        Self { inner: m }
    }

    /// `C'C` for any `p x n` matrix `C`.
    pub fn gram_of(c: &Matrix) -> Self {
        Self::from_matrix(&(&c.transpose() * c))
    }

    /// `M' S M` (congruence).
    pub fn congruence(&self, m: &Matrix) -> Self {
        Self::from_matrix(&(&(&m.transpose() * &self.inner) * m))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    pub fn as_slice(&self) -> &[f64] {
        self.inner.as_slice()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            inner: self.inner.scale(k),
        }
    }

    /// Quadratic form `v' S v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.inner.mul_vec(v))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, LinalgError> {
        symmetric_eigenvalues(self)
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Componentwise `a - b`.
pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Closed form for `n <= 2`, cyclic Jacobi rotations otherwise.
pub fn symmetric_eigenvalues(s: &SymMatrix) -> Result<Vec<f64>, LinalgError> {
    if !s.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = s.dim();
    match n {
        0 => Ok(Vec::new()),
        1 => Ok(vec![s.get(0, 0)]),
        2 => {
            let (lo, hi) = eig2(s.get(0, 0), s.get(0, 1), s.get(1, 1));
            Ok(vec![lo, hi])
        }
        _ => Ok(jacobi_eigenvalues(s.as_matrix())),
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(s: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(symmetric_eigenvalues(s)?.first().copied().unwrap_or(0.0))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn largest_eigenvalue(s: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(symmetric_eigenvalues(s)?.last().copied().unwrap_or(0.0))
}

/// True iff the smallest eigenvalue exceeds `tol`. Non-finite input is not
/// positive definite.
pub fn is_positive_definite(s: &SymMatrix, tol: f64) -> bool {
    smallest_eigenvalue(s).is_ok_and(|l| l > tol)
}

// Eigenvalues of [[a, b], [b, c]]. The small-magnitude root is recovered from
// the determinant to avoid cancellation.
fn eig2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let r = libm::hypot(0.5 * (a - c), b);
    let det = a * c - b * b;
    if mean >= 0.0 {
        let hi = mean + r;
        let lo = if hi > 0.0 { det / hi } else { 0.0 };
        (lo, hi)
    } else {
        let lo = mean - r;
        (lo, det / lo)
    }
}

fn jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        if libm::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + libm::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + libm::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

fn singular_values(m: &Matrix) -> Vec<f64> {
    // One-sided Jacobi on the columns of M (or M' when wide).
    let work = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, cols) = work.shape();
    let mut u = work;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..rows {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..cols)
        .map(|j| libm::sqrt((0..rows).map(|i| u.get(i, j) * u.get(i, j)).sum()))
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Rank of the Kalman observability matrix `[C; CA; …; CA^{n-1}]`, counting
/// singular values above `RANK_TOL` times the largest one.
pub fn observability_rank(c: &Matrix, a: &Matrix) -> Result<usize, LinalgError> {
    let n = a.rows();
    if !a.is_square() || c.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: (c.rows(), n),
            found: c.shape(),
        });
    }
    if !a.is_finite() || !c.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let p = c.rows();
    let mut stacked = Matrix::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        for i in 0..p {
            for j in 0..n {
                stacked.set(k * p + i, j, block.get(i, j));
            }
        }
        block = &block * a;
    }
    let sv = stacked.singular_values();
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > RANK_TOL * top).count())
}

/// Dense Gaussian elimination with partial pivoting. `a` is `m x m`
/// row-major.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Result<Vec<f64>, LinalgError> {
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(LinalgError::NoUniqueSolution);
    }
    for col in 0..m {
        let (piv, pval) =
            (col..m)
                .map(|r| (r, a[r * m + col].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pval <= 1e-13 * scale {
            return Err(LinalgError::NoUniqueSolution);
        }
        if piv != col {
            for k in 0..m {
                a.swap(col * m + k, piv * m + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * m + col];
        for r in (col + 1)..m {
            let f = a[r * m + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..m {
                a[r * m + k] -= f * a[col * m + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = ((r + 1)..m).map(|k| a[r * m + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * m + r];
    }
    Ok(x)
}

/// Residual `A'S + SA + βS − C'C`.
pub fn lyapunov_residual(a: &Matrix, c: &Matrix, beta: f64, s: &SymMatrix) -> Matrix {
    let sa = s.as_matrix() * a;
    let lhs = &(&sa.transpose() + &sa) + &s.as_matrix().scale(beta);
    &lhs - SymMatrix::gram_of(c).as_matrix()
}

/// Unique symmetric solution of `A'S + SA + βS = C'C`.
///
/// Solves for the `n(n+1)/2` free entries directly and verifies the residual
/// Frobenius norm against `1e-10 (1 + ‖C'C‖)`.
pub fn solve_lyapunov(a: &Matrix, c: &Matrix, beta: f64) -> Result<SymMatrix, LinalgError> {
    let n = a.rows();
    if !a.is_square() || c.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: (n, n),
            found: a.shape(),
        });
    }
    if !a.is_finite() || !c.is_finite() || !beta.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let q = SymMatrix::gram_of(c);
    // packed upper-triangle index
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * i.saturating_sub(1) / 2 + (j - i)
    };
    let m = n * (n + 1) / 2;
    let mut op = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            rhs[row] = q.get(i, j);
            // (A'S)_ij = sum_k A_ki S_kj ; (SA)_ij = sum_k S_ik A_kj
            for k in 0..n {
                op[row * m + idx(k, j)] += a.get(k, i);
                op[row * m + idx(i, k)] += a.get(k, j);
            }
            op[row * m + row] += beta;
        }
    }
    let sol = solve_dense(op, rhs, m)?;
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            s.set(i, j, sol[idx(i, j)]);
            s.set(j, i, sol[idx(i, j)]);
        }
    }
    let s = SymMatrix::from_matrix(&s);
    let res = lyapunov_residual(a, c, beta, &s).frobenius_norm();
    if !res.is_finite() || res > 1e-10 * (1.0 + q.frobenius_norm()) {
        return Err(LinalgError::NoUniqueSolution);
    }
    Ok(s)
}

/// Cholesky factor `L` with `S = L L'`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(s: &SymMatrix) -> Result<Self, LinalgError> {
        if !s.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let n = s.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = s.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite);
            }
            let d = libm::sqrt(d);
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut v = s.get(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / d;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `S z = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}
