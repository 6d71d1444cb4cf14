//! Dense linear-algebra kernel.
//!
//! Matrices are stored row-major in a flat `Vec`. Eigendecompositions and
//! singular value decompositions are delegated to `faer` running
//! sequentially, so results are bit-reproducible on one platform.
//!
//! Tolerance contracts used throughout the crate:
//! - `nullspace` with [`Tolerance::Auto`] uses `eps * max(rows, cols) * sigma_max`.
//! - `solve` rejects systems whose 2-norm condition number exceeds
//!   [`DEFAULT_COND_LIMIT`] unless a different limit is passed.

use std::fmt;
use std::ops::{Index, IndexMut};

use faer::linalg::solvers::Solve;
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Condition-number limit above which a linear solve is treated as singular.
pub const DEFAULT_COND_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix contains non-finite entries (fingerprint {fingerprint:016x})")]
    NonFinite { fingerprint: u64 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error(
        "eigensolver failed to converge on {rows}x{rows} matrix (fingerprint {fingerprint:016x})"
    )]
    EigenNoConvergence { rows: usize, fingerprint: u64 },
    #[error("singular value decomposition failed to converge on {rows}x{cols} matrix (fingerprint {fingerprint:016x})")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        fingerprint: u64,
    },
    #[error(
        "matrix is numerically singular: condition number {cond:e} exceeds threshold {limit:e}"
    )]
    Singular { cond: f64, limit: f64 },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<Complex64>;

impl<T: Copy + num_traits::Num> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major flat storage.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Shape {
                op: "from_row_major",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(NumericsError::Shape {
                    op: "from_rows",
                    left: (i, cols),
                    right: (i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vector (n x 1) from a slice.
    pub fn column_vector(v: &[T]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data
            .chunks(self.cols.max(1))
            .take(self.rows)
            .map(<[T]>::to_vec)
            .collect()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[T]) {
        assert_eq!(v.len(), self.rows, "column length mismatch");
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map<U: Copy + num_traits::Num>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Rows `k` for each `k` in `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self::from_fn(indices.len(), self.cols, |i, j| self[(indices[i], j)])
    }

    /// Contiguous block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Self) {
        assert!(r0 + src.rows <= self.rows && c0 + src.cols <= self.cols);
        for i in 0..src.rows {
            for j in 0..src.cols {
                self[(r0 + i, c0 + j)] = src[(i, j)];
            }
        }
    }

    /// `[self other]`
    pub fn hstack(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.rows != other.rows {
            return Err(NumericsError::Shape {
                op: "hstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, self.cols + other.cols);
        out.set_block(0, 0, self);
        out.set_block(0, self.cols, other);
        Ok(out)
    }

    /// `[self; other]`
    pub fn vstack(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.cols != other.cols {
            return Err(NumericsError::Shape {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::Shape {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>, NumericsError> {
        if self.cols != v.len() {
            return Err(NumericsError::Shape {
                op: "matvec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &x)| acc + a * x)
            })
            .collect())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    fn zip_with(
        &self,
        rhs: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, NumericsError> {
        if self.shape() != rhs.shape() {
            return Err(NumericsError::Shape {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

impl RealMatrix {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        self.map(|x| Complex64::new(x, 0.0))
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Spectral norm (largest singular value).
    pub fn norm_2(&self) -> Result<f64, NumericsError> {
        self.to_complex().norm_2()
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.data.iter().map(|x| x.to_bits()))
    }
}

impl ComplexMatrix {
    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn re(&self) -> RealMatrix {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> RealMatrix {
        self.map(|z| z.im)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data
            .iter()
            .map(Complex64::norm_sqr)
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn norm_2(&self) -> Result<f64, NumericsError> {
        Ok(singular_values(self)?.first().copied().unwrap_or(0.0))
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(
            self.data
                .iter()
                .flat_map(|z| [z.re.to_bits(), z.im.to_bits()]),
        )
    }
}

fn fnv1a(words: impl Iterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

// JSON form of a real matrix: row-major nested arrays.
impl Serialize for RealMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RealMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::from_rows(&rows).map_err(|_| D::Error::custom("ragged matrix rows"))
    }
}

pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
}

pub fn normalize(v: &[Complex64]) -> Vec<Complex64> {
    let n = vec_norm(v);
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|z| z / n).collect()
}

pub fn conj_vec(v: &[Complex64]) -> Vec<Complex64> {
    v.iter().map(Complex64::conj).collect()
}

fn to_faer(m: &ComplexMatrix) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(m.rows, m.cols, |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, Complex64>) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigenvalues with unit-norm right eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    pub vectors: ComplexMatrix,
}

fn finish_eigen(s: faer::diag::DiagRef<'_, Complex64>, u: faer::MatRef<'_, Complex64>) -> Eigen {
    let values: Vec<Complex64> = s.column_vector().iter().copied().collect();
    let mut vectors = from_faer(u);
    for j in 0..vectors.cols() {
        let col = normalize(&vectors.column(j));
        vectors.set_column(j, &col);
    }
    Eigen { values, vectors }
}

/// Eigendecomposition of a general complex square matrix.
pub fn eig(a: &ComplexMatrix) -> Result<Eigen, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(NumericsError::NonFinite {
            fingerprint: a.fingerprint(),
        });
    }
    if a.rows == 0 {
        return Ok(Eigen {
            values: Vec::new(),
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let e = to_faer(a)
        .eigen()
        .map_err(|_| NumericsError::EigenNoConvergence {
            rows: a.rows,
            fingerprint: a.fingerprint(),
        })?;
    Ok(finish_eigen(e.S(), e.U()))
}

/// Eigendecomposition of a real square matrix through the real Schur form.
///
/// Complex eigenvalues of a real matrix come back in exactly conjugate pairs.
pub fn eig_real(a: &RealMatrix) -> Result<Eigen, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(NumericsError::NonFinite {
            fingerprint: a.fingerprint(),
        });
    }
    if a.rows == 0 {
        return Ok(Eigen {
            values: Vec::new(),
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let fa = faer::Mat::<f64>::from_fn(a.rows, a.cols, |i, j| a[(i, j)]);
    let e = fa.eigen().map_err(|_| NumericsError::EigenNoConvergence {
        rows: a.rows,
        fingerprint: a.fingerprint(),
    })?;
    Ok(finish_eigen(e.S(), e.U()))
}

/// Full SVD `M = U diag(s) V^H` with `s` in non-increasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub s: Vec<f64>,
    pub v: ComplexMatrix,
}

pub fn svd(m: &ComplexMatrix) -> Result<Svd, NumericsError> {
    check_finite(m)?;
    if m.rows == 0 || m.cols == 0 {
        return Ok(Svd {
            u: ComplexMatrix::identity(m.rows),
            s: Vec::new(),
            v: ComplexMatrix::identity(m.cols),
        });
    }
    let d = to_faer(m)
        .svd()
        .map_err(|_| NumericsError::SvdNoConvergence {
            rows: m.rows,
            cols: m.cols,
            fingerprint: m.fingerprint(),
        })?;
    Ok(Svd {
        u: from_faer(d.U()),
        s: d.S().column_vector().iter().map(|z| z.re).collect(),
        v: from_faer(d.V()),
    })
}

pub fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>, NumericsError> {
    check_finite(m)?;
    if m.rows == 0 || m.cols == 0 {
        return Ok(Vec::new());
    }
    let s = to_faer(m)
        .singular_values()
        .map_err(|_| NumericsError::SvdNoConvergence {
            rows: m.rows,
            cols: m.cols,
            fingerprint: m.fingerprint(),
        })?;
    Ok(s)
}

fn check_finite(m: &ComplexMatrix) -> Result<(), NumericsError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite {
            fingerprint: m.fingerprint(),
        })
    }
}

/// Rank-decision threshold for singular values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `eps * max(rows, cols) * sigma_max`
    Auto,
    Absolute(f64),
}

impl Tolerance {
    fn resolve(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self {
            Tolerance::Auto => f64::EPSILON * rows.max(cols) as f64 * sigma_max,
            Tolerance::Absolute(t) => t,
        }
    }
}

/// Orthonormal basis of a numerical null space.
#[derive(Debug, Clone)]
pub struct NullspaceBasis {
    /// Basis vectors as columns.
    pub basis: ComplexMatrix,
    pub rank_tolerance: f64,
    /// Numerical rank of the source matrix.
    pub rank: usize,
}

impl NullspaceBasis {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }
}

/// Null space from the trailing right singular vectors.
///
/// Column order follows the SVD ordering (descending singular value), so
/// the result is deterministic for fixed input. A matrix with zero rows has
/// the identity as its null-space basis.
pub fn nullspace(m: &ComplexMatrix, tol: Tolerance) -> Result<NullspaceBasis, NumericsError> {
    let d = svd(m)?;
    let sigma_max = d.s.first().copied().unwrap_or(0.0);
    let t = tol.resolve(m.rows, m.cols, sigma_max);
    let rank = d.s.iter().filter(|&&s| s > t).count();
    let basis = d.v.block(0, rank, m.cols, m.cols - rank);
    Ok(NullspaceBasis {
        basis,
        rank_tolerance: t,
        rank,
    })
}

pub fn rank(m: &ComplexMatrix, tol: Tolerance) -> Result<usize, NumericsError> {
    let s = singular_values(m)?;
    let t = tol.resolve(m.rows, m.cols, s.first().copied().unwrap_or(0.0));
    Ok(s.iter().filter(|&&x| x > t).count())
}

/// 2-norm condition number; infinite for singular or empty-rank input.
pub fn condition_number(m: &ComplexMatrix) -> Result<f64, NumericsError> {
    let s = singular_values(m)?;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => Ok(hi / lo),
        (Some(_), Some(_)) => Ok(f64::INFINITY),
        _ => Ok(1.0),
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: ComplexMatrix,
    pub cond: f64,
}

/// Solves `M X = RHS` by LU with partial pivoting, rejecting matrices whose
/// condition number exceeds [`DEFAULT_COND_LIMIT`].
pub fn solve(m: &ComplexMatrix, rhs: &ComplexMatrix) -> Result<Solution, NumericsError> {
    solve_with_limit(m, rhs, DEFAULT_COND_LIMIT)
}

pub fn solve_with_limit(
    m: &ComplexMatrix,
    rhs: &ComplexMatrix,
    cond_limit: f64,
) -> Result<Solution, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if m.rows != rhs.rows {
        return Err(NumericsError::Shape {
            op: "solve",
            left: m.shape(),
            right: rhs.shape(),
        });
    }
    check_finite(rhs)?;
    let cond = condition_number(m)?;
    if !(cond <= cond_limit) {
        return Err(NumericsError::Singular {
            cond,
            limit: cond_limit,
        });
    }
    if m.rows == 0 {
        return Ok(Solution {
            x: rhs.clone(),
            cond,
        });
    }
    let lu = to_faer(m).partial_piv_lu();
    let x = lu.solve(to_faer(rhs));
    Ok(Solution {
        x: from_faer(x.as_ref()),
        cond,
    })
}
