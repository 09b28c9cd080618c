//! Dense complex linear algebra: a row-major matrix type, a cyclic Jacobi
//! Hermitian eigensolver, LU solves, unitary propagators, norms and spectral
//! projections.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Relative tolerance for eigen-residuals and orthonormality.
pub const TOL_EIG: f64 = 1e-12;
/// Relative Hermiticity defect accepted by `herm_eig`.
pub const TOL_HERM: f64 = 1e-10;
/// Pivots below `PIVOT_FLOOR * max|a_ij|` are declared singular.
pub const PIVOT_FLOOR: f64 = 1e-14;
/// Relative distance an eigenvalue must keep from the ends of an interval.
pub const GAP_TOL: f64 = 1e-9;
/// Maximal number of Jacobi sweeps.
pub const SWEEP_CAP: usize = 60;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Below this many output entries a product is computed on one thread.
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (relative defect {defect:.3e})")]
    NonHermitian { defect: f64 },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps (off-norm {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("matrix is singular: pivot {pivot:.3e} below floor {floor:.3e} at column {column}")]
    Singular { pivot: f64, floor: f64, column: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigenvalue {eigenvalue} lies within {gap:.3e} of interval endpoint {endpoint}")]
    BoundaryEigenvalue { eigenvalue: f64, endpoint: f64, gap: f64 },
    #[error("invalid interval ({lo}, {hi})")]
    BadInterval { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Open real interval (lo, hi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(LinalgError::BadInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// True if `x` lies in the closed interval.
    pub fn closure_contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                let z = self[(i, j)];
                write!(f, "{:+.4e}{:+.4e}i ", z.re, z.im)?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Square matrix with the given real diagonal.
    pub fn from_real_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = Complex64::new(x, 0.0);
        }
        m
    }

    pub fn from_diag(d: &[Complex64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[Complex64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
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

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[Complex64]) {
        assert_eq!(v.len(), self.rows, "column length");
        for (i, &x) in v.iter().enumerate() {
            self.data[i * self.cols + j] = x;
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    /// self + s * other, in place.
    pub fn axpy(&mut self, s: Complex64, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diag(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out.data[i * self.cols + i] += s;
        }
        out
    }

    pub fn diag(&self) -> Vec<Complex64> {
        (0..self.rows.min(self.cols)).map(|i| self.data[i * self.cols + i]).collect()
    }

    pub fn trace(&self) -> Complex64 {
        self.diag().into_iter().sum()
    }

    /// Matrix product; rows of the result are computed in parallel for
    /// large outputs. Each entry is summed in a fixed order, so the result
    /// does not depend on the thread count.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        if n == 0 || m == 0 {
            return out;
        }
        let kernel = |(i, row): (usize, &mut [Complex64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if m * n >= PAR_THRESHOLD && k > 8 {
            out.data.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        out
    }

    /// self* · other without forming the adjoint explicitly.
    pub fn adjoint_mul(&self, other: &Self) -> Self {
        self.adjoint().matmul(other)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "mul_vec length");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Copy of the block starting at (r0, c0) with the given shape.
    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "submatrix out of range");
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            let src = &self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + cols];
            out.data[i * cols..(i + 1) * cols].copy_from_slice(src);
        }
        out
    }

    /// Overwrites the block starting at (r0, c0).
    pub fn set_submatrix(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "set_submatrix out of range"
        );
        for i in 0..block.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(i));
        }
    }

    /// Columns `c0..c0+cols`.
    pub fn columns(&self, c0: usize, cols: usize) -> Self {
        self.submatrix(0, c0, self.rows, cols)
    }

    /// Selected columns in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self.data[i * self.cols + idx[j]])
    }

    pub fn hstack(blocks: &[&Self]) -> Self {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut c0 = 0;
        for b in blocks {
            assert_eq!(b.rows, rows, "hstack rows");
            out.set_submatrix(0, c0, b);
            c0 += b.cols;
        }
        out
    }

    pub fn vstack(blocks: &[&Self]) -> Self {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for b in blocks {
            assert_eq!(b.cols, cols, "vstack cols");
            out.set_submatrix(r0, 0, b);
            r0 += b.rows;
        }
        out
    }

    /// Block diagonal matrix.
    pub fn block_diag(blocks: &[&Self]) -> Self {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            out.set_submatrix(r0, c0, b);
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    /// Largest entry modulus.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real and imaginary parts' Frobenius norms.
    pub fn norm_fro_re_im(&self) -> (f64, f64) {
        let re = self.data.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
        let im = self.data.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
        (re, im)
    }

    /// Hermitian part (A + A*)/2.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square(), "hermitian_part of non-square");
        let n = self.rows;
        Self::from_fn(n, n, |i, j| 0.5 * (self.data[i * n + j] + self.data[j * n + i].conj()))
    }

    /// ‖A − A*‖_F / ‖A‖_F (0 for the zero matrix).
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut d = 0.0;
        for i in 0..n {
            for j in 0..n {
                d += (self.data[i * n + j] - self.data[j * n + i].conj()).norm_sqr();
            }
        }
        let s = self.norm_fro();
        if s == 0.0 {
            0.0
        } else {
            d.sqrt() / s
        }
    }

    /// Commutator self·other − other·self.
    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.shape(), rhs.shape(), "sub shape");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    entries: Vec<[f64; 2]>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            entries: self.data.iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MatrixRepr::deserialize(d)?;
        let data = r.entries.into_iter().map(|[re, im]| Complex64::new(re, im)).collect();
        ComplexMatrix::from_vec(r.rows, r.cols, data).map_err(serde::de::Error::custom)
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending, eigenvectors as
/// orthonormal columns.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    /// V f(Λ) V*.
    pub fn apply_fn(&self, f: impl Fn(f64) -> Complex64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let scaled = scale_columns(v, &self.eigenvalues.iter().map(|&l| f(l)).collect::<Vec<_>>());
        scaled.matmul(&v.adjoint())
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, l| m.max(l.abs()))
    }
}

/// Multiplies column j of `m` by `d[j]`.
pub fn scale_columns(m: &ComplexMatrix, d: &[Complex64]) -> ComplexMatrix {
    assert_eq!(m.cols(), d.len(), "scale_columns length");
    let mut out = m.clone();
    let c = m.cols();
    for row in out.data.chunks_mut(c.max(1)) {
        for (x, &s) in row.iter_mut().zip(d) {
            *x *= s;
        }
    }
    out
}

/// Multiplies row i of `m` by `d[i]`.
pub fn scale_rows(m: &ComplexMatrix, d: &[Complex64]) -> ComplexMatrix {
    assert_eq!(m.rows(), d.len(), "scale_rows length");
    let mut out = m.clone();
    let c = m.cols();
    for (i, row) in out.data.chunks_mut(c.max(1)).enumerate() {
        for x in row.iter_mut() {
            *x *= d[i];
        }
    }
    out
}

fn off_diag_norm(a: &[Complex64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += a[i * n + j].norm_sqr();
        }
    }
    (2.0 * s).sqrt()
}

/// Hermitian eigendecomposition by cyclic Jacobi rotations with the threshold
/// strategy.
pub fn herm_eig(a: &ComplexMatrix) -> Result<HermitianEig> {
    let n = a.rows;
    let (evals, vt) = jacobi(a, true)?;
    let vt = vt.expect("vectors were requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| evals[i].total_cmp(&evals[j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| evals[i]).collect();
    let mut v = ComplexMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            v.data[i * n + col] = vt[k * n + i];
        }
    }
    Ok(HermitianEig { eigenvalues, eigenvectors: v })
}

/// Eigenvalues of a Hermitian matrix, ascending; the same rotations as
/// [`herm_eig`] without accumulating eigenvectors.
pub fn herm_eigvals(a: &ComplexMatrix) -> Result<Vec<f64>> {
    let (mut evals, _) = jacobi(a, false)?;
    evals.sort_by(f64::total_cmp);
    Ok(evals)
}

/// Cyclic Jacobi sweeps; returns the unordered diagonal and, if asked, the
/// rows of V^T.
fn jacobi(a: &ComplexMatrix, vectors: bool) -> Result<(Vec<f64>, Option<Vec<Complex64>>)> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!("herm_eig on {}x{}", a.rows, a.cols)));
    }
    let defect = a.hermitian_defect();
    if defect > TOL_HERM {
        return Err(LinalgError::NonHermitian { defect });
    }
    let n = a.rows;
    let mut m = a.hermitian_part().data;
    for i in 0..n {
        m[i * n + i] = Complex64::new(m[i * n + i].re, 0.0);
    }
    // Rows of `vt` are the eigenvectors, kept contiguous for the updates.
    let mut vt = vectors.then(|| ComplexMatrix::identity(n).data);
    let fro = a.norm_fro();
    let target = f64::EPSILON * fro;
    let mut converged = n <= 1 || fro == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == SWEEP_CAP {
            return Err(LinalgError::NoConvergence { sweeps, off: off_diag_norm(&m, n) });
        }
        let off = off_diag_norm(&m, n);
        if off <= target {
            break;
        }
        let thresh = if sweeps < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                let b = apq.norm();
                if b == 0.0 || b <= thresh {
                    continue;
                }
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                // Negligible relative to both diagonal entries: drop it.
                if sweeps > 3 && b < 0.5 * f64::EPSILON * app.abs().min(aqq.abs()) {
                    m[p * n + q] = ZERO;
                    m[q * n + p] = ZERO;
                    continue;
                }
                jacobi_rotate(&mut m, vt.as_deref_mut(), n, p, q, app, aqq, apq);
            }
        }
        sweeps += 1;
        converged = off_diag_norm(&m, n) <= target;
    }
    Ok(((0..n).map(|i| m[i * n + i].re).collect(), vt))
}

/// One two-sided rotation annihilating m[p][q].
#[allow(clippy::too_many_arguments)]
fn jacobi_rotate(
    m: &mut [Complex64],
    vt: Option<&mut [Complex64]>,
    n: usize,
    p: usize,
    q: usize,
    app: f64,
    aqq: f64,
    apq: Complex64,
) {
    let b = apq.norm();
    let phase = apq / b;
    // After the phase change the (p,q) pair is the real symmetric block
    // [[app, b], [b, aqq]]; rotate it with the classical Jacobi angle.
    let theta = (aqq - app) / (2.0 * b);
    let t = if theta == 0.0 {
        1.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // G = diag(1, conj(phase)) R with R = [[c, s], [-s, c]].
    let gpp = Complex64::new(c, 0.0);
    let gpq = Complex64::new(s, 0.0);
    let gqp = -phase.conj() * s;
    let gqq = phase.conj() * c;
    // New rows p and q of G* A, then restore Hermitian symmetry.
    for j in 0..n {
        if j == p || j == q {
            continue;
        }
        let xp = m[p * n + j];
        let xq = m[q * n + j];
        let np = gpp.conj() * xp + gqp.conj() * xq;
        let nq = gpq.conj() * xp + gqq.conj() * xq;
        m[p * n + j] = np;
        m[q * n + j] = nq;
        m[j * n + p] = np.conj();
        m[j * n + q] = nq.conj();
    }
    m[p * n + p] = Complex64::new(app - t * b, 0.0);
    m[q * n + q] = Complex64::new(aqq + t * b, 0.0);
    m[p * n + q] = ZERO;
    m[q * n + p] = ZERO;
    // Eigenvector update V <- V G, on the rows of V^T.
    let Some(vt) = vt else { return };
    let (head, tail) = vt.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = gpp * xp + gqp * xq;
        *y = gpq * xp + gqq * xq;
    }
}

/// LU factorisation with partial pivoting, P A = L U.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch(format!("LU of {}x{}", a.rows, a.cols)));
        }
        let n = a.rows;
        let floor = PIVOT_FLOOR * a.norm_max();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].norm();
            for i in (k + 1)..n {
                let v = lu[i * n + k].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= floor || best == 0.0 {
                return Err(LinalgError::Singular { pivot: best, floor, column: k });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let inv = ONE / lu[k * n + k];
            let (top, bottom) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n..(k + 1) * n];
            let update = |row: &mut [Complex64]| {
                let l = row[k] * inv;
                row[k] = l;
                if l != ZERO {
                    for j in (k + 1)..n {
                        row[j] -= l * pivot_row[j];
                    }
                }
            };
            if (n - k) * (n - k) >= PAR_THRESHOLD * 4 {
                bottom.par_chunks_mut(n).for_each(update);
            } else {
                bottom.chunks_mut(n).for_each(update);
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves A X = B.
    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.n;
        if b.rows != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "solve: {}x{} system with {} right-hand rows",
                n, n, b.rows
            )));
        }
        let m = b.cols;
        let mut x = ComplexMatrix::zeros(n, m);
        for i in 0..n {
            x.data[i * m..(i + 1) * m].copy_from_slice(b.row(self.perm[i]));
        }
        let lu = &self.lu;
        let solve_cols = |cols: &mut [Vec<Complex64>]| {
            for col in cols.iter_mut() {
                for i in 0..n {
                    let mut s = col[i];
                    for j in 0..i {
                        s -= lu[i * n + j] * col[j];
                    }
                    col[i] = s;
                }
                for i in (0..n).rev() {
                    let mut s = col[i];
                    for j in (i + 1)..n {
                        s -= lu[i * n + j] * col[j];
                    }
                    col[i] = s / lu[i * n + i];
                }
            }
        };
        let mut cols: Vec<Vec<Complex64>> = (0..m).map(|j| x.column(j)).collect();
        if m > 4 && n * n * m >= PAR_THRESHOLD * 64 {
            cols.par_chunks_mut(1).for_each(solve_cols);
        } else {
            solve_cols(&mut cols);
        }
        for (j, col) in cols.iter().enumerate() {
            x.set_column(j, col);
        }
        Ok(x)
    }

    /// Solves X A = B, i.e. A* X* = B*.
    pub fn solve_right(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let adj = Lu::factor_adjoint(self)?;
        Ok(adj.solve(&b.adjoint())?.adjoint())
    }

    fn factor_adjoint(&self) -> Result<Lu> {
        Lu::factor(&self.reconstruct().adjoint())
    }

    /// P⁻¹ L U, the factorised matrix.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.n;
        let mut l = ComplexMatrix::identity(n);
        let mut u = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if j < i {
                    l.data[i * n + j] = self.lu[i * n + j];
                } else {
                    u.data[i * n + j] = self.lu[i * n + j];
                }
            }
        }
        let pa = l.matmul(&u);
        let mut a = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            a.data[self.perm[i] * n..(self.perm[i] + 1) * n].copy_from_slice(pa.row(i));
        }
        a
    }

    /// Determinant of the factorised matrix.
    pub fn det(&self) -> Complex64 {
        let n = self.n;
        let mut d = ONE;
        for i in 0..n {
            d *= self.lu[i * n + i];
        }
        // Parity of the permutation.
        let mut seen = vec![false; n];
        let mut sign = 1.0;
        for i in 0..n {
            if seen[i] {
                continue;
            }
            let mut j = i;
            let mut len = 0;
            while !seen[j] {
                seen[j] = true;
                j = self.perm[j];
                len += 1;
            }
            if len % 2 == 0 {
                sign = -sign;
            }
        }
        d * sign
    }
}

/// Solves A X = B by LU with partial pivoting.
pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    Lu::factor(a)?.solve(b)
}

/// Solves X A = B.
pub fn solve_right(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(solve(&a.adjoint(), &b.adjoint())?.adjoint())
}

/// e^{iAt} via the eigendecomposition of A.
pub fn propagator(a: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    Ok(propagator_from_eig(&herm_eig(a)?, t))
}

pub fn propagator_from_eig(eig: &HermitianEig, t: f64) -> ComplexMatrix {
    eig.apply_fn(|l| Complex64::from_polar(1.0, l * t))
}

/// Spectral projection of A onto the open interval Δ.
pub fn spectral_projection(a: &ComplexMatrix, delta: Interval) -> Result<ComplexMatrix> {
    spectral_projection_from_eig(&herm_eig(a)?, delta)
}

pub fn spectral_projection_from_eig(eig: &HermitianEig, delta: Interval) -> Result<ComplexMatrix> {
    let gap = GAP_TOL * eig.spectral_radius().max(1.0);
    for &l in &eig.eigenvalues {
        for endpoint in [delta.lo, delta.hi] {
            if (l - endpoint).abs() < gap {
                return Err(LinalgError::BoundaryEigenvalue { eigenvalue: l, endpoint, gap });
            }
        }
    }
    let idx: Vec<usize> =
        (0..eig.eigenvalues.len()).filter(|&k| delta.contains(eig.eigenvalues[k])).collect();
    let v = eig.eigenvectors.select_columns(&idx);
    Ok(v.matmul(&v.adjoint()))
}

/// Singular values in descending order, from the eigenvalues of the smaller
/// Hermitian square.
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    if a.rows == 0 || a.cols == 0 {
        return Vec::new();
    }
    let g = if a.rows >= a.cols { a.adjoint().matmul(a) } else { a.matmul(&a.adjoint()) };
    let g = g.hermitian_part();
    let mut s: Vec<f64> = match herm_eigvals(&g) {
        Ok(e) => e.iter().map(|&l| l.max(0.0).sqrt()).collect(),
        // A Gram matrix is Hermitian by construction; the eigensolver can
        // only fail by exceeding the sweep cap, which never happens for the
        // sizes used here. Fall back to the Frobenius bound.
        Err(_) => vec![a.norm_fro()],
    };
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Largest singular value.
pub fn op_norm(a: &ComplexMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(a: &ComplexMatrix) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Spectral condition number σ_max/σ_min (infinite when singular).
pub fn cond(a: &ComplexMatrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Euclidean norm of a vector.
pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Inner product (u, v) = Σ u_i conj(v_i), linear in the first slot.
pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a * b.conj()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(n: usize, m: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexMatrix::from_fn(n, m, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_hermitian(n: usize, seed: u64) -> ComplexMatrix {
        random_matrix(n, n, seed).hermitian_part()
    }

    #[test]
    fn diagonal_eig_is_sorted_permutation() {
        let a = ComplexMatrix::from_real_diag(&[3.0, 1.0, 2.0]);
        let e = herm_eig(&a).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 2.0, 3.0]);
        let v = &e.eigenvectors;
        assert_eq!(v[(1, 0)], ONE);
        assert_eq!(v[(2, 1)], ONE);
        assert_eq!(v[(0, 2)], ONE);
    }

    #[test]
    fn zero_matrix_eig() {
        let e = herm_eig(&ComplexMatrix::zeros(5, 5)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| l == 0.0));
        let v = &e.eigenvectors;
        assert!((&v.adjoint().matmul(v) - &ComplexMatrix::identity(5)).norm_max() < 1e-15);
    }

    #[test]
    fn random_hermitian_reconstruction() {
        let a = random_hermitian(16, 11);
        let e = herm_eig(&a).unwrap();
        let rec = e.apply_fn(|l| c(l, 0.0));
        let na = op_norm(&a);
        assert!(op_norm(&(&a - &rec)) < 1e-12 * na);
        let v = &e.eigenvectors;
        assert!(op_norm(&(&v.adjoint().matmul(v) - &ComplexMatrix::identity(16))) < TOL_EIG);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let av = a.matmul(v);
        let vl = scale_columns(v, &e.eigenvalues.iter().map(|&l| c(l, 0.0)).collect::<Vec<_>>());
        assert!(op_norm(&(&av - &vl)) <= TOL_EIG * na);
    }

    #[test]
    fn non_hermitian_rejected() {
        let a = random_matrix(4, 4, 1);
        assert!(matches!(herm_eig(&a), Err(LinalgError::NonHermitian { .. })));
    }

    #[test]
    fn degenerate_spectrum() {
        // Unitary conjugate of diag(1,1,1,2,2).
        let u = propagator(&random_hermitian(5, 3), 1.3).unwrap();
        let d = ComplexMatrix::from_real_diag(&[1.0, 1.0, 1.0, 2.0, 2.0]);
        let a = u.matmul(&d).matmul(&u.adjoint()).hermitian_part();
        let e = herm_eig(&a).unwrap();
        for (l, want) in e.eigenvalues.iter().zip([1.0, 1.0, 1.0, 2.0, 2.0]) {
            assert!((l - want).abs() < 1e-13);
        }
    }

    #[test]
    fn solve_trivial_cases() {
        let b = random_matrix(3, 2, 5);
        assert_eq!(solve(&ComplexMatrix::identity(3), &b).unwrap(), b);
        let a = ComplexMatrix::from_real_diag(&[2.0, 4.0]);
        let x = solve(&a, &ComplexMatrix::identity(2)).unwrap();
        assert_eq!(x, ComplexMatrix::from_real_diag(&[0.5, 0.25]));
    }

    #[test]
    fn solve_recovers_planted_solution() {
        let a = random_matrix(32, 32, 7).shift_diag(c(6.0, 0.0));
        let x0 = random_matrix(32, 3, 8);
        let b = a.matmul(&x0);
        let x = solve(&a, &b).unwrap();
        assert!((&x - &x0).norm_max() < 1e-12 * x0.norm_max());
    }

    #[test]
    fn solve_right_matches_definition() {
        let a = random_matrix(6, 6, 9).shift_diag(c(3.0, 0.0));
        let x0 = random_matrix(2, 6, 10);
        let b = x0.matmul(&a);
        let x = solve_right(&a, &b).unwrap();
        assert!((&x - &x0).norm_max() < 1e-12);
        let lu = Lu::factor(&a).unwrap();
        assert!((&lu.solve_right(&b).unwrap() - &x0).norm_max() < 1e-12);
    }

    #[test]
    fn singular_matrix_detected() {
        let mut a = random_matrix(4, 4, 2);
        let r0: Vec<Complex64> = a.row(0).to_vec();
        for j in 0..4 {
            a[(3, j)] = r0[j] * 2.0;
        }
        assert!(matches!(solve(&a, &ComplexMatrix::identity(4)), Err(LinalgError::Singular { .. })));
        assert!(matches!(
            solve(&ComplexMatrix::zeros(2, 2), &ComplexMatrix::identity(2)),
            Err(LinalgError::Singular { .. })
        ));
    }

    #[test]
    fn determinant_of_permuted_diagonal() {
        let a = ComplexMatrix::from_fn(3, 3, |i, j| match (i, j) {
            (0, 1) => c(2.0, 0.0),
            (1, 0) => c(3.0, 0.0),
            (2, 2) => c(0.0, 1.0),
            _ => ZERO,
        });
        let d = Lu::factor(&a).unwrap().det();
        assert!((d - c(0.0, -6.0)).norm() < 1e-14);
    }

    #[test]
    fn propagator_examples() {
        let a = random_hermitian(6, 4);
        assert!((&propagator(&a, 0.0).unwrap() - &ComplexMatrix::identity(6)).norm_max() < 1e-14);
        let p = propagator(&ComplexMatrix::from_real_diag(&[std::f64::consts::PI]), 1.0).unwrap();
        assert!((p[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-15);
        let u = propagator(&a, 2.5).unwrap();
        let w = propagator(&a, -2.5).unwrap();
        assert!(op_norm(&(&u.matmul(&w) - &ComplexMatrix::identity(6))) < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let a = ComplexMatrix::from_real_diag(&[1.0, 2.0, 3.0]);
        let p = spectral_projection(&a, Interval::new(1.5, 2.5).unwrap()).unwrap();
        assert_eq!(p, ComplexMatrix::from_real_diag(&[0.0, 1.0, 0.0]));
        let z = spectral_projection(&a, Interval::new(5.0, 6.0).unwrap()).unwrap();
        assert_eq!(z.norm_max(), 0.0);
        assert!(matches!(
            spectral_projection(&a, Interval::new(2.0, 2.5).unwrap()),
            Err(LinalgError::BoundaryEigenvalue { .. })
        ));
    }

    #[test]
    fn random_projection_is_projection() {
        let a = random_hermitian(12, 21);
        let e = herm_eig(&a).unwrap();
        let delta = Interval::new(-0.3, 0.4).unwrap();
        let p = spectral_projection_from_eig(&e, delta).unwrap();
        let count = e.eigenvalues.iter().filter(|&&l| delta.contains(l)).count();
        assert!((&p.matmul(&p) - &p).norm_max() < 1e-12);
        assert!(p.hermitian_defect() < 1e-12);
        assert!((p.trace().re - count as f64).abs() < 1e-12);
    }

    #[test]
    fn op_norm_examples() {
        assert!((op_norm(&ComplexMatrix::identity(4)) - 1.0).abs() < 1e-14);
        assert_eq!(op_norm(&ComplexMatrix::zeros(3, 3)), 0.0);
        assert!((op_norm(&ComplexMatrix::from_real_diag(&[1.0, -5.0])) - 5.0).abs() < 1e-14);
        let rect = random_matrix(3, 7, 3);
        assert!((op_norm(&rect) - op_norm(&rect.adjoint())).abs() < 1e-12);
    }

    #[test]
    fn serde_round_trip_is_bit_exact() {
        let a = random_matrix(3, 4, 99).scale_real(1.0 / 3.0);
        let s = serde_json::to_string(&a).unwrap();
        let b: ComplexMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<ComplexMatrix>(r#"{"rows":2,"cols":2,"entries":[[1,0]]}"#).is_err());
    }

    #[test]
    fn block_helpers() {
        let a = random_matrix(2, 2, 1);
        let b = random_matrix(3, 3, 2);
        let d = ComplexMatrix::block_diag(&[&a, &b]);
        assert_eq!(d.submatrix(2, 2, 3, 3), b);
        assert_eq!(d.submatrix(0, 2, 2, 3).norm_max(), 0.0);
        let h = ComplexMatrix::hstack(&[&a, &a]);
        assert_eq!(h.columns(2, 2), a);
        let v = ComplexMatrix::vstack(&[&a, &a]);
        assert_eq!(v.submatrix(2, 0, 2, 2), a);
    }
}
