//! Dense real matrices, sample covariance and a cyclic Jacobi eigensolver
//! for symmetric matrices.

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != m {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {m}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_row_major(n, m, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_samples<V: AsRef<[f64]>>(samples: &[V]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let dim = samples[0].as_ref().len();
    if dim == 0 {
        return Err(Error::Shape("zero-dimensional samples".into()));
    }
    for (n, s) in samples.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(Error::Shape(format!(
                "sample {n} has dimension {}, expected {dim}",
                s.len()
            )));
        }
        if let Some(j) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {n}, component {}", j + 1)));
        }
    }
    Ok(dim)
}

/// Sample mean and unbiased (`N - 1`) covariance of a set of vectors.
///
/// The covariance is built from the upper triangle and mirrored, so it is
/// exactly symmetric.
pub fn mean_and_covariance<V: AsRef<[f64]>>(samples: &[V]) -> Result<(Vec<f64>, Matrix)> {
    let dim = check_samples(samples)?;
    let n = samples.len() as f64;

    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = Matrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for s in samples {
        for ((c, &v), &m) in centered.iter_mut().zip(s.as_ref()).zip(&mean) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov.data[i * dim..(i + 1) * dim];
            for j in i..dim {
                row[j] += ci * centered[j];
            }
        }
    }
    let denom = n - 1.0;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Unbiased sample covariance, `1/(N-1) Σ (x - μ)(x - μ)ᵀ`.
pub fn covariance<V: AsRef<[f64]>>(samples: &[V]) -> Result<Matrix> {
    mean_and_covariance(samples).map(|(_, c)| c)
}

/// Eigenvectors (as columns) and eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub vectors: Matrix,
    pub values: Vec<f64>,
    /// Jacobi sweeps performed.
    pub sweeps: usize,
}

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Rejects non-square, non-finite or asymmetric input.
pub fn check_symmetric(s: &Matrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if s.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let n = s.rows;
    let tol = SYMMETRY_TOLERANCE * s.max_abs();
    for i in 0..n {
        for j in i + 1..n {
            let diff = (s[(i, j)] - s[(j, i)]).abs();
            if diff > tol {
                return Err(Error::Asymmetric {
                    row: i,
                    col: j,
                    diff,
                });
            }
        }
    }
    Ok(())
}

fn off_and_diag_norms(a: &Matrix) -> (f64, f64) {
    let n = a.rows;
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)] * a[(i, j)];
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    (off.sqrt(), diag.sqrt())
}

/// Flips each column so that its largest-magnitude entry (lowest row on
/// ties) is positive.
pub fn normalize_signs(vectors: &mut Matrix) {
    for j in 0..vectors.cols {
        let mut best = 0;
        for i in 1..vectors.rows {
            if vectors[(i, j)].abs() > vectors[(best, j)].abs() {
                best = i;
            }
        }
        if vectors[(best, j)] < 0.0 {
            for i in 0..vectors.rows {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
}

/// Reorders eigenpairs by descending eigenvalue; ties keep their order.
pub fn sort_descending(values: &[f64], vectors: &Matrix) -> (Vec<f64>, Matrix) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut sorted = Matrix::zeros(vectors.rows, order.len());
    for (k, &src) in order.iter().enumerate() {
        for i in 0..vectors.rows {
            sorted[(i, k)] = vectors[(i, src)];
        }
    }
    (order.iter().map(|&k| values[k]).collect(), sorted)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps stop once the Frobenius norm of the off-diagonal part is below
/// `1e-12` times that of the diagonal. Eigenvalues come back in descending
/// order and every eigenvector has its largest-magnitude entry positive.
///
/// ```
/// use varspace::linalg::{eig_sym, Matrix};
///
/// let s = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
/// let eig = eig_sym(&s).unwrap();
/// assert!((eig.values[0] - 3.0).abs() < 1e-12);
/// assert!((eig.values[1] - 1.0).abs() < 1e-12);
/// ```
pub fn eig_sym(s: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(s)?;
    let n = s.rows;
    let mut a = s.clone();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);

    let mut sweeps = 0;
    loop {
        let (off, diag) = off_and_diag_norms(&a);
        if off <= JACOBI_TOLERANCE * diag {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
    }

    let values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let (values, mut vectors) = sort_descending(&values, &v);
    normalize_signs(&mut vectors);
    Ok(SymmetricEigen {
        vectors,
        values,
        sweeps,
    })
}

/// Applies the rotation that annihilates `a[p][q]`, accumulating it into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows;
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let app = a[(p, p)];
    let aqq = a[(q, q)];
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
