//! Dense linear algebra kernel: elementwise (Hadamard) operations, matrix
//! products, Kronecker products, column-major vectorization, and trace
//! identities. Plain loops throughout; the problem sizes in scope stay at a
//! few thousand rows.

use crate::error::{Error, Result};

/// Product order cap for [`Matrix::kron`]; anything larger is refused.
pub const KRON_CAPACITY: usize = 100_000_000;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

/// Elementwise binary operation selector for [`Matrix::hadamard`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HadamardOp {
    Mul,
    Div,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Matrix::zeros(order, order);
        for i in 0..order {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// All-ones matrix minus the identity: weights every off-diagonal entry
    /// of a Gram matrix while ignoring the diagonal.
    pub fn off_diagonal_mask(order: usize) -> Self {
        let mut m = Matrix::filled(order, order, 1.0);
        for i in 0..order {
            m[(i, i)] = 0.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidArgument("matrix needs at least one entry".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn require_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Elementwise product or quotient. Division rejects divisor entries
    /// with magnitude below machine epsilon, reporting the first offending
    /// index; callers that want a flooring policy implement it themselves.
    pub fn hadamard(&self, other: &Matrix, op: HadamardOp) -> Result<Matrix> {
        self.require_same_shape(other, "hadamard operands")?;
        let mut out = self.clone();
        match op {
            HadamardOp::Mul => {
                for (o, &b) in out.data.iter_mut().zip(&other.data) {
                    *o *= b;
                }
            }
            HadamardOp::Div => {
                for (idx, (o, &b)) in out.data.iter_mut().zip(&other.data).enumerate() {
                    if b.abs() < f64::EPSILON {
                        return Err(Error::DivisionByZero {
                            row: idx / other.cols,
                            col: idx % other.cols,
                        });
                    }
                    *o /= b;
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product: block (i, j) of the result is `self[i, j] * other`.
    pub fn kron(&self, other: &Matrix) -> Result<Matrix> {
        let rows = self
            .rows
            .checked_mul(other.rows)
            .filter(|&r| r <= KRON_CAPACITY)
            .ok_or_else(|| Error::Capacity("kronecker row count overflow".into()))?;
        let cols = self
            .cols
            .checked_mul(other.cols)
            .filter(|&c| c <= KRON_CAPACITY)
            .ok_or_else(|| Error::Capacity("kronecker column count overflow".into()))?;
        rows.checked_mul(cols)
            .filter(|&n| n <= KRON_CAPACITY)
            .ok_or_else(|| Error::Capacity("kronecker product too large".into()))?;
        let mut out = Matrix::zeros(rows, cols);
        for ai in 0..self.rows {
            for aj in 0..self.cols {
                let a = self[(ai, aj)];
                if a == 0.0 {
                    continue;
                }
                for bi in 0..other.rows {
                    for bj in 0..other.cols {
                        out[(ai * other.rows + bi, aj * other.cols + bj)] = a * other[(bi, bj)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Column-major stacking of the matrix into a vector.
    pub fn vectorize(&self) -> Vector {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self[(i, j)]);
            }
        }
        Vector { data }
    }

    /// Inverse of [`Matrix::vectorize`]: reshape a column-major stacked
    /// vector back into a `rows x cols` matrix.
    pub fn unvectorize(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
        if v.len() != rows * cols {
            return Err(Error::Shape(format!(
                "vector length {} does not match {rows}x{cols}",
                v.len()
            )));
        }
        let mut m = Matrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = v[j * rows + i];
            }
        }
        Ok(m)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let lhs = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(lhs) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `tr(self^T other)` accumulated elementwise, without forming a product.
    pub fn trace_prod(&self, other: &Matrix) -> Result<f64> {
        self.require_same_shape(other, "trace_prod operands")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "add operands")?;
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "sub operands")?;
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        Ok(out)
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        self.require_same_shape(other, "add_assign_scaled operands")?;
        for (o, &b) in self.data.iter_mut().zip(&other.data) {
            *o += scale * b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        let mut out = self.clone();
        for o in out.data.iter_mut() {
            *o *= factor;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    pub fn is_identity(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                let want = if i == j { 1.0 } else { 0.0 };
                if self[(i, j)] != want {
                    return false;
                }
            }
        }
        true
    }

    /// Largest absolute difference from the transpose.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replace the matrix with its symmetric part `(M + M^T) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols, "symmetrize needs a square matrix");
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                sums[j] += self[(i, j)];
            }
        }
        sums
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().sum())
            .collect()
    }

    pub fn mean_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum::<f64>() / self.data.len() as f64
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("vector needs at least one entry".into()));
        }
        Ok(Vector { data })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Vector { data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "dot: lengths {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Matrix-vector product.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols() != v.len() {
        return Err(Error::Shape(format!(
            "matvec: {}x{} times length {}",
            m.rows(),
            m.cols(),
            v.len()
        )));
    }
    let mut out = Vector::zeros(m.rows());
    for i in 0..m.rows() {
        let row = &m.data[i * m.cols..(i + 1) * m.cols];
        out[i] = row.iter().zip(&v.data).map(|(&a, &b)| a * b).sum();
    }
    Ok(out)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, sorted
/// ascending. Intended for the small orders used in validation checks.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(Error::Shape(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut a = m.clone();
    let tol = 1e-14 * a.max_abs().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}
