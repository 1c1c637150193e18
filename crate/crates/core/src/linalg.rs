//! Dense real/complex matrix primitives and the trusted exact solver.
//!
//! Everything here runs on the trusted software path: plain IEEE double
//! arithmetic in a fixed order, no fault injection ever. The complex
//! detection problem is embedded into a real one twice the size via the
//! `[[Re, -Im], [Im, Re]]` block map, so the rest of the pipeline only
//! deals with real matrices.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense real matrix, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

pub type RealVector = Vec<f64>;
pub type ComplexVector = Vec<Complex64>;

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix storage",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

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
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Single-column matrix view of a vector, for routing vectors through
    /// matrix-only backends.
    pub fn from_column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Copy of the leading `rows x cols` block.
    pub fn submatrix(&self, rows: usize, cols: usize) -> Self {
        assert!(rows <= self.rows && cols <= self.cols);
        Self::from_fn(rows, cols, |r, c| self.get(r, c))
    }

    /// Contents of a single-column matrix as a vector.
    pub fn into_column(self) -> Result<RealVector> {
        if self.cols != 1 {
            return Err(Error::LengthMismatch {
                what: "column extraction",
                expected: 1,
                got: self.cols,
            });
        }
        Ok(self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix storage",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
}

/// Real lifting of a complex matrix: `[[Re H, -Im H], [Im H, Re H]]`.
///
/// An `Nr x Nt` complex matrix becomes `2Nr x 2Nt` real; complex products
/// are preserved under the block interpretation.
pub fn lift_complex_matrix(h: &ComplexMatrix) -> RealMatrix {
    let (nr, nt) = (h.rows(), h.cols());
    RealMatrix::from_fn(2 * nr, 2 * nt, |r, c| {
        let z = h.get(r % nr, c % nt);
        match (r < nr, c < nt) {
            (true, true) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
            (false, false) => z.re,
        }
    })
}

/// Real lifting of a complex vector: real parts first, imaginary parts after.
pub fn lift_complex_vector(y: &[Complex64]) -> RealVector {
    y.iter()
        .map(|z| z.re)
        .chain(y.iter().map(|z| z.im))
        .collect()
}

/// Inverse of [`lift_complex_vector`]: `out[k] = x[k] + i * x[n/2 + k]`.
pub fn unlift_vector(x: &[f64]) -> Result<ComplexVector> {
    if x.len() % 2 != 0 {
        return Err(Error::OddLength(x.len()));
    }
    let n = x.len() / 2;
    Ok((0..n).map(|k| Complex64::new(x[k], x[n + k])).collect())
}

/// Exact product on the trusted path. Fixed accumulation order: ascending
/// inner index, so tiled backends can reproduce it bit for bit.
pub fn trusted_matmul(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            lhs_rows: a.rows(),
            lhs_cols: a.cols(),
            rhs_rows: b.rows(),
            rhs_cols: b.cols(),
        });
    }
    let mut out = RealMatrix::zeros(a.rows(), b.cols());
    for r in 0..a.rows() {
        for c in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(r, k) * b.get(k, c);
            }
            out.set(r, c, acc);
        }
    }
    Ok(out)
}

pub fn trusted_add(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    elementwise(a, b, "add", |x, y| x + y)
}

pub fn trusted_sub(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    elementwise(a, b, "sub", |x, y| x - y)
}

fn elementwise(
    a: &RealMatrix,
    b: &RealMatrix,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<RealMatrix> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            op,
            lhs_rows: a.rows(),
            lhs_cols: a.cols(),
            rhs_rows: b.rows(),
            rhs_cols: b.cols(),
        });
    }
    Ok(RealMatrix::from_fn(a.rows(), a.cols(), |r, c| {
        f(a.get(r, c), b.get(r, c))
    }))
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &RealMatrix, b: &[f64]) -> Result<RealVector> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            op: "solve",
            lhs_rows: a.rows(),
            lhs_cols: a.cols(),
            rhs_rows: b.len(),
            rhs_cols: 1,
        });
    }
    if b.len() != n {
        return Err(Error::LengthMismatch {
            what: "right-hand side",
            expected: n,
            got: b.len(),
        });
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let tiny = f64::EPSILON * (n as f64) * m.max_abs().max(1.0);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                m.get(i, col)
                    .abs()
                    .partial_cmp(&m.get(j, col).abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if m.get(pivot_row, col).abs() <= tiny {
            return Err(Error::Singular { index: col });
        }
        if pivot_row != col {
            for c in 0..n {
                let (x, y) = (m.get(col, c), m.get(pivot_row, c));
                m.set(col, c, y);
                m.set(pivot_row, c, x);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m.get(col, col);
        for r in col + 1..n {
            let factor = m.get(r, col) / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m.get(r, c) - factor * m.get(col, c);
                m.set(r, c, v);
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in row + 1..n {
            acc -= m.get(row, c) * x[c];
        }
        x[row] = acc / m.get(row, row);
    }
    Ok(x)
}

/// Trusted reference detector: solves the regularized normal equations
/// `(Hr' Hr + sigma2 I) x = Hr' yr` in the lifted real domain by direct
/// elimination, then converts back to complex symbols.
///
/// This is the ground truth the protected pipeline is compared against.
pub fn exact_detect(h: &ComplexMatrix, y: &[Complex64], sigma2: f64) -> Result<ComplexVector> {
    if y.len() != h.rows() {
        return Err(Error::LengthMismatch {
            what: "received vector",
            expected: h.rows(),
            got: y.len(),
        });
    }
    if sigma2 < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise variance must be nonnegative, got {sigma2}"
        )));
    }
    let hr = lift_complex_matrix(h);
    let yr = lift_complex_vector(y);
    let hrt = hr.transpose();
    let gram = trusted_matmul(&hrt, &hr)?;
    let n = gram.rows();
    let a = RealMatrix::from_fn(n, n, |r, c| {
        gram.get(r, c) + if r == c { sigma2 } else { 0.0 }
    });
    let b = trusted_matmul(&hrt, &RealMatrix::from_column(&yr))?.into_column()?;
    let x = solve_linear(&a, &b)?;
    unlift_vector(&x)
}
