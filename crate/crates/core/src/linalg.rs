//! Dense symmetric positive definite solves with explicit rank diagnostics.

use nalgebra::{DMatrix, DVector};

/// Pivots below this fraction of the matrix's largest diagonal entry are
/// treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Lower Cholesky factor stored row-major, `L[i][j]` at `i * n + j`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

/// Index of the first pivot that failed and its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
    pub pivot: f64,
}

impl Cholesky {
    /// Factors `a = L Lᵀ`, reading only the lower triangle.
    pub fn new(a: &DMatrix<f64>) -> Result<Self, PivotFailure> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let floor = PIVOT_TOLERANCE * scale;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let (done, rest) = l.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + j];
                let dot = dot(&row_i[..j], row_j);
                row_i[j] = (a[(i, j)] - dot) / done[j * n + j];
            }
            let pivot = a[(i, i)] - dot(&row_i[..i], &row_i[..i]);
            if !(pivot > floor) {
                return Err(PivotFailure { index: i, pivot });
            }
            row_i[i] = pivot.sqrt();
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut y = b.as_slice().to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            y[i] /= self.l[i * n + i];
            let yi = y[i];
            let row = &self.l[i * n..i * n + i];
            for (yj, &lij) in y[..i].iter_mut().zip(row) {
                *yj -= lij * yi;
            }
        }
        DVector::from_vec(y)
    }

    /// Solves for every column of `b`.
    pub fn solve_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for (c, col) in b.column_iter().enumerate() {
            out.set_column(c, &self.solve(&col.into_owned()));
        }
        out
    }

    /// Smallest diagonal entry of `L`.
    pub fn min_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| self.l[i * self.n + i])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solves `a x = b` for symmetric positive definite `a`, followed by
/// `refinements` rounds of iterative refinement against `a`.
pub fn solve_spd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    refinements: usize,
) -> Result<DVector<f64>, PivotFailure> {
    let chol = Cholesky::new(a)?;
    let mut x = chol.solve(b);
    for _ in 0..refinements {
        let residual = b - a * &x;
        x += chol.solve(&residual);
    }
    Ok(x)
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let tail: f64 = a[4 * chunks..]
        .iter()
        .zip(&b[4 * chunks..])
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
