use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Cholesky};

/// Recursive least-squares state for the stacked parameter vector
/// `h_1 ‖ … ‖ h_N ‖ û_0`.
#[derive(Debug, Clone)]
pub struct RlsState {
    v: DMatrix<f64>,
    h: DVector<f64>,
    lambda: f64,
    iteration: usize,
}

impl RlsState {
    /// `V = I / δ`, `h = 0`, with `K_Σ = N K + 1`.
    pub fn new(order: usize, taps: usize, delta: f64, lambda: f64) -> Result<Self> {
        Self::with_dim(order * taps + 1, delta, lambda)
    }

    pub fn with_dim(dim: usize, delta: f64, lambda: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid("lambda", format!("must lie in (0, 1], got {lambda}")));
        }
        Ok(Self {
            v: DMatrix::identity(dim, dim) / delta,
            h: DVector::zeros(dim),
            lambda,
            iteration: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One update with regressor `s` and reference term `(h_0 ∗ s_0)[k]`.
    /// Returns the a priori estimate `û[k]`.
    pub fn step(&mut self, s: &DVector<f64>, ref_term: f64) -> Result<f64> {
        let u = ref_term + self.h.dot(s);
        let alpha = &self.v * s;
        let denom = self.lambda + s.dot(&alpha);
        if !(denom > 0.0) {
            return Err(Error::RlsBreakdown {
                iteration: self.iteration,
                denominator: denom,
            });
        }
        let g = &alpha / denom;
        self.v.ger(-1.0, &g, &alpha, 1.0);
        self.v /= self.lambda;
        symmetrize(&mut self.v);
        self.h.axpy(-u, &g, 1.0);
        self.iteration += 1;
        Ok(u)
    }

    /// Applies `b = s.ncols()` consecutive updates at once. Column `i` of `s`
    /// is the regressor of step `i`. The result equals `b` calls to
    /// [`RlsState::step`] up to rounding. Returns the a priori estimates
    /// evaluated with the coefficients at the start of the block.
    pub fn step_block(&mut self, s: &DMatrix<f64>, ref_terms: &[f64]) -> Result<Vec<f64>> {
        let b = s.ncols();
        assert_eq!(b, ref_terms.len());
        if b == 0 {
            return Ok(Vec::new());
        }
        let mut e = s.tr_mul(&self.h);
        for (ei, r) in e.iter_mut().zip(ref_terms) {
            *ei += r;
        }
        let apriori = e.as_slice().to_vec();

        let w = &self.v * s;
        let mut m = s.tr_mul(&w);
        let mut weight = 1.0;
        for i in 0..b {
            weight *= self.lambda;
            m[(i, i)] += weight;
        }
        let chol = Cholesky::new(&m).map_err(|f| Error::RlsBreakdown {
            iteration: self.iteration + f.index,
            denominator: f.pivot,
        })?;
        // Z = W M⁻¹, solved from M Zᵀ = Wᵀ.
        let z = chol.solve_columns(&w.transpose()).transpose();
        self.h.gemv(-1.0, &z, &e, 1.0);
        downdate_lower(&mut self.v, &z, &w, 1.0 / weight);
        mirror_lower(&mut self.v);
        self.iteration += b;
        Ok(apriori)
    }
}

const PANEL: usize = 256;

/// `V ← c (V − Z Wᵀ)` on the lower block triangle only, one column panel
/// at a time.
fn downdate_lower(v: &mut DMatrix<f64>, z: &DMatrix<f64>, w: &DMatrix<f64>, c: f64) {
    let n = v.nrows();
    let mut c0 = 0;
    while c0 < n {
        let width = PANEL.min(n - c0);
        let wt = w.rows(c0, width).transpose();
        v.view_mut((c0, c0), (n - c0, width))
            .gemm(-c, &z.rows(c0, n - c0), &wt, c);
        c0 += width;
    }
}

/// Copies the strict lower triangle onto the upper one, tile by tile.
fn mirror_lower(v: &mut DMatrix<f64>) {
    const TILE: usize = 64;
    let n = v.nrows();
    for j0 in (0..n).step_by(TILE) {
        for i0 in (j0..n).step_by(TILE) {
            for j in j0..(j0 + TILE).min(n) {
                for i in i0.max(j + 1)..(i0 + TILE).min(n) {
                    v[(j, i)] = v[(i, j)];
                }
            }
        }
    }
}
