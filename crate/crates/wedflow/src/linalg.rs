//! Block-tridiagonal systems and their direct solution.
//!
//! The time-coupled Newton systems assembled elsewhere have one dense block
//! per time slice, coupled only to the neighboring slices. Block forward
//! elimination with a dense LU per pivot block solves them in one sweep.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Square block-tridiagonal matrix with `n` diagonal blocks of equal size.
///
/// Row `i` holds `sub[i-1]` (column `i-1`), `diag[i]`, and `sup[i]`
/// (column `i+1`).
pub struct BlockTridiagonal {
    pub sub: Vec<DMatrix<f64>>,
    pub diag: Vec<DMatrix<f64>>,
    pub sup: Vec<DMatrix<f64>>,
    block_dim: usize,
}

impl BlockTridiagonal {
    pub fn new(
        sub: Vec<DMatrix<f64>>,
        diag: Vec<DMatrix<f64>>,
        sup: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(Error::DimensionMismatch {
                op: "block tridiagonal",
                expected: 1,
                got: 0,
            });
        }
        if sub.len() != n - 1 || sup.len() != n - 1 {
            return Err(Error::DimensionMismatch {
                op: "block tridiagonal bands",
                expected: n - 1,
                got: sub.len().max(sup.len()),
            });
        }
        let d = diag[0].nrows();
        for m in diag.iter().chain(&sub).chain(&sup) {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    op: "block shape",
                    expected: d,
                    got: m.nrows(),
                });
            }
        }
        Ok(Self {
            sub,
            diag,
            sup,
            block_dim: d,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// `y = A x` on stacked block vectors.
    pub fn matvec(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n_blocks();
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut yi = &self.diag[i] * &x[i];
            if i > 0 {
                yi += &self.sub[i - 1] * &x[i - 1];
            }
            if i + 1 < n {
                yi += &self.sup[i] * &x[i + 1];
            }
            y.push(yi);
        }
        y
    }

    /// Solves `A x = rhs` by block forward elimination and back substitution.
    pub fn solve(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.n_blocks();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                op: "block solve rhs",
                expected: n,
                got: rhs.len(),
            });
        }
        let mut pivots = Vec::with_capacity(n);
        let mut elim_sup: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut m = self.diag[i].clone();
            let mut b = rhs[i].clone();
            if i > 0 {
                m -= &self.sub[i - 1] * &elim_sup[i - 1];
                b -= &self.sub[i - 1] * &y[i - 1];
            }
            let lu = m.lu();
            let w = if i + 1 < n {
                lu.solve(&self.sup[i]).ok_or(Error::NewtonFailed {
                    step: i,
                    reason: "singular diagonal block",
                })?
            } else {
                DMatrix::zeros(self.block_dim, self.block_dim)
            };
            let yi = lu.solve(&b).ok_or(Error::NewtonFailed {
                step: i,
                reason: "singular diagonal block",
            })?;
            pivots.push(lu);
            elim_sup.push(w);
            y.push(yi);
        }
        let mut x = y;
        for i in (0..n - 1).rev() {
            let correction = &elim_sup[i] * &x[i + 1];
            x[i] -= correction;
        }
        drop(pivots);
        Ok(x)
    }

    /// Dense assembly, for verification against direct solvers.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_blocks();
        let d = self.block_dim;
        let mut m = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            m.view_mut((i * d, i * d), (d, d)).copy_from(&self.diag[i]);
            if i > 0 {
                m.view_mut((i * d, (i - 1) * d), (d, d))
                    .copy_from(&self.sub[i - 1]);
            }
            if i + 1 < n {
                m.view_mut((i * d, (i + 1) * d), (d, d))
                    .copy_from(&self.sup[i]);
            }
        }
        m
    }
}
