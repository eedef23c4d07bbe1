use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{GeoError, Result};

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, out.get(r, c) + v);
            }
        }
        out
    }

    /// `self · h`
    pub fn mul_dense(&self, h: &Matrix) -> Result<Matrix> {
        if self.n_cols != h.rows() {
            return Err(GeoError::Dimension(format!(
                "sparse product: {}x{} · {}x{}",
                self.n_rows,
                self.n_cols,
                h.rows(),
                h.cols()
            )));
        }
        let mut out = Matrix::zeros(self.n_rows, h.cols());
        for r in 0..self.n_rows {
            for (c, w) in self.row(r) {
                let src = h.row(c).to_vec();
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`
    pub fn transpose_mul_dense(&self, g: &Matrix) -> Result<Matrix> {
        if self.n_rows != g.rows() {
            return Err(GeoError::Dimension(format!(
                "sparse transposed product: ({}x{})ᵀ · {}x{}",
                self.n_rows,
                self.n_cols,
                g.rows(),
                g.cols()
            )));
        }
        let mut out = Matrix::zeros(self.n_cols, g.cols());
        for r in 0..self.n_rows {
            let src = g.row(r);
            for (c, w) in self.row(r) {
                for (o, s) in out.row_mut(c).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }
}
