//! Compressed sparse row matrices over f64.
//!
//! Used for normalised adjacency operators and typed aggregation weights.
//! These matrices are constants during differentiation: gradients flow
//! through the dense operand of a product, never through the entries here.

use crate::ops::NumericError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row entry lists. Entries within a row are sorted by
    /// column and duplicate columns are summed, so construction order does
    /// not leak into the stored layout.
    pub fn from_rows(n_rows: usize, n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n_rows, "row list length does not match n_rows");
        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n_cols, "column {} out of range ({})", c, n_cols);
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            offsets.push(cols.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            offsets,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `self @ x` for a dense `[n_cols, c]` operand.
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor, NumericError> {
        if x.ndim() != 2 || x.rows() != self.n_cols {
            return Err(NumericError::ShapeMismatch {
                op: "sparse mul_dense",
                lhs: vec![self.n_rows, self.n_cols],
                rhs: x.shape().to_vec(),
            });
        }
        let c = x.cols();
        let mut out = Tensor::zeros(&[self.n_rows, c]);
        for r in 0..self.n_rows {
            let orow = out.row_mut(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                let v = self.vals[k];
                let xrow = x.row(self.cols[k]);
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `self.T @ x` without materialising the transpose. This is the adjoint
    /// of `mul_dense`, used when back-propagating through it.
    pub fn mul_dense_transposed(&self, x: &Tensor) -> Result<Tensor, NumericError> {
        if x.ndim() != 2 || x.rows() != self.n_rows {
            return Err(NumericError::ShapeMismatch {
                op: "sparse mul_dense_transposed",
                lhs: vec![self.n_cols, self.n_rows],
                rhs: x.shape().to_vec(),
            });
        }
        let c = x.cols();
        let mut out = Tensor::zeros(&[self.n_cols, c]);
        for r in 0..self.n_rows {
            let xrow = x.row(r).to_vec();
            for k in self.offsets[r]..self.offsets[r + 1] {
                let v = self.vals[k];
                let orow = out.row_mut(self.cols[k]);
                for (o, &xv) in orow.iter_mut().zip(&xrow) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// Dense copy, for small matrices in tests and oracles.
    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.n_rows, self.n_cols]);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                *out.at_mut(r, c) += v;
            }
        }
        out
    }

    /// True when the matrix equals its transpose exactly (bitwise on values).
    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                let mirrored = self.row(c).find(|&(cc, _)| cc == r).map(|(_, vv)| vv);
                if mirrored != Some(v) {
                    return false;
                }
            }
        }
        true
    }
}
