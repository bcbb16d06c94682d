//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Values are computed eagerly through the kernels in [`crate::ops`] as
//! operations are recorded, so the tape's forward values are bit-identical
//! to calling those kernels directly. `backward` walks the tape once in
//! reverse, accumulating vector-Jacobian products into per-node gradient
//! buffers that are allocated only for reachable nodes.
//!
//! Sparse matrices (adjacency operators) and integer metadata (masks, type
//! ids, gather indices, labels) are constants: gradients flow through dense
//! operands only.

use std::rc::Rc;

use crate::ops::{self, NumericError};
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Index of a registered sparse constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseHandle(usize);

/// Reduction applied by the scalar loss ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Matmul(Var, Var),
    MatmulNT(Var, Var),
    Transpose(Var),
    SpmmConst(SparseHandle, Var),
    ScaleRowsByType {
        x: Var,
        w: Var,
        types: Rc<Vec<usize>>,
    },
    GatherRows(Var, Rc<Vec<Option<usize>>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    Reshape(Var),
    LeakyRelu(Var, f64),
    PairwiseSum(Var, Var),
    MaskedSoftmaxRows(Var, Rc<Vec<bool>>),
    Mul(Var, Var),
    Dropout(Var, Rc<Vec<f64>>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    L2NormalizeRows(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Rc<Vec<usize>>,
        reduction: Reduction,
    },
    SigmoidBce {
        logits: Var,
        targets: Rc<Tensor>,
        reduction: Reduction,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sparse: Vec<SparseMatrix>,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes the loss does
/// not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input node. Leaves are where gradients are read out.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Register a sparse constant for use with [`Tape::spmm`].
    pub fn register_sparse(&mut self, m: SparseMatrix) -> SparseHandle {
        self.sparse.push(m);
        SparseHandle(self.sparse.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = ops::scale(self.value(a), c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var, NumericError> {
        let v = ops::add_bias(self.value(m), self.value(bias))?;
        Ok(self.push(v, Op::AddBias(m, bias)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    /// `a @ b.T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = ops::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatmulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    /// Multiply a registered sparse constant by a dense node: `M @ x`.
    pub fn spmm(&mut self, m: SparseHandle, x: Var) -> Result<Var, NumericError> {
        let v = self.sparse[m.0].mul_dense(self.value(x))?;
        Ok(self.push(v, Op::SpmmConst(m, x)))
    }

    /// Scale row `i` of `x` by `w[types[i]]`, differentiable in both `x` and
    /// the per-type weight vector `w`.
    pub fn scale_rows_by_type(
        &mut self,
        x: Var,
        w: Var,
        types: Rc<Vec<usize>>,
    ) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.ndim() != 2 || wv.ndim() != 1 || types.len() != xv.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "scale_rows_by_type",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let n_types = wv.len();
        let mut out = xv.clone();
        for (i, &t) in types.iter().enumerate() {
            if t >= n_types {
                return Err(NumericError::IndexOutOfRange {
                    op: "scale_rows_by_type",
                    index: t,
                    len: n_types,
                });
            }
            let s = wv.data()[t];
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        Ok(self.push(out, Op::ScaleRowsByType { x, w, types }))
    }

    /// Select rows of `x`; `None` yields a zero row (padding).
    pub fn gather_rows(
        &mut self,
        x: Var,
        idx: Rc<Vec<Option<usize>>>,
    ) -> Result<Var, NumericError> {
        let v = ops::gather_rows(self.value(x), &idx)?;
        Ok(self.push(v, Op::GatherRows(x, idx)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_cols(&tensors)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_rows(&tensors)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericError> {
        let v = ops::slice_rows(self.value(x), start, len)?;
        Ok(self.push(v, Op::SliceRows(x, start, len)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(NumericError::BadShape {
                op: "reshape",
                expected: "a shape with matching element count",
                got: shape.to_vec(),
            });
        }
        let v = xv.reshaped(shape);
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = ops::leaky_relu(self.value(x), slope);
        self.push(v, Op::LeakyRelu(x, slope))
    }

    /// All-pairs row sums: `out[i*s+j] = a[i] + b[j]` for `[s,c]` inputs.
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = ops::pairwise_sum(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::PairwiseSum(a, b)))
    }

    /// Row-wise softmax restricted to unmasked columns; masked columns are
    /// exactly zero in the output.
    pub fn masked_softmax_rows(
        &mut self,
        x: Var,
        mask: Rc<Vec<bool>>,
    ) -> Result<Var, NumericError> {
        let v = ops::masked_softmax(self.value(x), &mask)?;
        Ok(self.push(v, Op::MaskedSoftmaxRows(x, mask)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise multiply by a fixed keep/scale mask (inverted dropout:
    /// entries are 0 or 1/(1-p)). The mask is a constant.
    pub fn dropout(&mut self, x: Var, factors: Rc<Vec<f64>>) -> Result<Var, NumericError> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(NumericError::ShapeMismatch {
                op: "dropout",
                lhs: xv.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let data = xv
            .data()
            .iter()
            .zip(factors.iter())
            .map(|(&v, &f)| v * f)
            .collect();
        let v = Tensor::from_vec(xv.shape(), data);
        Ok(self.push(v, Op::Dropout(x, factors)))
    }

    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, NumericError> {
        let v = ops::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, NumericError> {
        let v = ops::l2_normalize_rows(self.value(x))?;
        Ok(self.push(v, Op::L2NormalizeRows(x)))
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: Rc<Vec<usize>>,
        reduction: Reduction,
    ) -> Result<Var, NumericError> {
        let mean = ops::softmax_cross_entropy(self.value(logits), &labels)?;
        let v = match reduction {
            Reduction::Mean => mean,
            Reduction::Sum => mean * labels.len() as f64,
        };
        Ok(self.push(
            Tensor::scalar(v),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                reduction,
            },
        ))
    }

    pub fn sigmoid_bce(
        &mut self,
        logits: Var,
        targets: Rc<Tensor>,
        reduction: Reduction,
    ) -> Result<Var, NumericError> {
        let mean = ops::sigmoid_bce(self.value(logits), &targets)?;
        let v = match reduction {
            Reduction::Mean => mean,
            Reduction::Sum => mean * self.value(logits).len() as f64,
        };
        Ok(self.push(
            Tensor::scalar(v),
            Op::SigmoidBce {
                logits,
                targets,
                reduction,
            },
        ))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(ops::sum_all(self.value(x)));
        self.push(v, Op::Sum(x))
    }

    /// Gradient of the scalar `loss` node with respect to every node on the
    /// tape that it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericError::NonScalarLoss {
                got: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumericError> {
        let acc = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(existing) => {
                    debug_assert_eq!(existing.shape(), delta.shape());
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Scale(a, c) => {
                acc(grads, *a, ops::scale(g, *c));
            }
            Op::AddBias(m, bias) => {
                acc(grads, *m, g.clone());
                acc(grads, *bias, col_sums(g));
            }
            Op::Matmul(a, b) => {
                let da = ops::matmul_nt(g, self.value(*b))?;
                let tb = ops::transpose(self.value(*a))?;
                let db = ops::matmul(&tb, g)?;
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::MatmulNT(a, b) => {
                let da = ops::matmul(g, self.value(*b))?;
                let gt = ops::transpose(g)?;
                let db = ops::matmul(&gt, self.value(*a))?;
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Transpose(a) => {
                acc(grads, *a, ops::transpose(g)?);
            }
            Op::SpmmConst(h, x) => {
                acc(grads, *x, self.sparse[h.0].mul_dense_transposed(g)?);
            }
            Op::ScaleRowsByType { x, w, types } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let mut dx = g.clone();
                let mut dw = Tensor::zeros(wv.shape());
                for (r, &t) in types.iter().enumerate() {
                    let s = wv.data()[t];
                    let grow = g.row(r);
                    let xrow = xv.row(r);
                    dw.data_mut()[t] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    for v in dx.row_mut(r) {
                        *v *= s;
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *w, dw);
            }
            Op::GatherRows(x, idx) => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (r, &ix) in idx.iter().enumerate() {
                    if let Some(src) = ix {
                        let grow = g.row(r).to_vec();
                        for (d, gv) in dx.row_mut(src).iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(grads, p, ops::slice_cols(g, off, w)?);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    acc(grads, p, ops::slice_rows(g, off, r)?);
                    off += r;
                }
            }
            Op::SliceRows(x, start, len) => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let c = dx.cols();
                let flat = dx.data_mut();
                flat[start * c..(start + len) * c].copy_from_slice(g.data());
                acc(grads, *x, dx);
            }
            Op::Reshape(x) => {
                acc(grads, *x, g.reshaped(self.value(*x).shape()));
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { slope * gv })
                    .collect();
                acc(grads, *x, Tensor::from_vec(g.shape(), data));
            }
            Op::PairwiseSum(a, b) => {
                let s = self.value(*a).rows();
                let c = self.value(*a).cols();
                let mut da = Tensor::zeros(&[s, c]);
                let mut db = Tensor::zeros(&[s, c]);
                for i in 0..s {
                    for j in 0..s {
                        let grow = g.row(i * s + j);
                        for (k, &gv) in grow.iter().enumerate() {
                            *da.at_mut(i, k) += gv;
                            *db.at_mut(j, k) += gv;
                        }
                    }
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::MaskedSoftmaxRows(x, mask) => {
                // dX = P .* (G - rowdot(G, P)) on unmasked columns; the
                // stored node value is P itself.
                let p = &self.nodes[i].value;
                let mut dx = Tensor::zeros(p.shape());
                for r in 0..p.rows() {
                    let prow = p.row(r);
                    let grow = g.row(r);
                    let dot: f64 = prow
                        .iter()
                        .zip(grow)
                        .enumerate()
                        .filter(|(j, _)| mask[*j])
                        .map(|(_, (pv, gv))| pv * gv)
                        .sum();
                    let drow = dx.row_mut(r);
                    for j in 0..prow.len() {
                        if mask[j] {
                            drow[j] = prow[j] * (grow[j] - dot);
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, ops::mul(g, self.value(*b))?);
                acc(grads, *b, ops::mul(g, self.value(*a))?);
            }
            Op::Dropout(x, factors) => {
                let data = g
                    .data()
                    .iter()
                    .zip(factors.iter())
                    .map(|(&gv, &f)| gv * f)
                    .collect();
                acc(grads, *x, Tensor::from_vec(g.shape(), data));
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = self.value(*x);
                let gm = self.value(*gamma);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgamma = Tensor::zeros(gm.shape());
                let mut dbeta = Tensor::zeros(gm.shape());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let grow = g.row(r);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = grow
                        .iter()
                        .zip(gm.data())
                        .map(|(&gv, &gmv)| gv * gmv)
                        .collect();
                    let m1 = dxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(&d, &xh)| d * xh)
                        .sum::<f64>()
                        / c as f64;
                    for j in 0..c {
                        *dx.at_mut(r, j) = inv * (dxhat[j] - m1 - xhat[j] * m2);
                        dgamma.data_mut()[j] += grow[j] * xhat[j];
                        dbeta.data_mut()[j] += grow[j];
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dgamma);
                acc(grads, *beta, dbeta);
            }
            Op::L2NormalizeRows(x) => {
                let xv = self.value(*x);
                let yv = &self.nodes[i].value;
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let yrow = yv.row(r);
                    let grow = g.row(r);
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    let drow = dx.row_mut(r);
                    for j in 0..yrow.len() {
                        drow[j] = (grow[j] - dot * yrow[j]) / norm;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                reduction,
            } => {
                let lv = self.value(*logits);
                let probs = ops::softmax_rows(lv)?;
                let factor = g.item()
                    * match reduction {
                        Reduction::Mean => 1.0 / labels.len() as f64,
                        Reduction::Sum => 1.0,
                    };
                let mut dx = probs;
                for (r, &y) in labels.iter().enumerate() {
                    *dx.at_mut(r, y) -= 1.0;
                    for v in dx.row_mut(r) {
                        *v *= factor;
                    }
                }
                acc(grads, *logits, dx);
            }
            Op::SigmoidBce {
                logits,
                targets,
                reduction,
            } => {
                let lv = self.value(*logits);
                let factor = g.item()
                    * match reduction {
                        Reduction::Mean => 1.0 / lv.len() as f64,
                        Reduction::Sum => 1.0,
                    };
                let data = lv
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&z, &t)| {
                        let sig = 1.0 / (1.0 + (-z).exp());
                        factor * (sig - t)
                    })
                    .collect();
                acc(grads, *logits, Tensor::from_vec(lv.shape(), data));
            }
            Op::Sum(x) => {
                acc(grads, *x, Tensor::filled(self.value(*x).shape(), g.item()));
            }
        }
        Ok(())
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let (r, c) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[c]);
    for i in 0..r {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}
