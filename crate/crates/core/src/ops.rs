//! Plain (non-differentiable) tensor operations.
//!
//! These kernels are the single source of forward truth: the autodiff tape
//! calls the same functions when it records an op, so a value computed "by
//! hand" with these helpers is bit-identical to the value the tape produces.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("masked softmax: every key is masked out")]
    AllMasked,
    #[error("backward requires a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },
    #[error("{op}: index {index} out of range ({len} rows)")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
}

fn want_matrix(op: &'static str, t: &Tensor) -> Result<(), NumericError> {
    if t.ndim() != 2 {
        return Err(NumericError::BadShape {
            op,
            expected: "a matrix",
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// `a @ b` for `[m,k] x [k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    want_matrix("matmul", a)?;
    want_matrix("matmul", b)?;
    if a.cols() != b.rows() {
        return Err(NumericError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a @ b.T` for `[m,k] x [n,k]`, without materialising the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    want_matrix("matmul_nt", a)?;
    want_matrix("matmul_nt", b)?;
    if a.cols() != b.cols() {
        return Err(NumericError::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, n) = (a.rows(), b.rows());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *out.at_mut(i, j) = acc;
        }
    }
    Ok(out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor, NumericError> {
    want_matrix("transpose", a)?;
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            *out.at_mut(j, i) = a.at(i, j);
        }
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    if a.shape() != b.shape() {
        return Err(NumericError::ShapeMismatch {
            op: "add",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_vec(a.shape(), data))
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    if a.shape() != b.shape() {
        return Err(NumericError::ShapeMismatch {
            op: "mul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_vec(a.shape(), data))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|x| c * x)
}

/// Add a `[c]` bias vector to every row of an `[r,c]` matrix.
pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor, NumericError> {
    want_matrix("add_bias", a)?;
    if bias.shape() != [a.cols()] {
        return Err(NumericError::ShapeMismatch {
            op: "add_bias",
            lhs: a.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut out = a.clone();
    let c = a.cols();
    for i in 0..a.rows() {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn leaky_relu(a: &Tensor, slope: f64) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { slope * x })
}

/// Row-wise softmax over the columns of `x`, restricted to unmasked columns.
///
/// The mask is shared by every row: `mask[j] == false` forces column `j` to
/// exactly 0 in every output row and excludes it from the normalisation.
/// Masked entries never enter the arithmetic, so `x` may hold any finite
/// values there. Errors when no column is valid.
pub fn masked_softmax(x: &Tensor, mask: &[bool]) -> Result<Tensor, NumericError> {
    want_matrix("masked_softmax", x)?;
    if mask.len() != x.cols() {
        return Err(NumericError::ShapeMismatch {
            op: "masked_softmax",
            lhs: x.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(NumericError::AllMasked);
    }
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let row = x.row(i);
        let mut hi = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if mask[j] && v > hi {
                hi = v;
            }
        }
        let mut denom = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if mask[j] {
                denom += (v - hi).exp();
            }
        }
        let orow = out.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            if mask[j] {
                orow[j] = (v - hi).exp() / denom;
            }
        }
    }
    Ok(out)
}

/// Row-wise layer normalisation with a learned affine map.
///
/// Each row is centred and divided by `sqrt(var + eps)` where `var` is the
/// population variance of the row, then scaled and shifted per column.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor, NumericError> {
    want_matrix("layer_norm", x)?;
    let c = x.cols();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(NumericError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let orow = out.row_mut(i);
        for j in 0..c {
            orow[j] = (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok(out)
}

/// Scale each row of `x` to unit Euclidean norm. All-zero rows are left as
/// zeros rather than dividing by zero.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor, NumericError> {
    want_matrix("l2_normalize_rows", x)?;
    let mut out = x.clone();
    let c = x.cols();
    for i in 0..x.rows() {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Ok(out)
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
    if parts.is_empty() {
        return Err(NumericError::BadShape {
            op: "concat_cols",
            expected: "at least one part",
            got: vec![0],
        });
    }
    for p in parts {
        want_matrix("concat_cols", p)?;
    }
    let r = parts[0].rows();
    let mut total_c = 0;
    for p in parts {
        if p.rows() != r {
            return Err(NumericError::ShapeMismatch {
                op: "concat_cols",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        total_c += p.cols();
    }
    let mut out = Tensor::zeros(&[r, total_c]);
    for i in 0..r {
        let orow = out.row_mut(i);
        let mut off = 0;
        for p in parts {
            let prow = p.row(i);
            orow[off..off + prow.len()].copy_from_slice(prow);
            off += prow.len();
        }
    }
    Ok(out)
}

/// Vertical concatenation of matrices with equal column counts.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
    if parts.is_empty() {
        return Err(NumericError::BadShape {
            op: "concat_rows",
            expected: "at least one part",
            got: vec![0],
        });
    }
    for p in parts {
        want_matrix("concat_rows", p)?;
    }
    let c = parts[0].cols();
    let mut total_r = 0;
    for p in parts {
        if p.cols() != c {
            return Err(NumericError::ShapeMismatch {
                op: "concat_rows",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        total_r += p.rows();
    }
    let mut data = Vec::with_capacity(total_r * c);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_vec(&[total_r, c], data))
}

/// Contiguous row slice `[start, start+len)`.
pub fn slice_rows(x: &Tensor, start: usize, len: usize) -> Result<Tensor, NumericError> {
    want_matrix("slice_rows", x)?;
    if start + len > x.rows() {
        return Err(NumericError::IndexOutOfRange {
            op: "slice_rows",
            index: start + len,
            len: x.rows(),
        });
    }
    let c = x.cols();
    let data = x.data()[start * c..(start + len) * c].to_vec();
    Ok(Tensor::from_vec(&[len, c], data))
}

/// Contiguous column slice `[start, start+len)`.
pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Result<Tensor, NumericError> {
    want_matrix("slice_cols", x)?;
    if start + len > x.cols() {
        return Err(NumericError::IndexOutOfRange {
            op: "slice_cols",
            index: start + len,
            len: x.cols(),
        });
    }
    let mut out = Tensor::zeros(&[x.rows(), len]);
    for i in 0..x.rows() {
        let row = x.row(i);
        out.row_mut(i).copy_from_slice(&row[start..start + len]);
    }
    Ok(out)
}

/// Select rows of `x` by index. `None` selects an all-zero row, which is how
/// padded sequence positions are materialised.
pub fn gather_rows(x: &Tensor, idx: &[Option<usize>]) -> Result<Tensor, NumericError> {
    want_matrix("gather_rows", x)?;
    let c = x.cols();
    let mut out = Tensor::zeros(&[idx.len(), c]);
    for (i, &ix) in idx.iter().enumerate() {
        if let Some(r) = ix {
            if r >= x.rows() {
                return Err(NumericError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    len: x.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(x.row(r));
        }
    }
    Ok(out)
}

/// `pairwise_sum(a, b)[i*s + j] = a[i] + b[j]` for `[s,c]` inputs, giving the
/// `[s*s, c]` table of all row sums. This is the vectorised form of scoring
/// every (query, key) pair from per-node query and key rows.
pub fn pairwise_sum(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    want_matrix("pairwise_sum", a)?;
    if a.shape() != b.shape() {
        return Err(NumericError::ShapeMismatch {
            op: "pairwise_sum",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (s, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[s * s, c]);
    for i in 0..s {
        let arow = a.row(i);
        for j in 0..s {
            let brow = b.row(j);
            let orow = out.row_mut(i * s + j);
            for k in 0..c {
                orow[k] = arow[k] + brow[k];
            }
        }
    }
    Ok(out)
}

pub fn sum_all(x: &Tensor) -> f64 {
    x.data().iter().sum()
}

/// Row-wise numerically stable softmax (no mask).
pub fn softmax_rows(x: &Tensor) -> Result<Tensor, NumericError> {
    let mask = vec![true; x.cols()];
    masked_softmax(x, &mask)
}

/// Mean softmax cross-entropy of `logits` `[n, classes]` against integer
/// class labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64, NumericError> {
    want_matrix("softmax_cross_entropy", logits)?;
    if labels.len() != logits.rows() {
        return Err(NumericError::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let c = logits.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(NumericError::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: y,
                len: c,
            });
        }
        let row = logits.row(i);
        let hi = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - hi).exp()).sum::<f64>().ln() + hi;
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Mean sigmoid binary cross-entropy of `logits` against 0/1 `targets` of the
/// same shape, averaged over every element. Uses the log-sum-exp form, which
/// is exact for large-magnitude logits.
pub fn sigmoid_bce(logits: &Tensor, targets: &Tensor) -> Result<f64, NumericError> {
    if logits.shape() != targets.shape() {
        return Err(NumericError::ShapeMismatch {
            op: "sigmoid_bce",
            lhs: logits.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    let mut total = 0.0;
    for (&z, &t) in logits.data().iter().zip(targets.data()) {
        // log(1 + e^-|z|) + max(z, 0) - z*t
        total += (-z.abs()).exp().ln_1p() + z.max(0.0) - z * t;
    }
    Ok(total / logits.len() as f64)
}
