//! Classification metrics: micro and macro F1 over single-label or
//! multi-label predictions, plus the decision helpers that turn logits into
//! hard predictions.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot score an empty prediction set")]
    Empty,
    #[error("prediction count {pred} does not match truth count {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("class {got} out of range for {num_classes} classes")]
    ClassOutOfRange { got: usize, num_classes: usize },
    #[error("label vector holds {got} classes, expected {want}")]
    LabelWidth { got: usize, want: usize },
}

/// Scores of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Scores {
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct ClassCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn scores_from_counts(counts: &[ClassCounts]) -> F1Scores {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut macro_sum = 0.0;
    for c in counts {
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
        let denom = 2 * c.tp + c.fp + c.fn_;
        if denom > 0 {
            macro_sum += 2.0 * c.tp as f64 / denom as f64;
        }
        // Classes with no truth and no predictions contribute 0.
    }
    let micro_denom = 2 * tp + fp + fn_;
    F1Scores {
        micro_f1: if micro_denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / micro_denom as f64
        },
        macro_f1: macro_sum / counts.len() as f64,
    }
}

/// F1 for single-label predictions: micro pools the confusion counts over
/// all classes, macro averages per-class F1 unweighted.
pub fn f1_multiclass(
    pred: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<F1Scores, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut counts = vec![ClassCounts::default(); num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for &c in [p, t].iter() {
            if c >= num_classes {
                return Err(MetricsError::ClassOutOfRange {
                    got: c,
                    num_classes,
                });
            }
        }
        if p == t {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    Ok(scores_from_counts(&counts))
}

/// F1 for multi-label predictions given per-class indicator vectors.
pub fn f1_multilabel(
    pred: &[Vec<bool>],
    truth: &[Vec<bool>],
    num_classes: usize,
) -> Result<F1Scores, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut counts = vec![ClassCounts::default(); num_classes];
    for (p, t) in pred.iter().zip(truth) {
        for v in [p, t] {
            if v.len() != num_classes {
                return Err(MetricsError::LabelWidth {
                    got: v.len(),
                    want: num_classes,
                });
            }
        }
        for c in 0..num_classes {
            match (p[c], t[c]) {
                (true, true) => counts[c].tp += 1,
                (true, false) => counts[c].fp += 1,
                (false, true) => counts[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(scores_from_counts(&counts))
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Multi-label decisions: sigmoid(logit) >= 0.5, i.e. logit >= 0.
pub fn threshold_rows(logits: &Tensor) -> Vec<Vec<bool>> {
    (0..logits.rows())
        .map(|i| logits.row(i).iter().map(|&v| v >= 0.0).collect())
        .collect()
}
