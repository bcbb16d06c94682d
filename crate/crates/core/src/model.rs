//! The assembled model: feature projection, optional structure and relation
//! encoders, the attention stack, and the linear prediction head, wired
//! into a single differentiable batch graph.
//!
//! Per batch, the graph-level encoders run once over all nodes; each
//! context sequence then gathers its rows, flows through the shared layer
//! stack, and contributes its readout row to the batched head input.

use std::rc::Rc;

use thiserror::Error;

use crate::encoders::{
    build_projection, build_relations, build_structure, default_self_loops, relation_matrix,
    structure_matrix, EncoderError, ProjectionParams, RelationNorm, RelationParams,
    StructureKind, StructureParams,
};
use crate::graph::HeteroGraph;
use crate::layers::{
    build_stack, init_stack, AttentionConfig, AttentionMechanism, DropoutSource, LayerError,
    LayerParams,
};
use crate::ops::{self, NumericError};
use crate::params::{init_uniform, ParamSet};
use crate::sampler::{ContextSequence, PAD};
use crate::sparse::SparseMatrix;
use crate::tape::{Reduction, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {what} must be positive")]
    ZeroCount { what: &'static str },
    #[error("batch holds no sequences")]
    EmptyBatch,
    #[error("sequence for node {node} has length {got}, batch expects {want}")]
    MixedSequenceLength { node: usize, want: usize, got: usize },
    #[error("batch carries {targets} targets for {sequences} sequences")]
    TargetCount { targets: usize, sequences: usize },
    #[error("label {got} out of range for {num_classes} classes")]
    LabelOutOfRange { got: usize, num_classes: usize },
    #[error("target kind does not match the multilabel flag ({multilabel})")]
    TargetKind { multilabel: bool },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Architecture description, independent of the optimization setup.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub d: usize,
    pub num_layers: usize,
    pub n_h: usize,
    pub beta: f64,
    pub mechanism: AttentionMechanism,
    pub use_ffn: bool,
    pub structure_kind: StructureKind,
    pub k_s: usize,
    pub k_h: usize,
    pub relation_norm: RelationNorm,
    /// Skip the structure encoder; sequences read projected features.
    pub no_lse: bool,
    /// Skip the relation encoder and with it the relational bias.
    pub no_hre: bool,
    pub num_classes: usize,
    pub multilabel: bool,
}

impl ModelConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            mechanism: self.mechanism,
            n_h: self.n_h,
            d: self.d,
            beta: self.beta,
            use_relational_bias: !self.no_hre,
            use_ffn: self.use_ffn,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (what, v) in [
            ("model width d", self.d),
            ("layer count L", self.num_layers),
            ("head count n_h", self.n_h),
            ("class count", self.num_classes),
        ] {
            if v == 0 {
                return Err(ModelError::ZeroCount { what });
            }
        }
        self.attention().validate()?;
        Ok(())
    }
}

/// All learnable state, generic over the slot type (`Tensor` in storage,
/// `Var` once bound to a tape). `visit` and `map` traverse in the same
/// fixed order; the flat parameter set is built and re-bound through them.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub projection: ProjectionParams<T>,
    pub structure: Option<StructureParams<T>>,
    pub relation: Option<RelationParams<T>>,
    pub stack: Vec<LayerParams<T>>,
    pub head_weight: T,
    pub head_bias: T,
}

impl<T> ModelParams<T> {
    pub fn visit(&self, f: &mut impl FnMut(String, &T)) {
        self.projection.visit(f);
        if let Some(s) = &self.structure {
            s.visit(f);
        }
        if let Some(r) = &self.relation {
            r.visit(f);
        }
        for (l, layer) in self.stack.iter().enumerate() {
            layer.visit(&format!("layer{l}"), f);
        }
        f("head.weight".to_string(), &self.head_weight);
        f("head.bias".to_string(), &self.head_bias);
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            projection: self.projection.map(f),
            structure: self.structure.as_ref().map(|s| s.map(f)),
            relation: self.relation.as_ref().map(|r| r.map(f)),
            stack: self.stack.iter().map(|l| l.map(f)).collect(),
            head_weight: f(&self.head_weight),
            head_bias: f(&self.head_bias),
        }
    }
}

impl ModelParams<Tensor> {
    pub fn init(seed: u64, g: &HeteroGraph, cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(ModelParams {
            projection: ProjectionParams::init(seed, g, cfg.d),
            structure: (!cfg.no_lse)
                .then(|| StructureParams::init(seed, cfg.structure_kind, cfg.k_s, cfg.d)),
            relation: (!cfg.no_hre).then(|| RelationParams::init(seed, cfg.k_h, g.num_node_types)),
            stack: init_stack(seed, cfg.num_layers, &cfg.attention(), g.num_node_types),
            head_weight: init_uniform(seed, "head.weight", &[cfg.d, cfg.num_classes], cfg.d),
            head_bias: Tensor::zeros(&[cfg.num_classes]),
        })
    }

    /// Flatten into the ordered parameter set the optimizer works on.
    pub fn param_set(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        self.visit(&mut |name, t| {
            ps.push(name, t.clone());
        });
        ps
    }

    /// Rebuild a value struct from an updated flat set, using this instance
    /// as the structural template. Counts must match.
    pub fn with_values_from(&self, ps: &ParamSet) -> ModelParams<Tensor> {
        let mut i = 0;
        let out = self.map(&mut |_| {
            let t = ps.get(i).value.clone();
            i += 1;
            t
        });
        assert_eq!(i, ps.len(), "parameter set does not match model layout");
        out
    }
}

/// Bind a flat parameter set onto a tape and rebuild the model view over
/// the resulting leaf variables. Returns the vars in set order as well.
pub fn bind_model(
    tape: &mut Tape,
    ps: &ParamSet,
    template: &ModelParams<Tensor>,
) -> (ModelParams<Var>, Vec<Var>) {
    let vars = ps.bind(tape);
    let mut i = 0;
    let bound = template.map(&mut |_| {
        let v = vars[i];
        i += 1;
        v
    });
    assert_eq!(i, vars.len(), "parameter set does not match model layout");
    (bound, vars)
}

/// Sparse operators the encoders aggregate with, precomputed once per
/// (graph, config) pair and cloned onto each batch tape.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub structure: Option<SparseMatrix>,
    pub relation: Option<SparseMatrix>,
    pub node_types: Rc<Vec<usize>>,
}

impl GraphOperators {
    pub fn new(g: &HeteroGraph, cfg: &ModelConfig) -> Self {
        GraphOperators {
            structure: (!cfg.no_lse && cfg.k_s > 0).then(|| {
                structure_matrix(g, cfg.structure_kind, default_self_loops(cfg.structure_kind))
            }),
            relation: (!cfg.no_hre).then(|| relation_matrix(g, cfg.relation_norm)),
            node_types: Rc::new(g.node_type.clone()),
        }
    }
}

/// Ground truth for one batch, matching the loss mode.
#[derive(Debug, Clone)]
pub enum BatchTargets {
    /// One class id per sequence.
    Classes(Vec<usize>),
    /// `[B, C]` 0/1 indicator rows.
    Indicator(Tensor),
}

#[derive(Debug)]
pub struct ForwardBuild {
    /// `[B, d]` readout rows.
    pub readouts: Var,
    /// `[B, C]` head outputs before normalization.
    pub raw_logits: Var,
    /// `[B, C]` L2-normalized logits.
    pub normalized: Var,
}

#[derive(Debug)]
pub struct BatchBuild {
    pub forward: ForwardBuild,
    /// Scalar loss node, already scaled for accumulation.
    pub loss: Var,
}

fn gather_index(seq: &ContextSequence) -> Rc<Vec<Option<usize>>> {
    Rc::new(
        seq.nodes
            .iter()
            .map(|&v| if v == PAD { None } else { Some(v) })
            .collect(),
    )
}

/// Record the full forward pass for a batch of context sequences, through
/// the normalized head outputs. Dropout (when supplied) applies to the
/// projected features and, inside the layers, to attention weights.
pub fn build_forward(
    tape: &mut Tape,
    g: &HeteroGraph,
    graph_ops: &GraphOperators,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    seqs: &[&ContextSequence],
    mut dropout: Option<&mut DropoutSource>,
) -> Result<ForwardBuild, ModelError> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let s = seqs[0].nodes.len();
    for seq in seqs {
        if seq.nodes.len() != s {
            return Err(ModelError::MixedSequenceLength {
                node: seq.target,
                want: s,
                got: seq.nodes.len(),
            });
        }
    }

    // Graph-level encoders, once per tape.
    let mut h = build_projection(tape, g, &params.projection, cfg.d)?;
    if let Some(src) = dropout.as_deref_mut() {
        if src.active() {
            let n = tape.value(h).len();
            let factors = src.factors(n);
            h = tape.dropout(h, factors)?;
        }
    }
    if let Some(sp) = &params.structure {
        if sp.k_s > 0 {
            let mat = graph_ops
                .structure
                .as_ref()
                .expect("structure operator present when K_s > 0")
                .clone();
            let agg = tape.register_sparse(mat);
            h = build_structure(tape, h, agg, sp)?;
        }
    }
    let r_full = match &params.relation {
        Some(rp) => {
            let mat = graph_ops
                .relation
                .as_ref()
                .expect("relation operator present when the encoder is on")
                .clone();
            let agg = tape.register_sparse(mat);
            Some(build_relations(
                tape,
                graph_ops.node_types.clone(),
                g.num_node_types,
                agg,
                rp,
            )?)
        }
        None => None,
    };
    // With the relation encoder off no head reads the relational rows; a
    // shared zero block keeps the layer signature uniform.
    let r_stub = match r_full {
        Some(_) => None,
        None => Some(tape.leaf(Tensor::zeros(&[s, g.num_node_types]))),
    };

    let attention = cfg.attention();
    let mut rows = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let idx = gather_index(seq);
        let h_seq = tape.gather_rows(h, idx.clone())?;
        let r_seq = match r_full {
            Some(r) => tape.gather_rows(r, idx)?,
            None => r_stub.expect("stub present when relation encoder is off"),
        };
        let mask = Rc::new(seq.mask.clone());
        let trace = build_stack(
            tape,
            h_seq,
            r_seq,
            mask,
            &attention,
            &params.stack,
            dropout.as_deref_mut(),
        )?;
        rows.push(tape.slice_rows(trace.output, 0, 1)?);
    }
    let readouts = if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat_rows(&rows)?
    };

    let scored = tape.matmul(readouts, params.head_weight)?;
    let raw_logits = tape.add_bias(scored, params.head_bias)?;
    for i in 0..tape.value(raw_logits).rows() {
        if tape.value(raw_logits).row(i).iter().all(|&v| v == 0.0) {
            log::warn!(
                "prediction head produced an all-zero row for target {}; normalization keeps it zero",
                seqs[i].target
            );
        }
    }
    let normalized = tape.l2_normalize_rows(raw_logits)?;
    Ok(ForwardBuild {
        readouts,
        raw_logits,
        normalized,
    })
}

fn check_targets(
    targets: &BatchTargets,
    batch: usize,
    cfg: &ModelConfig,
) -> Result<(), ModelError> {
    match targets {
        BatchTargets::Classes(classes) => {
            if cfg.multilabel {
                return Err(ModelError::TargetKind { multilabel: true });
            }
            if classes.len() != batch {
                return Err(ModelError::TargetCount {
                    targets: classes.len(),
                    sequences: batch,
                });
            }
            for &c in classes {
                if c >= cfg.num_classes {
                    return Err(ModelError::LabelOutOfRange {
                        got: c,
                        num_classes: cfg.num_classes,
                    });
                }
            }
        }
        BatchTargets::Indicator(t) => {
            if !cfg.multilabel {
                return Err(ModelError::TargetKind { multilabel: false });
            }
            if t.ndim() != 2 || t.rows() != batch || t.cols() != cfg.num_classes {
                return Err(ModelError::TargetCount {
                    targets: t.rows(),
                    sequences: batch,
                });
            }
        }
    }
    Ok(())
}

/// Record forward pass plus loss. The loss node uses sum reduction
/// internally and is multiplied by `loss_scale`, so chunked batches
/// accumulate to the intended reduction: pass 1/|batch| for a mean over
/// target nodes, 1.0 for the literal sum.
pub fn build_batch(
    tape: &mut Tape,
    g: &HeteroGraph,
    graph_ops: &GraphOperators,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    seqs: &[&ContextSequence],
    targets: &BatchTargets,
    loss_scale: f64,
    dropout: Option<&mut DropoutSource>,
) -> Result<BatchBuild, ModelError> {
    check_targets(targets, seqs.len(), cfg)?;
    let forward = build_forward(tape, g, graph_ops, params, cfg, seqs, dropout)?;
    let summed = match targets {
        BatchTargets::Classes(classes) => {
            tape.softmax_cross_entropy(forward.normalized, Rc::new(classes.clone()), Reduction::Sum)?
        }
        BatchTargets::Indicator(t) => {
            tape.sigmoid_bce(forward.normalized, Rc::new(t.clone()), Reduction::Sum)?
        }
    };
    let loss = if loss_scale == 1.0 {
        summed
    } else {
        tape.scale(summed, loss_scale)
    };
    Ok(BatchBuild { forward, loss })
}

/// Plain forward evaluation: normalized `[B, C]` logits, dropout off.
pub fn forward_logits(
    g: &HeteroGraph,
    graph_ops: &GraphOperators,
    params: &ModelParams<Tensor>,
    cfg: &ModelConfig,
    seqs: &[&ContextSequence],
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let bound = params.map(&mut |t| tape.leaf(t.clone()));
    let fwd = build_forward(&mut tape, g, graph_ops, &bound, cfg, seqs, None)?;
    Ok(tape.value(fwd.normalized).clone())
}

/// The prediction head on one readout vector: linear map to class scores,
/// then scaled to unit Euclidean norm. An all-zero linear output is kept
/// zero (and logged) rather than divided by zero.
pub fn predict(
    h_v: &Tensor,
    head_weight: &Tensor,
    head_bias: &Tensor,
) -> Result<Tensor, ModelError> {
    let row = if h_v.ndim() == 1 {
        h_v.reshaped(&[1, h_v.len()])
    } else {
        h_v.clone()
    };
    let scored = ops::matmul(&row, head_weight)?;
    let raw = ops::add_bias(&scored, head_bias)?;
    if raw.data().iter().all(|&v| v == 0.0) {
        log::warn!("prediction head produced an all-zero score vector");
    }
    let normalized = ops::l2_normalize_rows(&raw)?;
    Ok(Tensor::from_vec(
        &[normalized.cols()],
        normalized.data().to_vec(),
    ))
}

/// Softmax cross-entropy of one normalized prediction against a class id.
pub fn loss_multiclass(pred: &Tensor, label: usize) -> Result<f64, ModelError> {
    let c = pred.len();
    if label >= c {
        return Err(ModelError::LabelOutOfRange {
            got: label,
            num_classes: c,
        });
    }
    let row = pred.reshaped(&[1, c]);
    Ok(ops::softmax_cross_entropy(&row, &[label])?)
}

/// Sigmoid binary cross-entropy of one normalized prediction against a
/// positive-class indicator, summed over classes.
pub fn loss_multilabel(pred: &Tensor, positives: &[bool]) -> Result<f64, ModelError> {
    let c = pred.len();
    if positives.len() != c {
        return Err(ModelError::TargetCount {
            targets: positives.len(),
            sequences: c,
        });
    }
    let row = pred.reshaped(&[1, c]);
    let targets = Tensor::from_vec(
        &[1, c],
        positives.iter().map(|&p| p as u8 as f64).collect(),
    );
    // The kernel returns the mean over elements; the per-node loss sums
    // over classes.
    Ok(ops::sigmoid_bce(&row, &targets)? * c as f64)
}
