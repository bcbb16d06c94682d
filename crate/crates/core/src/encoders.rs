//! Input encoders: per-type feature projection, local structure
//! aggregation, and relation (type-composition) encoding.
//!
//! All three are expressed as tape builders so they participate in
//! end-to-end differentiation; thin wrappers run them on a scratch tape for
//! plain (inference or test) evaluation. Parameter containers are generic
//! over the slot type: `Tensor` for storage, [`Var`] once bound to a tape.

use std::rc::Rc;

use thiserror::Error;

use crate::graph::{
    build_mean_adjacency, build_normalized_adjacency, build_raw_adjacency, FeatureRow,
    HeteroGraph,
};
use crate::ops::NumericError;
use crate::params::{init_identity_noise, init_uniform};
use crate::sparse::SparseMatrix;
use crate::tape::{SparseHandle, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("projection for node type {ty}: weight shape {got:?}, expected [{expect_rows}, {expect_cols}]")]
    ProjectionShape {
        ty: usize,
        got: Vec<usize>,
        expect_rows: usize,
        expect_cols: usize,
    },
    #[error("{kind:?} structure encoder with K_s={k_s} needs {k_s} layer parameter sets, got {got}")]
    LayerCount {
        kind: StructureKind,
        k_s: usize,
        got: usize,
    },
    #[error("relation encoder: {what} count {got} does not match K_h={k_h}")]
    StepCount {
        what: &'static str,
        k_h: usize,
        got: usize,
    },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

pub const LEAKY_SLOPE: f64 = 0.2;

// ---------------------------------------------------------------------------
// Feature projection
// ---------------------------------------------------------------------------

/// Per-type affine maps into the shared width-d space. `weights[t]` is
/// stored transposed, shape `[d_x(t), d]`, so that one-hot features reduce
/// to a row select; `biases[t]` has shape `[d]`.
#[derive(Debug, Clone)]
pub struct ProjectionParams<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T> ProjectionParams<T> {
    pub fn visit(&self, f: &mut impl FnMut(String, &T)) {
        for (t, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            f(format!("proj.t{t}.weight"), w);
            f(format!("proj.t{t}.bias"), b);
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ProjectionParams<U> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(f(w));
            biases.push(f(b));
        }
        ProjectionParams { weights, biases }
    }
}

impl ProjectionParams<Tensor> {
    pub fn init(seed: u64, g: &HeteroGraph, d: usize) -> Self {
        let mut weights = Vec::with_capacity(g.num_node_types);
        let mut biases = Vec::with_capacity(g.num_node_types);
        for t in 0..g.num_node_types {
            let dx = g.features.width_of_type(t);
            weights.push(init_uniform(
                seed,
                &format!("proj.t{t}.weight"),
                &[dx, d],
                dx,
            ));
            biases.push(Tensor::zeros(&[d]));
        }
        ProjectionParams { weights, biases }
    }
}

fn check_projection_shapes(
    g: &HeteroGraph,
    shapes: &[(Vec<usize>, Vec<usize>)],
    d: usize,
) -> Result<(), EncoderError> {
    for (t, (w, b)) in shapes.iter().enumerate() {
        let dx = g.features.width_of_type(t);
        if w != &[dx, d] || b != &[d] {
            return Err(EncoderError::ProjectionShape {
                ty: t,
                got: w.clone(),
                expect_rows: dx,
                expect_cols: d,
            });
        }
    }
    Ok(())
}

/// Record `h_v = W_{type(v)} x_v + b_{type(v)}` for all nodes; result is
/// `[num_nodes, d]`. One-hot identity types never materialise their
/// feature matrix: their projection is a gather of weight rows.
pub fn build_projection(
    tape: &mut Tape,
    g: &HeteroGraph,
    params: &ProjectionParams<Var>,
    d: usize,
) -> Result<Var, EncoderError> {
    let shapes: Vec<(Vec<usize>, Vec<usize>)> = params
        .weights
        .iter()
        .zip(&params.biases)
        .map(|(&w, &b)| {
            (
                tape.value(w).shape().to_vec(),
                tape.value(b).shape().to_vec(),
            )
        })
        .collect();
    check_projection_shapes(g, &shapes, d)?;

    let n = g.num_nodes;
    let mut total: Option<Var> = None;
    for t in 0..g.num_node_types {
        let ids: Vec<usize> = (0..n).filter(|&v| g.node_type[v] == t).collect();
        if ids.is_empty() {
            continue;
        }
        let projected = if g.features.is_onehot_identity(t) {
            let idx: Rc<Vec<Option<usize>>> = Rc::new(ids.iter().map(|&v| Some(v)).collect());
            tape.gather_rows(params.weights[t], idx)?
        } else {
            let mut x = Tensor::zeros(&[ids.len(), g.features.width_of_type(t)]);
            for (row, &v) in ids.iter().enumerate() {
                match &g.features.rows[v] {
                    FeatureRow::Dense(vals) => x.row_mut(row).copy_from_slice(vals),
                    FeatureRow::OneHot(_) => unreachable!("type {t} is not one-hot"),
                }
            }
            let x = tape.leaf(x);
            tape.matmul(x, params.weights[t])?
        };
        let with_bias = tape.add_bias(projected, params.biases[t])?;

        // Scatter the type's block back to full node order.
        let mut full_idx: Vec<Option<usize>> = vec![None; n];
        for (row, &v) in ids.iter().enumerate() {
            full_idx[v] = Some(row);
        }
        let scattered = tape.gather_rows(with_bias, Rc::new(full_idx))?;
        total = Some(match total {
            None => scattered,
            Some(acc) => tape.add(acc, scattered)?,
        });
    }
    // A graph with zero nodes of every type cannot occur (loaders reject
    // empty node tables), but keep the shape contract total anyway.
    Ok(match total {
        Some(v) => v,
        None => tape.leaf(Tensor::zeros(&[n, d])),
    })
}

/// Plain evaluation of the feature projection.
pub fn project_features(
    g: &HeteroGraph,
    params: &ProjectionParams<Tensor>,
    d: usize,
) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let bound = params.map(&mut |t| tape.leaf(t.clone()));
    let out = build_projection(&mut tape, g, &bound, d)?;
    Ok(tape.value(out).clone())
}

// ---------------------------------------------------------------------------
// Local structure encoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    /// Non-parametric K_s-fold product with the normalised adjacency.
    AdjPower,
    /// Graph-convolution layers: act(Â H W + b).
    Gcn,
    /// Mean-neighbor aggregation with separate self/neighbor transforms.
    SampleAggregate,
    /// Self-inclusive neighbor sum through a two-layer transform.
    SumMlp,
}

impl StructureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StructureKind::AdjPower => "adj-power",
            StructureKind::Gcn => "gcn",
            StructureKind::SampleAggregate => "sample-aggregate",
            StructureKind::SumMlp => "sum-mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "adj-power" => StructureKind::AdjPower,
            "gcn" => StructureKind::Gcn,
            "sample-aggregate" => StructureKind::SampleAggregate,
            "sum-mlp" => StructureKind::SumMlp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub enum StructureLayer<T> {
    Gcn { weight: T, bias: T },
    Sage { w_self: T, w_neigh: T, bias: T },
    Gin { w1: T, b1: T, w2: T, b2: T },
}

#[derive(Debug, Clone)]
pub struct StructureParams<T> {
    pub kind: StructureKind,
    pub k_s: usize,
    /// One entry per aggregation step; empty for [`StructureKind::AdjPower`].
    pub layers: Vec<StructureLayer<T>>,
}

impl<T> StructureParams<T> {
    pub fn visit(&self, f: &mut impl FnMut(String, &T)) {
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                StructureLayer::Gcn { weight, bias } => {
                    f(format!("lse.l{l}.weight"), weight);
                    f(format!("lse.l{l}.bias"), bias);
                }
                StructureLayer::Sage { w_self, w_neigh, bias } => {
                    f(format!("lse.l{l}.w_self"), w_self);
                    f(format!("lse.l{l}.w_neigh"), w_neigh);
                    f(format!("lse.l{l}.bias"), bias);
                }
                StructureLayer::Gin { w1, b1, w2, b2 } => {
                    f(format!("lse.l{l}.w1"), w1);
                    f(format!("lse.l{l}.b1"), b1);
                    f(format!("lse.l{l}.w2"), w2);
                    f(format!("lse.l{l}.b2"), b2);
                }
            }
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> StructureParams<U> {
        StructureParams {
            kind: self.kind,
            k_s: self.k_s,
            layers: self
                .layers
                .iter()
                .map(|layer| match layer {
                    StructureLayer::Gcn { weight, bias } => StructureLayer::Gcn {
                        weight: f(weight),
                        bias: f(bias),
                    },
                    StructureLayer::Sage { w_self, w_neigh, bias } => StructureLayer::Sage {
                        w_self: f(w_self),
                        w_neigh: f(w_neigh),
                        bias: f(bias),
                    },
                    StructureLayer::Gin { w1, b1, w2, b2 } => StructureLayer::Gin {
                        w1: f(w1),
                        b1: f(b1),
                        w2: f(w2),
                        b2: f(b2),
                    },
                })
                .collect(),
        }
    }
}

impl StructureParams<Tensor> {
    pub fn init(seed: u64, kind: StructureKind, k_s: usize, d: usize) -> Self {
        let layers = match kind {
            StructureKind::AdjPower => Vec::new(),
            StructureKind::Gcn => (0..k_s)
                .map(|l| StructureLayer::Gcn {
                    weight: init_uniform(seed, &format!("lse.l{l}.weight"), &[d, d], d),
                    bias: Tensor::zeros(&[d]),
                })
                .collect(),
            StructureKind::SampleAggregate => (0..k_s)
                .map(|l| StructureLayer::Sage {
                    w_self: init_uniform(seed, &format!("lse.l{l}.w_self"), &[d, d], d),
                    w_neigh: init_uniform(seed, &format!("lse.l{l}.w_neigh"), &[d, d], d),
                    bias: Tensor::zeros(&[d]),
                })
                .collect(),
            StructureKind::SumMlp => (0..k_s)
                .map(|l| StructureLayer::Gin {
                    w1: init_uniform(seed, &format!("lse.l{l}.w1"), &[d, d], d),
                    b1: Tensor::zeros(&[d]),
                    w2: init_uniform(seed, &format!("lse.l{l}.w2"), &[d, d], d),
                    b2: Tensor::zeros(&[d]),
                })
                .collect(),
        };
        StructureParams { kind, k_s, layers }
    }
}

/// The aggregation operator each structure kind multiplies by.
pub fn structure_matrix(g: &HeteroGraph, kind: StructureKind, self_loops: bool) -> SparseMatrix {
    match kind {
        StructureKind::AdjPower | StructureKind::Gcn => {
            build_normalized_adjacency(g, self_loops).matrix
        }
        StructureKind::SampleAggregate => build_mean_adjacency(g, false),
        StructureKind::SumMlp => build_raw_adjacency(g, true),
    }
}

/// Default self-loop convention per kind: the literal adjacency power uses
/// the graph as-is; graph-convolution layers add self-loops.
pub fn default_self_loops(kind: StructureKind) -> bool {
    matches!(kind, StructureKind::Gcn)
}

fn check_structure(params: &StructureParams<Var>) -> Result<(), EncoderError> {
    let want = match params.kind {
        StructureKind::AdjPower => 0,
        _ => params.k_s,
    };
    if params.layers.len() != want {
        return Err(EncoderError::LayerCount {
            kind: params.kind,
            k_s: params.k_s,
            got: params.layers.len(),
        });
    }
    Ok(())
}

/// Record K_s aggregation steps over `[n, d]` node states. LeakyReLU(0.2)
/// is applied between steps, never after the last.
pub fn build_structure(
    tape: &mut Tape,
    h: Var,
    agg: SparseHandle,
    params: &StructureParams<Var>,
) -> Result<Var, EncoderError> {
    check_structure(params)?;
    let mut state = h;
    for step in 0..params.k_s {
        state = match params.kind {
            StructureKind::AdjPower => tape.spmm(agg, state)?,
            StructureKind::Gcn => {
                let StructureLayer::Gcn { weight, bias } = &params.layers[step] else {
                    unreachable!("layer kind checked against encoder kind");
                };
                let z = tape.spmm(agg, state)?;
                let z = tape.matmul(z, *weight)?;
                tape.add_bias(z, *bias)?
            }
            StructureKind::SampleAggregate => {
                let StructureLayer::Sage { w_self, w_neigh, bias } = &params.layers[step] else {
                    unreachable!("layer kind checked against encoder kind");
                };
                let own = tape.matmul(state, *w_self)?;
                let mean = tape.spmm(agg, state)?;
                let nbr = tape.matmul(mean, *w_neigh)?;
                let z = tape.add(own, nbr)?;
                tape.add_bias(z, *bias)?
            }
            StructureKind::SumMlp => {
                let StructureLayer::Gin { w1, b1, w2, b2 } = &params.layers[step] else {
                    unreachable!("layer kind checked against encoder kind");
                };
                let summed = tape.spmm(agg, state)?;
                let z = tape.matmul(summed, *w1)?;
                let z = tape.add_bias(z, *b1)?;
                let z = tape.leaky_relu(z, LEAKY_SLOPE);
                let z = tape.matmul(z, *w2)?;
                tape.add_bias(z, *b2)?
            }
        };
        let parametric = !matches!(params.kind, StructureKind::AdjPower);
        if parametric && step + 1 < params.k_s {
            state = tape.leaky_relu(state, LEAKY_SLOPE);
        }
    }
    Ok(state)
}

/// Plain evaluation of the structure encoder on node states `h`.
pub fn encode_structure(
    h: &Tensor,
    g: &HeteroGraph,
    params: &StructureParams<Tensor>,
    self_loops: bool,
) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let agg = tape.register_sparse(structure_matrix(g, params.kind, self_loops));
    let hv = tape.leaf(h.clone());
    let bound = params.map(&mut |t| tape.leaf(t.clone()));
    let out = build_structure(&mut tape, hv, agg, &bound)?;
    Ok(tape.value(out).clone())
}

// ---------------------------------------------------------------------------
// Relation encoder
// ---------------------------------------------------------------------------

/// Normalisation applied to the per-step neighbor sum of the relation
/// encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationNorm {
    /// Row-stochastic mean over the self-inclusive neighborhood (default).
    MeanSelfLoop,
    /// Symmetric D^{-1/2}(A+I)D^{-1/2} normalisation.
    SymmetricSelfLoop,
    /// The literal unnormalised neighbor sum, no self term.
    Raw,
}

impl RelationNorm {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationNorm::MeanSelfLoop => "mean",
            RelationNorm::SymmetricSelfLoop => "sym",
            RelationNorm::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean" => RelationNorm::MeanSelfLoop,
            "sym" => RelationNorm::SymmetricSelfLoop,
            "raw" => RelationNorm::Raw,
            _ => return None,
        })
    }
}

/// K_h steps of type-composition propagation. Per step: a scalar weight per
/// node type (applied to each contributor by its own type) and a square
/// `[T, T]` transform of the incoming encoding.
#[derive(Debug, Clone)]
pub struct RelationParams<T> {
    pub k_h: usize,
    pub step_weights: Vec<T>,
    pub step_transforms: Vec<T>,
}

impl<T> RelationParams<T> {
    pub fn visit(&self, f: &mut impl FnMut(String, &T)) {
        for (s, (w, th)) in self
            .step_weights
            .iter()
            .zip(&self.step_transforms)
            .enumerate()
        {
            f(format!("hre.s{s}.w"), w);
            f(format!("hre.s{s}.theta"), th);
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> RelationParams<U> {
        let mut step_weights = Vec::with_capacity(self.step_weights.len());
        let mut step_transforms = Vec::with_capacity(self.step_transforms.len());
        for (w, th) in self.step_weights.iter().zip(&self.step_transforms) {
            step_weights.push(f(w));
            step_transforms.push(f(th));
        }
        RelationParams {
            k_h: self.k_h,
            step_weights,
            step_transforms,
        }
    }
}

impl RelationParams<Tensor> {
    pub fn init(seed: u64, k_h: usize, num_node_types: usize) -> Self {
        RelationParams {
            k_h,
            step_weights: (0..k_h)
                .map(|_| Tensor::filled(&[num_node_types], 1.0))
                .collect(),
            step_transforms: (0..k_h)
                .map(|s| {
                    init_identity_noise(seed, &format!("hre.s{s}.theta"), num_node_types, 0.01)
                })
                .collect(),
        }
    }
}

/// Aggregation operator for the relation encoder.
pub fn relation_matrix(g: &HeteroGraph, norm: RelationNorm) -> SparseMatrix {
    match norm {
        RelationNorm::MeanSelfLoop => build_mean_adjacency(g, true),
        RelationNorm::SymmetricSelfLoop => build_normalized_adjacency(g, true).matrix,
        RelationNorm::Raw => build_raw_adjacency(g, false),
    }
}

/// The `[n, T]` table of one-hot type indicators, the step-0 encoding.
pub fn one_hot_types(node_type: &[usize], num_node_types: usize) -> Tensor {
    let mut t = Tensor::zeros(&[node_type.len(), num_node_types]);
    for (v, &ty) in node_type.iter().enumerate() {
        *t.at_mut(v, ty) = 1.0;
    }
    t
}

/// Record K_h relation-propagation steps; result is `[n, T]`. Each step
/// transforms the incoming encodings, weighs every contributor by its node
/// type's scalar, and aggregates with the chosen normalisation.
pub fn build_relations(
    tape: &mut Tape,
    node_types: Rc<Vec<usize>>,
    num_node_types: usize,
    agg: SparseHandle,
    params: &RelationParams<Var>,
) -> Result<Var, EncoderError> {
    if params.step_weights.len() != params.k_h {
        return Err(EncoderError::StepCount {
            what: "step weight",
            k_h: params.k_h,
            got: params.step_weights.len(),
        });
    }
    if params.step_transforms.len() != params.k_h {
        return Err(EncoderError::StepCount {
            what: "step transform",
            k_h: params.k_h,
            got: params.step_transforms.len(),
        });
    }
    let mut r = tape.leaf(one_hot_types(&node_types, num_node_types));
    for step in 0..params.k_h {
        let transformed = tape.matmul(r, params.step_transforms[step])?;
        let weighted =
            tape.scale_rows_by_type(transformed, params.step_weights[step], node_types.clone())?;
        r = tape.spmm(agg, weighted)?;
    }
    Ok(r)
}

/// Plain evaluation of the relation encoder.
pub fn encode_relations(
    g: &HeteroGraph,
    params: &RelationParams<Tensor>,
    norm: RelationNorm,
) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let agg = tape.register_sparse(relation_matrix(g, norm));
    let bound = params.map(&mut |t| tape.leaf(t.clone()));
    let out = build_relations(
        &mut tape,
        Rc::new(g.node_type.clone()),
        g.num_node_types,
        agg,
        &bound,
    )?;
    Ok(tape.value(out).clone())
}
