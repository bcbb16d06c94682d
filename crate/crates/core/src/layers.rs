//! Global-attention core: score mechanisms, relational bias, FFN-free
//! Transformer layers with residual + layer norm, and the target readout.
//!
//! Attention is computed over all pairs of positions in a sampled context
//! sequence, not over graph edges; padding positions are excluded through a
//! key mask. Layers drop the usual feed-forward block: one attention
//! sub-layer, one residual, one layer norm. A conventional FFN block can be
//! re-enabled for the dot-product baseline.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ops::{self, NumericError};
use crate::params::init_uniform;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const ATTN_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("attention config: width {d} is not divisible by head count {n_h}")]
    WidthSplit { d: usize, n_h: usize },
    #[error("attention config: relational-bias weight must be non-negative, got {beta}")]
    NegativeBeta { beta: f64 },
    #[error("attention config: the feed-forward block is only supported with dot-product attention")]
    FfnMechanism,
    #[error("layer {layer}: config wants {want} heads, parameters carry {got}")]
    HeadCount { layer: usize, want: usize, got: usize },
    #[error("layer {layer} head {head}: score parameters are for {got}, config wants {want}")]
    MechanismMismatch {
        layer: usize,
        head: usize,
        want: &'static str,
        got: &'static str,
    },
    #[error("layer {layer} head {head}: relational projections present={have}, use_relational_bias={want}")]
    RelationalMismatch { layer: usize, head: usize, have: bool, want: bool },
    #[error("layer {layer}: FFN parameters present={have}, use_ffn={want}")]
    FfnMismatch { layer: usize, have: bool, want: bool },
    #[error("stack_forward needs at least one layer")]
    EmptyStack,
    #[error("attention map holds {heads} heads, parameters carry {got}")]
    MapHeadCount { heads: usize, got: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMechanism {
    GatV2,
    Gat,
    DotProduct,
}

impl AttentionMechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionMechanism::GatV2 => "gatv2",
            AttentionMechanism::Gat => "gat",
            AttentionMechanism::DotProduct => "dot-product",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gatv2" => AttentionMechanism::GatV2,
            "gat" => AttentionMechanism::Gat,
            "dot-product" | "dot" => AttentionMechanism::DotProduct,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub mechanism: AttentionMechanism,
    pub n_h: usize,
    pub d: usize,
    pub beta: f64,
    pub use_relational_bias: bool,
    pub use_ffn: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), LayerError> {
        if self.n_h == 0 || self.d % self.n_h != 0 {
            return Err(LayerError::WidthSplit {
                d: self.d,
                n_h: self.n_h,
            });
        }
        if self.beta < 0.0 {
            return Err(LayerError::NegativeBeta { beta: self.beta });
        }
        if self.use_ffn && self.mechanism != AttentionMechanism::DotProduct {
            return Err(LayerError::FfnMechanism);
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_h
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Score parameters for one attention head. Projection matrices are stored
/// transposed (`[d, d_h]`) so sequences multiply from the left.
#[derive(Debug, Clone)]
pub enum ScoreParams<T> {
    /// score(i,j) = aᵀ LeakyReLU(W_l h_i + W_r h_j)
    GatV2 { w_l: T, w_r: T, a: T },
    /// score(i,j) = LeakyReLU(a_l·(W h_i) + a_r·(W h_j))
    Gat { w: T, a_l: T, a_r: T },
    /// score(i,j) = (W_Q h_i)·(W_K h_j) / sqrt(d_h)
    Dot { w_q: T, w_k: T },
}

impl<T> ScoreParams<T> {
    pub fn mechanism(&self) -> AttentionMechanism {
        match self {
            ScoreParams::GatV2 { .. } => AttentionMechanism::GatV2,
            ScoreParams::Gat { .. } => AttentionMechanism::Gat,
            ScoreParams::Dot { .. } => AttentionMechanism::DotProduct,
        }
    }
}

/// Per-head projections of the relational encodings, `[T_v, T_v]` each,
/// stored transposed and applied as `r_i @ W`.
#[derive(Debug, Clone)]
pub struct RelProj<T> {
    pub w_qr: T,
    pub w_kr: T,
}

#[derive(Debug, Clone)]
pub struct HeadParams<T> {
    pub score: ScoreParams<T>,
    pub w_v: T,
    /// Present exactly when the config enables the relational bias.
    pub rel: Option<RelProj<T>>,
}

#[derive(Debug, Clone)]
pub struct FfnParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
    pub ln_scale: T,
    pub ln_shift: T,
}

#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub heads: Vec<HeadParams<T>>,
    /// Merge of the concatenated heads back to width d, `[d, d]`.
    pub w_o: T,
    pub ln_scale: T,
    pub ln_shift: T,
    /// Present exactly when the config enables the baseline FFN block.
    pub ffn: Option<FfnParams<T>>,
}

impl<T> LayerParams<T> {
    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &T)) {
        for (h, head) in self.heads.iter().enumerate() {
            match &head.score {
                ScoreParams::GatV2 { w_l, w_r, a } => {
                    f(format!("{prefix}.head{h}.w_l"), w_l);
                    f(format!("{prefix}.head{h}.w_r"), w_r);
                    f(format!("{prefix}.head{h}.a"), a);
                }
                ScoreParams::Gat { w, a_l, a_r } => {
                    f(format!("{prefix}.head{h}.w"), w);
                    f(format!("{prefix}.head{h}.a_l"), a_l);
                    f(format!("{prefix}.head{h}.a_r"), a_r);
                }
                ScoreParams::Dot { w_q, w_k } => {
                    f(format!("{prefix}.head{h}.w_q"), w_q);
                    f(format!("{prefix}.head{h}.w_k"), w_k);
                }
            }
            f(format!("{prefix}.head{h}.w_v"), &head.w_v);
            if let Some(rel) = &head.rel {
                f(format!("{prefix}.head{h}.w_qr"), &rel.w_qr);
                f(format!("{prefix}.head{h}.w_kr"), &rel.w_kr);
            }
        }
        f(format!("{prefix}.w_o"), &self.w_o);
        f(format!("{prefix}.ln.scale"), &self.ln_scale);
        f(format!("{prefix}.ln.shift"), &self.ln_shift);
        if let Some(ffn) = &self.ffn {
            f(format!("{prefix}.ffn.w1"), &ffn.w1);
            f(format!("{prefix}.ffn.b1"), &ffn.b1);
            f(format!("{prefix}.ffn.w2"), &ffn.w2);
            f(format!("{prefix}.ffn.b2"), &ffn.b2);
            f(format!("{prefix}.ffn.ln.scale"), &ffn.ln_scale);
            f(format!("{prefix}.ffn.ln.shift"), &ffn.ln_shift);
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerParams<U> {
        LayerParams {
            heads: self
                .heads
                .iter()
                .map(|head| HeadParams {
                    score: match &head.score {
                        ScoreParams::GatV2 { w_l, w_r, a } => ScoreParams::GatV2 {
                            w_l: f(w_l),
                            w_r: f(w_r),
                            a: f(a),
                        },
                        ScoreParams::Gat { w, a_l, a_r } => ScoreParams::Gat {
                            w: f(w),
                            a_l: f(a_l),
                            a_r: f(a_r),
                        },
                        ScoreParams::Dot { w_q, w_k } => ScoreParams::Dot {
                            w_q: f(w_q),
                            w_k: f(w_k),
                        },
                    },
                    w_v: f(&head.w_v),
                    rel: head.rel.as_ref().map(|r| RelProj {
                        w_qr: f(&r.w_qr),
                        w_kr: f(&r.w_kr),
                    }),
                })
                .collect(),
            w_o: f(&self.w_o),
            ln_scale: f(&self.ln_scale),
            ln_shift: f(&self.ln_shift),
            ffn: self.ffn.as_ref().map(|ffn| FfnParams {
                w1: f(&ffn.w1),
                b1: f(&ffn.b1),
                w2: f(&ffn.w2),
                b2: f(&ffn.b2),
                ln_scale: f(&ffn.ln_scale),
                ln_shift: f(&ffn.ln_shift),
            }),
        }
    }
}

impl LayerParams<Tensor> {
    pub fn init(seed: u64, layer: usize, cfg: &AttentionConfig, num_node_types: usize) -> Self {
        let d = cfg.d;
        let dh = cfg.head_dim();
        let p = format!("layer{layer}");
        let heads = (0..cfg.n_h)
            .map(|h| {
                let hp = format!("{p}.head{h}");
                let score = match cfg.mechanism {
                    AttentionMechanism::GatV2 => ScoreParams::GatV2 {
                        w_l: init_uniform(seed, &format!("{hp}.w_l"), &[d, dh], d),
                        w_r: init_uniform(seed, &format!("{hp}.w_r"), &[d, dh], d),
                        a: init_uniform(seed, &format!("{hp}.a"), &[dh, 1], dh),
                    },
                    AttentionMechanism::Gat => ScoreParams::Gat {
                        w: init_uniform(seed, &format!("{hp}.w"), &[d, dh], d),
                        a_l: init_uniform(seed, &format!("{hp}.a_l"), &[dh, 1], dh),
                        a_r: init_uniform(seed, &format!("{hp}.a_r"), &[dh, 1], dh),
                    },
                    AttentionMechanism::DotProduct => ScoreParams::Dot {
                        w_q: init_uniform(seed, &format!("{hp}.w_q"), &[d, dh], d),
                        w_k: init_uniform(seed, &format!("{hp}.w_k"), &[d, dh], d),
                    },
                };
                HeadParams {
                    score,
                    w_v: init_uniform(seed, &format!("{hp}.w_v"), &[d, dh], d),
                    rel: cfg.use_relational_bias.then(|| RelProj {
                        w_qr: init_uniform(
                            seed,
                            &format!("{hp}.w_qr"),
                            &[num_node_types, num_node_types],
                            num_node_types,
                        ),
                        w_kr: init_uniform(
                            seed,
                            &format!("{hp}.w_kr"),
                            &[num_node_types, num_node_types],
                            num_node_types,
                        ),
                    }),
                }
            })
            .collect();
        LayerParams {
            heads,
            w_o: init_uniform(seed, &format!("{p}.w_o"), &[d, d], d),
            ln_scale: Tensor::filled(&[d], 1.0),
            ln_shift: Tensor::zeros(&[d]),
            ffn: cfg.use_ffn.then(|| FfnParams {
                w1: init_uniform(seed, &format!("{p}.ffn.w1"), &[d, d], d),
                b1: Tensor::zeros(&[d]),
                w2: init_uniform(seed, &format!("{p}.ffn.w2"), &[d, d], d),
                b2: Tensor::zeros(&[d]),
                ln_scale: Tensor::filled(&[d], 1.0),
                ln_shift: Tensor::zeros(&[d]),
            }),
        }
    }
}

pub fn init_stack(
    seed: u64,
    num_layers: usize,
    cfg: &AttentionConfig,
    num_node_types: usize,
) -> Vec<LayerParams<Tensor>> {
    (0..num_layers)
        .map(|l| LayerParams::init(seed, l, cfg, num_node_types))
        .collect()
}

fn check_layer<T>(
    cfg: &AttentionConfig,
    params: &LayerParams<T>,
    layer: usize,
) -> Result<(), LayerError> {
    if params.heads.len() != cfg.n_h {
        return Err(LayerError::HeadCount {
            layer,
            want: cfg.n_h,
            got: params.heads.len(),
        });
    }
    for (h, head) in params.heads.iter().enumerate() {
        if head.score.mechanism() != cfg.mechanism {
            return Err(LayerError::MechanismMismatch {
                layer,
                head: h,
                want: cfg.mechanism.as_str(),
                got: head.score.mechanism().as_str(),
            });
        }
        if head.rel.is_some() != cfg.use_relational_bias {
            return Err(LayerError::RelationalMismatch {
                layer,
                head: h,
                have: head.rel.is_some(),
                want: cfg.use_relational_bias,
            });
        }
    }
    if params.ffn.is_some() != cfg.use_ffn {
        return Err(LayerError::FfnMismatch {
            layer,
            have: params.ffn.is_some(),
            want: cfg.use_ffn,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dropout source
// ---------------------------------------------------------------------------

/// Samples inverted-dropout factor masks (0 or 1/(1-p) per element) from a
/// dedicated stream, so training forwards stay reproducible.
pub struct DropoutSource<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl DropoutSource<'_> {
    pub fn factors(&mut self, n: usize) -> Rc<Vec<f64>> {
        let keep = 1.0 - self.p;
        Rc::new(
            (0..n)
                .map(|_| {
                    if self.rng.random_range(0.0..1.0) < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    pub fn active(&self) -> bool {
        self.p > 0.0
    }
}

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

/// Record one head's pre-softmax logits over all S×S position pairs.
pub fn build_head_logits(
    tape: &mut Tape,
    h_seq: Var,
    score: &ScoreParams<Var>,
) -> Result<Var, LayerError> {
    let s = tape.value(h_seq).rows();
    let logits = match score {
        ScoreParams::GatV2 { w_l, w_r, a } => {
            let p = tape.matmul(h_seq, *w_l)?;
            let q = tape.matmul(h_seq, *w_r)?;
            let pairs = tape.pairwise_sum(p, q)?;
            let act = tape.leaky_relu(pairs, ATTN_LEAKY_SLOPE);
            let scores = tape.matmul(act, *a)?;
            tape.reshape(scores, &[s, s])?
        }
        ScoreParams::Gat { w, a_l, a_r } => {
            let u = tape.matmul(h_seq, *w)?;
            let p = tape.matmul(u, *a_l)?;
            let q = tape.matmul(u, *a_r)?;
            let pairs = tape.pairwise_sum(p, q)?;
            let act = tape.leaky_relu(pairs, ATTN_LEAKY_SLOPE);
            tape.reshape(act, &[s, s])?
        }
        ScoreParams::Dot { w_q, w_k } => {
            let q = tape.matmul(h_seq, *w_q)?;
            let k = tape.matmul(h_seq, *w_k)?;
            let dh = tape.value(q).cols();
            let raw = tape.matmul_nt(q, k)?;
            tape.scale(raw, 1.0 / (dh as f64).sqrt())
        }
    };
    Ok(logits)
}

/// Record one head's unscaled relational bias matrix
/// `B[i][j] = (r_i W_QR)·(r_j W_KR)`.
pub fn build_relational_bias(
    tape: &mut Tape,
    r_seq: Var,
    rel: &RelProj<Var>,
) -> Result<Var, LayerError> {
    let qr = tape.matmul(r_seq, rel.w_qr)?;
    let kr = tape.matmul(r_seq, rel.w_kr)?;
    Ok(tape.matmul_nt(qr, kr)?)
}

/// Recorded intermediates of one layer: final output plus per-head
/// pre-softmax logits (bias included, mask not yet applied) and post-softmax
/// weights (pre-dropout).
pub struct LayerTrace {
    pub output: Var,
    pub head_logits: Vec<Var>,
    pub head_weights: Vec<Var>,
}

pub struct StackTrace {
    pub output: Var,
    pub layers: Vec<LayerTrace>,
}

/// Record one full layer: per-head biased attention, value aggregation,
/// head merge, residual, layer norm, and optionally the baseline FFN block.
pub fn build_layer(
    tape: &mut Tape,
    h_seq: Var,
    r_seq: Var,
    mask: Rc<Vec<bool>>,
    cfg: &AttentionConfig,
    params: &LayerParams<Var>,
    mut dropout: Option<&mut DropoutSource>,
) -> Result<LayerTrace, LayerError> {
    build_layer_at(tape, h_seq, r_seq, mask, cfg, params, 0, dropout.as_deref_mut())
}

fn build_layer_at(
    tape: &mut Tape,
    h_seq: Var,
    r_seq: Var,
    mask: Rc<Vec<bool>>,
    cfg: &AttentionConfig,
    params: &LayerParams<Var>,
    layer: usize,
    mut dropout: Option<&mut DropoutSource>,
) -> Result<LayerTrace, LayerError> {
    cfg.validate()?;
    check_layer(cfg, params, layer)?;

    let mut head_logits = Vec::with_capacity(cfg.n_h);
    let mut head_weights = Vec::with_capacity(cfg.n_h);
    let mut contexts = Vec::with_capacity(cfg.n_h);
    for head in &params.heads {
        let mut logits = build_head_logits(tape, h_seq, &head.score)?;
        if let Some(rel) = &head.rel {
            let bias = build_relational_bias(tape, r_seq, rel)?;
            let scaled = tape.scale(bias, cfg.beta);
            logits = tape.add(logits, scaled)?;
        }
        let weights = tape.masked_softmax_rows(logits, mask.clone())?;
        let applied = match dropout.as_deref_mut() {
            Some(src) if src.active() => {
                let n = tape.value(weights).len();
                let factors = src.factors(n);
                tape.dropout(weights, factors)?
            }
            _ => weights,
        };
        let values = tape.matmul(h_seq, head.w_v)?;
        contexts.push(tape.matmul(applied, values)?);
        head_logits.push(logits);
        head_weights.push(weights);
    }

    let merged_in = if contexts.len() == 1 {
        contexts[0]
    } else {
        tape.concat_cols(&contexts)?
    };
    let merged = tape.matmul(merged_in, params.w_o)?;
    let residual = tape.add(h_seq, merged)?;
    let mut output = tape.layer_norm(residual, params.ln_scale, params.ln_shift, LN_EPS)?;

    if let Some(ffn) = &params.ffn {
        let z = tape.matmul(output, ffn.w1)?;
        let z = tape.add_bias(z, ffn.b1)?;
        let z = tape.leaky_relu(z, ATTN_LEAKY_SLOPE);
        let z = tape.matmul(z, ffn.w2)?;
        let z = tape.add_bias(z, ffn.b2)?;
        let res = tape.add(output, z)?;
        output = tape.layer_norm(res, ffn.ln_scale, ffn.ln_shift, LN_EPS)?;
    }

    Ok(LayerTrace {
        output,
        head_logits,
        head_weights,
    })
}

/// Record the L-layer stack; relational encodings are reused at every layer.
pub fn build_stack(
    tape: &mut Tape,
    h_seq: Var,
    r_seq: Var,
    mask: Rc<Vec<bool>>,
    cfg: &AttentionConfig,
    layers: &[LayerParams<Var>],
    mut dropout: Option<&mut DropoutSource>,
) -> Result<StackTrace, LayerError> {
    if layers.is_empty() {
        return Err(LayerError::EmptyStack);
    }
    let mut traces = Vec::with_capacity(layers.len());
    let mut state = h_seq;
    for (l, params) in layers.iter().enumerate() {
        let trace = build_layer_at(
            tape,
            state,
            r_seq,
            mask.clone(),
            cfg,
            params,
            l,
            dropout.as_deref_mut(),
        )?;
        state = trace.output;
        traces.push(trace);
    }
    Ok(StackTrace {
        output: state,
        layers: traces,
    })
}

// ---------------------------------------------------------------------------
// Plain evaluation and the public attention map
// ---------------------------------------------------------------------------

/// Per-head attention matrices for inspection: pre-softmax logits with
/// masked key columns forced to -inf, and post-softmax weights where masked
/// keys carry exactly 0.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub mask: Vec<bool>,
    pub logits: Vec<Tensor>,
    pub weights: Vec<Tensor>,
}

impl AttentionMap {
    fn from_finite(finite: Vec<Tensor>, mask: &[bool]) -> Self {
        let logits = finite
            .into_iter()
            .map(|mut t| {
                for i in 0..t.rows() {
                    for (j, &keep) in mask.iter().enumerate() {
                        if !keep {
                            *t.at_mut(i, j) = f64::NEG_INFINITY;
                        }
                    }
                }
                t
            })
            .collect();
        AttentionMap {
            mask: mask.to_vec(),
            logits,
            weights: Vec::new(),
        }
    }

    /// Fill `weights` with the masked row softmax of `logits`.
    pub fn softmax_weights(&mut self) -> Result<(), LayerError> {
        self.weights = self
            .logits
            .iter()
            .map(|l| ops::masked_softmax(l, &self.mask))
            .collect::<Result<_, _>>()?;
        Ok(())
    }
}

fn check_mask(op: &'static str, s: usize, mask: &[bool]) -> Result<(), LayerError> {
    if mask.len() != s {
        return Err(LayerError::Numeric(NumericError::ShapeMismatch {
            op,
            lhs: vec![s],
            rhs: vec![mask.len()],
        }));
    }
    Ok(())
}

/// Pre-softmax attention logits for every head, without the relational
/// bias; weights are left empty.
pub fn attention_logits(
    h_seq: &Tensor,
    mask: &[bool],
    cfg: &AttentionConfig,
    params: &LayerParams<Tensor>,
) -> Result<AttentionMap, LayerError> {
    cfg.validate()?;
    check_layer(cfg, params, 0)?;
    check_mask("attention_logits", h_seq.rows(), mask)?;
    let mut tape = Tape::new();
    let h = tape.leaf(h_seq.clone());
    let bound = params.map(&mut |t| tape.leaf(t.clone()));
    let finite = bound
        .heads
        .iter()
        .map(|head| {
            let v = build_head_logits(&mut tape, h, &head.score)?;
            Ok(tape.value(v).clone())
        })
        .collect::<Result<Vec<_>, LayerError>>()?;
    Ok(AttentionMap::from_finite(finite, mask))
}

/// Add the weighted relational bias to every head's logits. Masked entries
/// stay -inf; previously computed weights are refreshed.
pub fn add_relational_bias(
    mut map: AttentionMap,
    r_seq: &Tensor,
    params: &LayerParams<Tensor>,
    beta: f64,
) -> Result<AttentionMap, LayerError> {
    if params.heads.len() != map.logits.len() {
        return Err(LayerError::MapHeadCount {
            heads: map.logits.len(),
            got: params.heads.len(),
        });
    }
    for (h, head) in params.heads.iter().enumerate() {
        let rel = head.rel.as_ref().ok_or(LayerError::RelationalMismatch {
            layer: 0,
            head: h,
            have: false,
            want: true,
        })?;
        let qr = ops::matmul(r_seq, &rel.w_qr)?;
        let kr = ops::matmul(r_seq, &rel.w_kr)?;
        let bias = ops::matmul_nt(&qr, &kr)?;
        let logits = &mut map.logits[h];
        if logits.shape() != bias.shape() {
            return Err(LayerError::Numeric(NumericError::ShapeMismatch {
                op: "add_relational_bias",
                lhs: logits.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            }));
        }
        for (l, b) in logits.data_mut().iter_mut().zip(bias.data()) {
            *l += beta * b;
        }
    }
    if !map.weights.is_empty() {
        map.softmax_weights()?;
    }
    Ok(map)
}

fn run_layers(
    h_seq: &Tensor,
    r_seq: &Tensor,
    mask: &[bool],
    cfg: &AttentionConfig,
    layers: &[LayerParams<Tensor>],
) -> Result<(Tensor, Vec<AttentionMap>), LayerError> {
    check_mask("layer_forward", h_seq.rows(), mask)?;
    let mut tape = Tape::new();
    let h = tape.leaf(h_seq.clone());
    let r = tape.leaf(r_seq.clone());
    let bound: Vec<LayerParams<Var>> = layers
        .iter()
        .map(|p| p.map(&mut |t| tape.leaf(t.clone())))
        .collect();
    let trace = build_stack(&mut tape, h, r, Rc::new(mask.to_vec()), cfg, &bound, None)?;
    let maps = trace
        .layers
        .iter()
        .map(|lt| {
            let finite = lt.head_logits.iter().map(|&v| tape.value(v).clone()).collect();
            let mut map = AttentionMap::from_finite(finite, mask);
            map.weights = lt.head_weights.iter().map(|&v| tape.value(v).clone()).collect();
            map
        })
        .collect();
    Ok((tape.value(trace.output).clone(), maps))
}

/// One layer applied to a context sequence; dropout off.
pub fn layer_forward(
    h_seq: &Tensor,
    r_seq: &Tensor,
    mask: &[bool],
    cfg: &AttentionConfig,
    params: &LayerParams<Tensor>,
) -> Result<Tensor, LayerError> {
    Ok(layer_forward_with_attention(h_seq, r_seq, mask, cfg, params)?.0)
}

pub fn layer_forward_with_attention(
    h_seq: &Tensor,
    r_seq: &Tensor,
    mask: &[bool],
    cfg: &AttentionConfig,
    params: &LayerParams<Tensor>,
) -> Result<(Tensor, AttentionMap), LayerError> {
    let (out, mut maps) = run_layers(h_seq, r_seq, mask, cfg, std::slice::from_ref(params))?;
    Ok((out, maps.pop().expect("one layer yields one map")))
}

/// The full layer stack applied to a context sequence; dropout off.
pub fn stack_forward(
    h_seq: &Tensor,
    r_seq: &Tensor,
    mask: &[bool],
    cfg: &AttentionConfig,
    layers: &[LayerParams<Tensor>],
) -> Result<Tensor, LayerError> {
    Ok(run_layers(h_seq, r_seq, mask, cfg, layers)?.0)
}

pub fn stack_forward_with_attention(
    h_seq: &Tensor,
    r_seq: &Tensor,
    mask: &[bool],
    cfg: &AttentionConfig,
    layers: &[LayerParams<Tensor>],
) -> Result<(Tensor, Vec<AttentionMap>), LayerError> {
    run_layers(h_seq, r_seq, mask, cfg, layers)
}

/// The target-node representation: row 0 of the stack output, as a flat
/// d-vector. Context sequences always carry their target at position 0.
pub fn readout(h_out: &Tensor) -> Result<Tensor, LayerError> {
    if h_out.ndim() != 2 || h_out.rows() == 0 {
        return Err(LayerError::Numeric(NumericError::BadShape {
            op: "readout",
            expected: "a non-empty S x d matrix",
            got: h_out.shape().to_vec(),
        }));
    }
    Ok(Tensor::from_vec(&[h_out.cols()], h_out.row(0).to_vec()))
}
