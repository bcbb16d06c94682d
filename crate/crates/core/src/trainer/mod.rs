//! The training loop: chunked forward/backward over context sequences,
//! adaptive-moment updates, plateau-driven learning-rate decay, and early
//! stopping on validation micro-F1 with best-epoch parameter restore.

pub mod checkpoint;

use std::time::Instant;

use thiserror::Error;

use crate::graph::{Dataset, DatasetManifest, GraphError};
use crate::layers::{AttentionMechanism, DropoutSource};
use crate::metrics::{argmax_rows, f1_multiclass, f1_multilabel, threshold_rows};
use crate::model::{
    bind_model, build_batch, forward_logits, BatchTargets, GraphOperators, ModelConfig,
    ModelError, ModelParams,
};
use crate::encoders::{RelationNorm, StructureKind};
use crate::ops::{self, NumericError};
use crate::optim::{Adam, EarlyStopper, PlateauScheduler};
use crate::rng::{hash_label, stream_for_indexed};
use crate::sampler::{sample_all, ContextSequence, SamplePolicy, SamplerConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Sequences per tape during training and evaluation; bounds peak memory
/// without changing results (chunk losses sum exactly).
pub const GRAD_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {what} must be positive")]
    ZeroValue { what: &'static str },
    #[error("config: learning_rate must be positive and finite, got {got}")]
    BadLearningRate { got: f64 },
    #[error("config: dropout must lie in [0, 1), got {got}")]
    BadDropout { got: f64 },
    #[error("config: patience {patience} exceeds the epoch budget {epochs}")]
    PatienceBudget { patience: usize, epochs: usize },
    #[error("config: unknown key '{key}'")]
    UnknownKey { key: String },
    #[error("config: cannot parse '{value}' for key '{key}'")]
    BadValue { key: String, value: String },
    #[error("config says multilabel={config} but the dataset manifest says {dataset}")]
    LabelMode { config: bool, dataset: bool },
    #[error("split '{part}' is empty")]
    EmptySplit { part: String },
    #[error("node {node} is in the split but has no label")]
    MissingLabel { node: usize },
    #[error("node {node} has no sampled context")]
    MissingContext { node: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Everything a run needs beyond the dataset itself. Serializes to and
/// from flat `key=value` lines; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub beta: f64,
    pub num_layers: usize,
    pub d: usize,
    pub n_h: usize,
    /// Context sequence length S.
    pub seq_len: usize,
    /// Context sampling depth D.
    pub depth: usize,
    pub k_s: usize,
    pub k_h: usize,
    pub seed: u64,
    pub multilabel: bool,
    pub no_lse: bool,
    pub no_hre: bool,
    pub mechanism: AttentionMechanism,
    /// Target nodes per optimizer step; 0 trains full-batch.
    pub batch_size: usize,
    pub structure_kind: StructureKind,
    pub relation_norm: RelationNorm,
    pub use_ffn: bool,
    /// Sum the loss over target nodes instead of averaging.
    pub sum_loss: bool,
    pub sample_policy: SamplePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            dropout: 0.5,
            epochs: 200,
            patience: 50,
            beta: 0.5,
            num_layers: 2,
            d: 256,
            n_h: 2,
            seq_len: 32,
            depth: 2,
            k_s: 2,
            k_h: 2,
            seed: 0,
            multilabel: false,
            no_lse: false,
            no_hre: false,
            mechanism: AttentionMechanism::GatV2,
            batch_size: 0,
            structure_kind: StructureKind::AdjPower,
            relation_norm: RelationNorm::MeanSelfLoop,
            use_ffn: false,
            sum_loss: false,
            sample_policy: SamplePolicy::SeededRandom,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (what, v) in [
            ("d", self.d),
            ("num_layers", self.num_layers),
            ("n_h", self.n_h),
            ("seq_len", self.seq_len),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(TrainError::ZeroValue { what });
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadLearningRate {
                got: self.learning_rate,
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::BadDropout { got: self.dropout });
        }
        if self.epochs > 0 && self.patience > self.epochs {
            return Err(TrainError::PatienceBudget {
                patience: self.patience,
                epochs: self.epochs,
            });
        }
        Ok(())
    }

    pub fn model(&self, manifest: &DatasetManifest) -> ModelConfig {
        ModelConfig {
            d: self.d,
            num_layers: self.num_layers,
            n_h: self.n_h,
            beta: self.beta,
            mechanism: self.mechanism,
            use_ffn: self.use_ffn,
            structure_kind: self.structure_kind,
            k_s: self.k_s,
            k_h: self.k_h,
            relation_norm: self.relation_norm,
            no_lse: self.no_lse,
            no_hre: self.no_hre,
            num_classes: manifest.num_classes,
            multilabel: self.multilabel,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            depth: self.depth,
            length: self.seq_len,
            policy: self.sample_policy,
            seed: self.seed,
        }
    }

    /// Flat `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("learning_rate", format!("{:e}", self.learning_rate));
        push("dropout", self.dropout.to_string());
        push("epochs", self.epochs.to_string());
        push("patience", self.patience.to_string());
        push("beta", self.beta.to_string());
        push("num_layers", self.num_layers.to_string());
        push("d", self.d.to_string());
        push("n_h", self.n_h.to_string());
        push("seq_len", self.seq_len.to_string());
        push("depth", self.depth.to_string());
        push("k_s", self.k_s.to_string());
        push("k_h", self.k_h.to_string());
        push("seed", self.seed.to_string());
        push("multilabel", self.multilabel.to_string());
        push("no_lse", self.no_lse.to_string());
        push("no_hre", self.no_hre.to_string());
        push("mechanism", self.mechanism.as_str().to_string());
        push("batch_size", self.batch_size.to_string());
        push("structure_kind", self.structure_kind.as_str().to_string());
        push("relation_norm", self.relation_norm.as_str().to_string());
        push("use_ffn", self.use_ffn.to_string());
        push("sum_loss", self.sum_loss.to_string());
        push("sample_policy", self.sample_policy.as_str().to_string());
        out
    }

    /// Set one field from its text form. Unknown keys and unparseable
    /// values are errors so config typos surface instead of training a
    /// silently different model.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
            value.trim().parse().map_err(|_| TrainError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        let value = value.trim();
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "num_layers" => self.num_layers = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "n_h" => self.n_h = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "k_s" => self.k_s = num(key, value)?,
            "k_h" => self.k_h = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "multilabel" => self.multilabel = num(key, value)?,
            "no_lse" => self.no_lse = num(key, value)?,
            "no_hre" => self.no_hre = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "use_ffn" => self.use_ffn = num(key, value)?,
            "sum_loss" => self.sum_loss = num(key, value)?,
            "mechanism" => {
                self.mechanism =
                    AttentionMechanism::parse(value).ok_or_else(|| TrainError::BadValue {
                        key: key.to_string(),
                        value: value.to_string(),
                    })?
            }
            "structure_kind" => {
                self.structure_kind =
                    StructureKind::parse(value).ok_or_else(|| TrainError::BadValue {
                        key: key.to_string(),
                        value: value.to_string(),
                    })?
            }
            "relation_norm" => {
                self.relation_norm =
                    RelationNorm::parse(value).ok_or_else(|| TrainError::BadValue {
                        key: key.to_string(),
                        value: value.to_string(),
                    })?
            }
            "sample_policy" => {
                self.sample_policy =
                    SamplePolicy::parse(value).ok_or_else(|| TrainError::BadValue {
                        key: key.to_string(),
                        value: value.to_string(),
                    })?
            }
            _ => {
                return Err(TrainError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parse a whole `key=value` document (blank lines and `#` comments
    /// allowed) on top of the current values.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), TrainError> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TrainError::BadValue {
                key: line.to_string(),
                value: String::new(),
            })?;
            self.apply_kv(key.trim(), value)?;
        }
        Ok(())
    }
}

/// Quality of a parameter set on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_micro: f64,
    pub val_macro: f64,
    /// Learning rate the epoch's updates used.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-epoch parameters (initialization when no epoch improved).
    pub params: ModelParams<Tensor>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Validation metrics of the returned parameters.
    pub val: Metrics,
    /// Optimizer state as of the last completed epoch.
    pub adam: Adam,
    pub epochs_run: usize,
}

/// Context sequences for every node the run touches, sampled once.
pub struct SampledContexts {
    by_node: Vec<Option<ContextSequence>>,
}

impl SampledContexts {
    pub fn sample(data: &Dataset, cfg: &SamplerConfig) -> Result<Self, TrainError> {
        let mut ids: Vec<usize> = data
            .split
            .train
            .iter()
            .chain(&data.split.val)
            .chain(&data.split.test)
            .copied()
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let seqs = sample_all(&data.graph, &ids, cfg)?;
        let mut by_node = vec![None; data.graph.num_nodes];
        for seq in seqs {
            let target = seq.target;
            by_node[target] = Some(seq);
        }
        Ok(SampledContexts { by_node })
    }

    pub fn refs_for(&self, ids: &[usize]) -> Result<Vec<&ContextSequence>, TrainError> {
        ids.iter()
            .map(|&v| {
                self.by_node
                    .get(v)
                    .and_then(|s| s.as_ref())
                    .ok_or(TrainError::MissingContext { node: v })
            })
            .collect()
    }
}

fn targets_for(
    data: &Dataset,
    ids: &[usize],
    model_cfg: &ModelConfig,
) -> Result<BatchTargets, TrainError> {
    if model_cfg.multilabel {
        let mut rows = Vec::with_capacity(ids.len());
        for &v in ids {
            let labels = data
                .labels
                .label_of(v)
                .ok_or(TrainError::MissingLabel { node: v })?;
            let mut row = vec![0.0; model_cfg.num_classes];
            for &c in labels {
                row[c] = 1.0;
            }
            rows.push(row);
        }
        Ok(BatchTargets::Indicator(Tensor::from_rows(&rows)))
    } else {
        let classes = ids
            .iter()
            .map(|&v| {
                data.labels
                    .class_of(v)
                    .ok_or(TrainError::MissingLabel { node: v })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BatchTargets::Classes(classes))
    }
}

/// Normalized logits for a list of nodes, computed in bounded chunks.
fn logits_for(
    contexts: &SampledContexts,
    data: &Dataset,
    graph_ops: &GraphOperators,
    params: &ModelParams<Tensor>,
    model_cfg: &ModelConfig,
    ids: &[usize],
) -> Result<Tensor, TrainError> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(GRAD_CHUNK) {
        let seqs = contexts.refs_for(chunk)?;
        let logits = forward_logits(&data.graph, graph_ops, params, model_cfg, &seqs)?;
        for i in 0..logits.rows() {
            rows.push(logits.row(i).to_vec());
        }
    }
    Ok(Tensor::from_rows(&rows))
}

fn metrics_from_logits(
    data: &Dataset,
    ids: &[usize],
    logits: &Tensor,
    model_cfg: &ModelConfig,
    sum_loss: bool,
) -> Result<Metrics, TrainError> {
    let n = ids.len();
    if model_cfg.multilabel {
        let mut truth = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for &v in ids {
            let labels = data
                .labels
                .label_of(v)
                .ok_or(TrainError::MissingLabel { node: v })?;
            let mut mask = vec![false; model_cfg.num_classes];
            let mut row = vec![0.0; model_cfg.num_classes];
            for &c in labels {
                mask[c] = true;
                row[c] = 1.0;
            }
            truth.push(mask);
            targets.push(row);
        }
        let predicted = threshold_rows(logits);
        let f1 = f1_multilabel(&predicted, &truth, model_cfg.num_classes)
            .expect("non-empty prediction set");
        // Mean over elements -> per-node class sum -> split reduction.
        let mean_elem = ops::sigmoid_bce(logits, &Tensor::from_rows(&targets))?;
        let per_node = mean_elem * model_cfg.num_classes as f64;
        Ok(Metrics {
            micro_f1: f1.micro_f1,
            macro_f1: f1.macro_f1,
            loss: if sum_loss { per_node * n as f64 } else { per_node },
        })
    } else {
        let truth = ids
            .iter()
            .map(|&v| {
                data.labels
                    .class_of(v)
                    .ok_or(TrainError::MissingLabel { node: v })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let predicted = argmax_rows(logits);
        let f1 = f1_multiclass(&predicted, &truth, model_cfg.num_classes)
            .expect("non-empty prediction set");
        let mean = ops::softmax_cross_entropy(logits, &truth)?;
        Ok(Metrics {
            micro_f1: f1.micro_f1,
            macro_f1: f1.macro_f1,
            loss: if sum_loss { mean * n as f64 } else { mean },
        })
    }
}

fn evaluate_ids(
    contexts: &SampledContexts,
    data: &Dataset,
    graph_ops: &GraphOperators,
    params: &ModelParams<Tensor>,
    model_cfg: &ModelConfig,
    ids: &[usize],
    part: &str,
    sum_loss: bool,
) -> Result<Metrics, TrainError> {
    if ids.is_empty() {
        return Err(TrainError::EmptySplit {
            part: part.to_string(),
        });
    }
    let logits = logits_for(contexts, data, graph_ops, params, model_cfg, ids)?;
    metrics_from_logits(data, ids, &logits, model_cfg, sum_loss)
}

/// Score a parameter set on one named split ("train", "val", "test").
pub fn evaluate(
    data: &Dataset,
    params: &ModelParams<Tensor>,
    cfg: &TrainConfig,
    part: &str,
) -> Result<Metrics, TrainError> {
    let ids = data
        .split
        .part(part)
        .ok_or_else(|| TrainError::EmptySplit {
            part: part.to_string(),
        })?
        .to_vec();
    let model_cfg = cfg.model(&data.manifest);
    let graph_ops = GraphOperators::new(&data.graph, &model_cfg);
    let contexts = SampledContexts::sample(data, &cfg.sampler())?;
    evaluate_ids(
        &contexts, data, &graph_ops, params, &model_cfg, &ids, part, cfg.sum_loss,
    )
}

/// Mini-batch order for one epoch: the training ids, shuffled by an
/// epoch-keyed stream when batching is on.
fn epoch_batches(train: &[usize], cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    if cfg.batch_size == 0 || cfg.batch_size >= train.len() {
        return vec![train.to_vec()];
    }
    let mut order = train.to_vec();
    let mut rng = stream_for_indexed(cfg.seed, hash_label("train.batches"), epoch as u64);
    for i in (1..order.len()).rev() {
        order.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
    }
    order
        .chunks(cfg.batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// Run the full loop. `progress` sees each epoch record as it lands.
pub fn train(
    data: &Dataset,
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.multilabel != data.manifest.multilabel {
        return Err(TrainError::LabelMode {
            config: cfg.multilabel,
            dataset: data.manifest.multilabel,
        });
    }
    if data.split.train.is_empty() {
        return Err(TrainError::EmptySplit {
            part: "train".to_string(),
        });
    }
    if data.split.val.is_empty() {
        return Err(TrainError::EmptySplit {
            part: "val".to_string(),
        });
    }

    let model_cfg = cfg.model(&data.manifest);
    let template = ModelParams::init(cfg.seed, &data.graph, &model_cfg)?;
    let mut ps = template.param_set();
    let graph_ops = GraphOperators::new(&data.graph, &model_cfg);
    let contexts = SampledContexts::sample(data, &cfg.sampler())?;

    let mut adam = Adam::new(&ps);
    let mut sched = PlateauScheduler::new(cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_snapshot: Option<Vec<Tensor>> = None;
    let mut snapshot_loss = f64::INFINITY;
    let mut snapshot_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr_used = sched.lr();
        let mut dropout_rng =
            stream_for_indexed(cfg.seed, hash_label("train.dropout"), epoch as u64);
        let batches = epoch_batches(&data.split.train, cfg, epoch);
        let mut loss_sum = 0.0;

        for batch in &batches {
            let scale = if cfg.sum_loss {
                1.0
            } else {
                1.0 / batch.len() as f64
            };
            for chunk in batch.chunks(GRAD_CHUNK) {
                let seqs = contexts.refs_for(chunk)?;
                let targets = targets_for(data, chunk, &model_cfg)?;
                let mut tape = Tape::new();
                let (bound, vars) = bind_model(&mut tape, &ps, &template);
                let mut src = DropoutSource {
                    p: cfg.dropout,
                    rng: &mut dropout_rng,
                };
                let built = build_batch(
                    &mut tape, &data.graph, &graph_ops, &bound, &model_cfg, &seqs, &targets,
                    scale,
                    Some(&mut src),
                )?;
                loss_sum += tape.value(built.loss).item();
                let grads = tape.backward(built.loss)?;
                ps.accumulate_grads(&vars, &grads, 1.0);
            }
            adam.step(&mut ps, lr_used);
            ps.zero_grads();
        }

        let train_loss = if cfg.sum_loss {
            loss_sum
        } else {
            // Each batch contributed its own mean; report their average.
            loss_sum / batches.len() as f64
        };
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }

        let current = template.with_values_from(&ps);
        let val = evaluate_ids(
            &contexts,
            data,
            &graph_ops,
            &current,
            &model_cfg,
            &data.split.val,
            "val",
            cfg.sum_loss,
        )?;
        if !val.loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        sched.observe(val.loss);
        let signal = stopper.observe(epoch, val.micro_f1);
        // Keep the lowest-val-loss epoch among those tied on val micro-F1;
        // small validation sets saturate the F1 early while the margins are
        // still moving.
        if signal.improved || (val.micro_f1 == stopper.best() && val.loss < snapshot_loss) {
            best_snapshot = Some(ps.snapshot());
            snapshot_loss = val.loss;
            snapshot_epoch = epoch;
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_micro: val.micro_f1,
            val_macro: val.macro_f1,
            lr: lr_used,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(cb) = progress.as_deref_mut() {
            cb(&record);
        }
        history.push(record);
        epochs_run = epoch;

        if signal.stop {
            stopped_early = true;
            break;
        }
    }

    if let Some(snapshot) = &best_snapshot {
        ps.restore(snapshot);
    }
    let params = template.with_values_from(&ps);
    let val = evaluate_ids(
        &contexts,
        data,
        &graph_ops,
        &params,
        &model_cfg,
        &data.split.val,
        "val",
        cfg.sum_loss,
    )?;

    Ok(TrainOutcome {
        params,
        history,
        best_epoch: snapshot_epoch,
        stopped_early,
        val,
        adam,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize, SynthConfig};

    fn small_data() -> Dataset {
        synthesize(&SynthConfig {
            num_nodes: 60,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: 8,
            seq_len: 8,
            epochs: 3,
            patience: 3,
            dropout: 0.0,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_kv_text() {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = 5e-3;
        cfg.mechanism = AttentionMechanism::DotProduct;
        cfg.use_ffn = true;
        cfg.batch_size = 17;
        cfg.relation_norm = RelationNorm::Raw;
        cfg.sample_policy = SamplePolicy::Deterministic;
        let text = cfg.to_kv();
        let mut parsed = TrainConfig::default();
        parsed.apply_kv_text(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(matches!(
            cfg.apply_kv("learning_rat", "1e-3").unwrap_err(),
            TrainError::UnknownKey { .. }
        ));
        assert!(matches!(
            cfg.apply_kv("epochs", "many").unwrap_err(),
            TrainError::BadValue { .. }
        ));
        assert!(matches!(
            cfg.apply_kv("mechanism", "transformer").unwrap_err(),
            TrainError::BadValue { .. }
        ));
        cfg.apply_kv("mechanism", "dot").unwrap();
        assert_eq!(cfg.mechanism, AttentionMechanism::DotProduct);
    }

    #[test]
    fn kv_text_skips_comments_and_blank_lines() {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_text("# tuned\n\nepochs=7\n  seed = 3\n").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn invalid_configs_fail_validation() {
        let mut cfg = TrainConfig::default();
        cfg.d = 0;
        assert!(matches!(
            cfg.validate().unwrap_err(),
            TrainError::ZeroValue { what: "d" }
        ));
        let mut cfg = TrainConfig::default();
        cfg.dropout = 1.0;
        assert!(matches!(
            cfg.validate().unwrap_err(),
            TrainError::BadDropout { .. }
        ));
        let mut cfg = TrainConfig::default();
        cfg.epochs = 10;
        cfg.patience = 11;
        assert!(matches!(
            cfg.validate().unwrap_err(),
            TrainError::PatienceBudget { .. }
        ));
        // A zero-epoch budget skips the patience comparison.
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        cfg.validate().unwrap();
    }

    #[test]
    fn zero_epochs_returns_initialized_params_and_baseline_metrics() {
        let data = small_data();
        let mut cfg = small_cfg();
        cfg.epochs = 0;
        let out = train(&data, &cfg, None).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.epochs_run, 0);
        assert!(!out.stopped_early);
        let fresh = ModelParams::init(cfg.seed, &data.graph, &cfg.model(&data.manifest)).unwrap();
        assert_eq!(out.params.head_weight, fresh.head_weight);
        assert!(out.val.micro_f1 >= 0.0 && out.val.micro_f1 <= 1.0);
        assert!(out.val.loss.is_finite());
    }

    #[test]
    fn same_seed_produces_bit_identical_history() {
        let data = small_data();
        let cfg = small_cfg();
        let a = train(&data, &cfg, None).unwrap();
        let b = train(&data, &cfg, None).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
            assert_eq!(ra.val_micro.to_bits(), rb.val_micro.to_bits());
            assert_eq!(ra.val_macro.to_bits(), rb.val_macro.to_bits());
            assert_eq!(ra.lr.to_bits(), rb.lr.to_bits());
        }
        let mut va = Vec::new();
        a.params.visit(&mut |_, t: &Tensor| va.push(t.clone()));
        let mut vb = Vec::new();
        b.params.visit(&mut |_, t: &Tensor| vb.push(t.clone()));
        for (ta, tb) in va.iter().zip(&vb) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn loss_decreases_on_first_epoch_across_seeds() {
        let data = small_data();
        for seed in 0..5 {
            let mut cfg = small_cfg();
            cfg.seed = seed;
            cfg.epochs = 2;
            cfg.patience = 2;
            cfg.learning_rate = 1e-4;
            let out = train(&data, &cfg, None).unwrap();
            assert!(
                out.history[1].train_loss < out.history[0].train_loss,
                "seed {seed}: {} -> {}",
                out.history[0].train_loss,
                out.history[1].train_loss
            );
        }
    }

    #[test]
    fn batched_and_full_runs_both_complete() {
        let data = small_data();
        let mut cfg = small_cfg();
        cfg.batch_size = 7;
        let out = train(&data, &cfg, None).unwrap();
        assert_eq!(out.history.len(), 3);
        // Shuffled batching with a different seed still trains.
        cfg.seed = 1;
        train(&data, &cfg, None).unwrap();
    }

    #[test]
    fn progress_callback_sees_every_epoch() {
        let data = small_data();
        let cfg = small_cfg();
        let mut seen = Vec::new();
        let mut cb = |r: &EpochRecord| seen.push(r.epoch);
        train(&data, &cfg, Some(&mut cb)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn label_mode_mismatch_is_rejected() {
        let data = small_data();
        let mut cfg = small_cfg();
        cfg.multilabel = true;
        assert!(matches!(
            train(&data, &cfg, None).unwrap_err(),
            TrainError::LabelMode { config: true, dataset: false }
        ));
    }

    #[test]
    fn evaluate_reports_each_split_and_rejects_unknown() {
        let data = small_data();
        let cfg = small_cfg();
        let model_cfg = cfg.model(&data.manifest);
        let params = ModelParams::init(0, &data.graph, &model_cfg).unwrap();
        for part in ["train", "val", "test"] {
            let m = evaluate(&data, &params, &cfg, part).unwrap();
            assert!((0.0..=1.0).contains(&m.micro_f1));
            assert!((0.0..=1.0).contains(&m.macro_f1));
            assert!(m.loss.is_finite() && m.loss >= 0.0);
        }
        assert!(matches!(
            evaluate(&data, &params, &cfg, "dev").unwrap_err(),
            TrainError::EmptySplit { .. }
        ));
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let data = small_data();
        let mut cfg = small_cfg();
        cfg.epochs = 30;
        cfg.patience = 2;
        cfg.learning_rate = 0.05;
        let out = train(&data, &cfg, None).unwrap();
        if out.stopped_early {
            assert!(out.epochs_run < 30);
            let best = out
                .history
                .iter()
                .map(|r| r.val_micro)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((out.val.micro_f1 - best).abs() <= 1e-12);
        }
        assert!(out.best_epoch >= 1);
    }
}
