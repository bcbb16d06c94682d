//! HINormer: a graph Transformer for node classification on heterogeneous
//! information networks.
//!
//! The pipeline: load a typed graph, sample a fixed-length hop-ordered
//! context sequence per target node, project per-type features into a shared
//! space, enhance them with a local structure encoder, derive per-node
//! relational encodings from type composition, run the sequences through
//! FFN-free Transformer layers whose attention logits carry a relational
//! bias, read out the target position, and train a linear head end to end.

pub mod encoders;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod ops;
pub mod params;
pub mod rng;
pub mod sampler;
pub mod sparse;
pub mod synth;
pub mod tape;
pub mod trainer;
pub mod tensor;

pub use encoders::{
    build_projection, build_relations, build_structure, default_self_loops, encode_relations,
    encode_structure, one_hot_types, project_features, relation_matrix, structure_matrix,
    EncoderError, ProjectionParams, RelationNorm, RelationParams, StructureKind, StructureLayer,
    StructureParams,
};
pub use gradcheck::{grad_check, GradCheckError, GradCheckReport};
pub use layers::{
    add_relational_bias, attention_logits, build_head_logits, build_layer,
    build_relational_bias, build_stack, init_stack, layer_forward, layer_forward_with_attention,
    readout, stack_forward, stack_forward_with_attention, AttentionConfig, AttentionMap,
    AttentionMechanism, DropoutSource, FfnParams, HeadParams, LayerError, LayerParams,
    LayerTrace, RelProj, ScoreParams, StackTrace,
};
pub use graph::{
    build_mean_adjacency, build_normalized_adjacency, build_raw_adjacency, load_graph,
    write_dataset, Dataset, DatasetManifest, DatasetPaths, FeatureRow, FeatureTable, GraphError,
    HeteroGraph, LabelSet, NormalizedAdjacency, Split,
};
pub use metrics::{argmax_rows, f1_multiclass, f1_multilabel, threshold_rows, F1Scores, MetricsError};
pub use model::{
    bind_model, build_batch, build_forward, forward_logits, loss_multiclass, loss_multilabel,
    predict, BatchBuild, BatchTargets, ForwardBuild, GraphOperators, ModelConfig, ModelError,
    ModelParams,
};
pub use ops::NumericError;
pub use optim::{Adam, EarlyStopper, PlateauScheduler, StopSignal};
pub use params::{ParamSet, Parameter};
pub use sampler::{sample_all, sample_context, ContextSequence, SamplePolicy, SamplerConfig};
pub use sparse::SparseMatrix;
pub use synth::{synthesize, SynthConfig, SynthError};
pub use tape::{Gradients, Reduction, SparseHandle, Tape, Var};
pub use tensor::Tensor;
pub use trainer::checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use trainer::{
    evaluate, train, EpochRecord, Metrics, SampledContexts, TrainConfig, TrainError, TrainOutcome,
};
