//! Built-in graph for the gradient self-check: ten nodes over three types
//! with dense per-type features, small enough that central differences on
//! every parameter entry finish in seconds.

use hinormer_core::{
    DatasetManifest, FeatureRow, FeatureTable, HeteroGraph, ModelConfig, TrainConfig,
};

/// Target nodes the check batches together.
pub const TARGETS: &[usize] = &[0, 1, 2, 3];
/// One class per target, covering all three classes.
pub const LABELS: &[usize] = &[0, 1, 2, 0];

pub fn graph() -> HeteroGraph {
    let node_type = vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
    let edges = [
        (0usize, 4usize, 0usize),
        (0, 5, 0),
        (0, 7, 1),
        (1, 4, 0),
        (1, 5, 0),
        (1, 9, 1),
        (2, 5, 0),
        (2, 8, 1),
        (3, 6, 0),
        (3, 9, 1),
        (4, 7, 1),
        (5, 8, 1),
        (6, 9, 1),
        (7, 8, 0),
    ];
    let widths = [3usize, 2, 4];
    let rows: Vec<FeatureRow> = node_type
        .iter()
        .enumerate()
        .map(|(v, &t)| {
            FeatureRow::Dense(
                (0..widths[t])
                    .map(|k| ((v * 11 + k * 7) as f64 * 0.29).cos())
                    .collect(),
            )
        })
        .collect();
    let features = FeatureTable {
        per_type_dim: widths.to_vec(),
        onehot_types: vec![false; 3],
        rows,
    };
    HeteroGraph::from_parts(3, 2, node_type, &edges, features).expect("fixture graph is valid")
}

/// Model view of the resolved config over the fixture's three classes.
pub fn model_config(cfg: &TrainConfig) -> ModelConfig {
    let manifest = DatasetManifest {
        num_node_types: 3,
        num_edge_types: 2,
        target_type: 0,
        num_classes: 3,
        multilabel: false,
    };
    cfg.model(&manifest)
}
