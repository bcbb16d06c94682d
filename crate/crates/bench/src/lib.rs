//! Shared fixtures for the criterion benchmarks.

use hinormer_core::{synthesize, Dataset, SynthConfig, Tensor};

/// The synthetic benchmark graph at a given size, fixed seed.
pub fn dataset(nodes: usize) -> Dataset {
    synthesize(&SynthConfig {
        num_nodes: nodes,
        seed: 17,
        ..SynthConfig::default()
    })
    .expect("benchmark dataset generates")
}

/// Deterministic dense filler so benchmark inputs need no RNG plumbing.
pub fn filler(rows: usize, cols: usize) -> Tensor {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| ((i * cols + j) as f64 * 0.37).sin())
                .collect()
        })
        .collect();
    Tensor::from_rows(&data)
}
