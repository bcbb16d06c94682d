//! Fixed-length context sequences by D-hop breadth-first expansion.
//!
//! Each target node gets a sequence of exactly S positions: itself first,
//! then complete BFS layers in hop order until the sequence fills or the
//! hop budget D runs out. The layer that overflows S is trimmed; ordering
//! inside a layer is ascending node id under the deterministic policy or a
//! seeded shuffle under the random policy. Unfilled positions are padding
//! with a sentinel id and a cleared validity mask.
//!
//! Layers are discovered by full BFS regardless of trimming, so a position's
//! hop tag always equals the true shortest-path distance from the target;
//! trimming only affects which nodes are emitted, never their tags.

mod cache;

pub use cache::{read_cache, sample_all_cached, write_cache};

use rand::seq::SliceRandom;

use crate::graph::{GraphError, HeteroGraph};
use crate::rng::stream_for_indexed;

/// Sentinel node id for padded positions.
pub const PAD: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePolicy {
    /// Ascending node id within each hop; no randomness.
    Deterministic,
    /// Within-hop order shuffled by a stream derived from (seed, target, hop).
    SeededRandom,
}

impl SamplePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplePolicy::Deterministic => "deterministic",
            SamplePolicy::SeededRandom => "seeded-random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "deterministic" => SamplePolicy::Deterministic,
            "seeded-random" => SamplePolicy::SeededRandom,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Maximum hop distance D.
    pub depth: usize,
    /// Sequence length S.
    pub length: usize,
    pub policy: SamplePolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSequence {
    pub target: usize,
    /// Exactly `length` entries; padded tail holds [`PAD`].
    pub nodes: Vec<usize>,
    /// Hop distance from the target per position; 0 at padded positions.
    pub hop: Vec<usize>,
    pub mask: Vec<bool>,
}

impl ContextSequence {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Sample the context sequence of one target node.
pub fn sample_context(
    g: &HeteroGraph,
    v: usize,
    cfg: &SamplerConfig,
) -> Result<ContextSequence, GraphError> {
    if v >= g.num_nodes {
        return Err(GraphError::NodeOutOfRange {
            id: v,
            num_nodes: g.num_nodes,
        });
    }
    assert!(cfg.length >= 1, "sequence length must be at least 1");

    let s = cfg.length;
    let mut nodes = Vec::with_capacity(s);
    let mut hops = Vec::with_capacity(s);
    nodes.push(v);
    hops.push(0usize);

    let mut visited = vec![false; g.num_nodes];
    visited[v] = true;
    let mut frontier = vec![v];

    for hop in 1..=cfg.depth {
        if frontier.is_empty() || nodes.len() >= s {
            break;
        }
        let mut layer = Vec::new();
        for &u in &frontier {
            for w in g.neighbor_set(u) {
                if !visited[w] {
                    visited[w] = true;
                    layer.push(w);
                }
            }
        }
        layer.sort_unstable();
        if let SamplePolicy::SeededRandom = cfg.policy {
            let mut rng = stream_for_indexed(cfg.seed, v as u64, hop as u64);
            layer.shuffle(&mut rng);
        }
        for &w in &layer {
            if nodes.len() >= s {
                break;
            }
            nodes.push(w);
            hops.push(hop);
        }
        frontier = layer;
    }

    let valid = nodes.len();
    let mut mask = vec![true; valid];
    nodes.resize(s, PAD);
    hops.resize(s, 0);
    mask.resize(s, false);

    Ok(ContextSequence {
        target: v,
        nodes,
        hop: hops,
        mask,
    })
}

/// Sample contexts for a list of targets, preserving order.
pub fn sample_all(
    g: &HeteroGraph,
    ids: &[usize],
    cfg: &SamplerConfig,
) -> Result<Vec<ContextSequence>, GraphError> {
    ids.iter().map(|&v| sample_context(g, v, cfg)).collect()
}
