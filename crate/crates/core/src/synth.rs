//! Synthetic heterogeneous benchmark: a typed random graph whose labels
//! follow a known decision rule, the dominant node type among a node's
//! neighbors. A model that aggregates one-hop type composition can solve
//! it; a model that cannot will score near chance.

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use crate::graph::{
    Dataset, DatasetManifest, FeatureRow, FeatureTable, GraphError, HeteroGraph, LabelSet, Split,
};
use crate::rng::stream_for;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("generator needs at least {want} nodes, got {got}")]
    TooFewNodes { want: usize, got: usize },
    #[error("generator needs at least one node type")]
    NoTypes,
    #[error("homophily {got} is outside [0, 1]")]
    BadHomophily { got: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_node_types: usize,
    /// Random edges added per node on top of the spanning attachment.
    pub extra_edges_per_node: usize,
    /// Probability that a new edge endpoint is drawn from the node's
    /// preferred type rather than uniformly.
    pub homophily: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 300,
            num_node_types: 3,
            extra_edges_per_node: 4,
            homophily: 0.8,
            seed: 0,
        }
    }
}

/// Unordered endpoint-type pair -> edge type id, enumerating pairs
/// (0,0), (0,1), ..., (0,T-1), (1,1), ..., (T-1,T-1).
fn pair_edge_type(a: usize, b: usize, num_types: usize) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    lo * num_types - lo * (lo + 1) / 2 + hi
}

/// Number of unordered type pairs, T(T+1)/2.
fn num_pair_types(num_types: usize) -> usize {
    num_types * (num_types + 1) / 2
}

/// Dominant neighbor type of each node in the realized graph; ties go to
/// the lowest type id. Nodes exist in a connected graph so every node has
/// at least one neighbor.
fn dominant_neighbor_types(g: &HeteroGraph) -> Vec<usize> {
    (0..g.num_nodes)
        .map(|v| {
            let mut hist = vec![0usize; g.num_node_types];
            for (u, _) in g.neighbors(v).expect("node id in range") {
                hist[g.node_type[u]] += 1;
            }
            hist.iter()
                .enumerate()
                .max_by(|(ta, ca), (tb, cb)| ca.cmp(cb).then(tb.cmp(ta)))
                .map(|(t, _)| t)
                .expect("at least one type")
        })
        .collect()
}

/// Generate the benchmark dataset. Deterministic in the config: types,
/// wiring, and split all come from named streams of the seed. Labels are
/// recomputed from the realized wiring, so the decision rule holds exactly
/// even where homophily lost a coin flip.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    if cfg.num_node_types == 0 {
        return Err(SynthError::NoTypes);
    }
    let t = cfg.num_node_types;
    if cfg.num_nodes < t.max(2) {
        return Err(SynthError::TooFewNodes {
            want: t.max(2),
            got: cfg.num_nodes,
        });
    }
    if !(0.0..=1.0).contains(&cfg.homophily) {
        return Err(SynthError::BadHomophily { got: cfg.homophily });
    }
    let n = cfg.num_nodes;

    let mut type_rng = stream_for(cfg.seed, "synth.types");
    let mut node_type: Vec<usize> = (0..n).map(|_| type_rng.random_range(0..t)).collect();
    // Guarantee every type occurs so per-type parameters always bind.
    for ty in 0..t {
        if !node_type.contains(&ty) {
            node_type[ty] = ty;
        }
    }

    let preferred: Vec<usize> = {
        let mut rng = stream_for(cfg.seed, "synth.preferred");
        (0..n).map(|_| rng.random_range(0..t)).collect()
    };

    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); t];
    for (v, &ty) in node_type.iter().enumerate() {
        by_type[ty].push(v);
    }

    let mut wire_rng = stream_for(cfg.seed, "synth.wiring");
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    let mut push_edge = |u: usize, v: usize, node_type: &[usize]| {
        edges.push((u, v, pair_edge_type(node_type[u], node_type[v], t)));
    };

    // Spanning attachment: each node joins an earlier one, leaning toward
    // its preferred type, so the graph is connected and degrees are >= 1.
    for v in 1..n {
        let pool: Vec<usize> = by_type[preferred[v]]
            .iter()
            .copied()
            .filter(|&u| u < v)
            .collect();
        let u = if !pool.is_empty() && wire_rng.random_bool(cfg.homophily) {
            *pool.choose(&mut wire_rng).expect("pool is non-empty")
        } else {
            wire_rng.random_range(0..v)
        };
        push_edge(u, v, &node_type);
    }

    // Extra edges thicken neighborhoods; duplicates collapse on load.
    for v in 0..n {
        for _ in 0..cfg.extra_edges_per_node {
            let pool = &by_type[preferred[v]];
            let u = if wire_rng.random_bool(cfg.homophily) {
                *pool.choose(&mut wire_rng).expect("every type occurs")
            } else {
                wire_rng.random_range(0..n)
            };
            if u != v {
                push_edge(u, v, &node_type);
            }
        }
    }

    // Every node announces its own type as a dense one-hot feature.
    let features = FeatureTable {
        per_type_dim: vec![t; t],
        onehot_types: vec![false; t],
        rows: node_type
            .iter()
            .map(|&ty| {
                let mut row = vec![0.0; t];
                row[ty] = 1.0;
                FeatureRow::Dense(row)
            })
            .collect(),
    };

    let graph = HeteroGraph::from_parts(t, num_pair_types(t), node_type, &edges, features)?;

    let target_type = 0usize;
    let dominant = dominant_neighbor_types(&graph);
    let labels = LabelSet {
        num_classes: t,
        multilabel: false,
        labels: (0..n)
            .map(|v| (graph.node_type[v] == target_type).then(|| vec![dominant[v]]))
            .collect(),
    };

    // 40/10/50 split of the labeled nodes, shuffled once.
    let mut labeled: Vec<usize> = labels.labeled_nodes().collect();
    let mut split_rng = stream_for(cfg.seed, "synth.split");
    for i in (1..labeled.len()).rev() {
        labeled.swap(i, split_rng.random_range(0..=i));
    }
    let n_train = (labeled.len() * 2 / 5).max(1);
    let mut train: Vec<usize> = labeled[..n_train].to_vec();
    let n_val = (labeled.len() / 10).max(1);
    let mut val: Vec<usize> = labeled[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = labeled[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Ok(Dataset {
        manifest: DatasetManifest {
            num_node_types: t,
            num_edge_types: graph.num_edge_types,
            target_type,
            num_classes: t,
            multilabel: false,
        },
        original_ids: (0..n as i64).collect(),
        graph,
        labels,
        split: Split { train, val, test },
    })
}
