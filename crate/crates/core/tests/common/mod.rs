//! Shared fixtures and independent oracles for the integration suites.
//! Oracles here recompute results from first principles (dense matrices,
//! BFS, explicit scans) so they share no code with the implementations
//! they check.

#![allow(dead_code)]

use hinormer_core::{
    Dataset, DatasetManifest, FeatureRow, FeatureTable, HeteroGraph, LabelSet, Split, Tensor,
};
use proptest::prelude::*;

/// Dense `D^{-1/2} (A + optional I) D^{-1/2}` built by a straight scan of
/// the edge list, independent of the CSR and sparse-matrix code. A is the
/// 0/1 relation over distinct endpoint pairs, so typed parallel edges
/// contribute once.
pub fn dense_normalized_adjacency(g: &HeteroGraph, self_loops: bool) -> Vec<Vec<f64>> {
    let n = g.num_nodes;
    let mut a = vec![vec![0.0f64; n]; n];
    for e in 0..g.num_edges {
        let (u, v) = (g.edge_src[e], g.edge_dst[e]);
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    if self_loops {
        for (v, row) in a.iter_mut().enumerate() {
            row[v] += 1.0;
        }
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    for u in 0..n {
        for v in 0..n {
            a[u][v] *= inv_sqrt[u] * inv_sqrt[v];
        }
    }
    a
}

/// Shortest-path hop counts from `start` over an undirected edge list.
pub fn bfs_distances(n: usize, edges: &[(usize, usize)], start: usize) -> Vec<Option<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut dist = vec![None; n];
    dist[start] = Some(0);
    let mut frontier = vec![start];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Largest absolute eigenvalue of a dense symmetric matrix by power
/// iteration with a fixed deterministic start.
pub fn spectral_radius(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin() * 0.1).collect();
    let mut lambda = 0.0;
    for _ in 0..300 {
        let y: Vec<f64> = m
            .iter()
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect();
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        x = y.iter().map(|v| v / norm).collect();
    }
    lambda
}

/// Bare description of a random graph, kept alongside the built value so
/// oracles can rescan the raw edge list.
#[derive(Debug, Clone)]
pub struct RawGraph {
    pub num_nodes: usize,
    pub num_node_types: usize,
    pub num_edge_types: usize,
    pub node_type: Vec<usize>,
    pub edges: Vec<(usize, usize, usize)>,
    /// Per type: None = one-hot identity, Some(w) = dense width w.
    pub dense_width: Vec<Option<usize>>,
}

impl RawGraph {
    pub fn build(&self) -> HeteroGraph {
        let n = self.num_nodes;
        let per_type_dim: Vec<usize> = self
            .dense_width
            .iter()
            .map(|w| w.unwrap_or(n))
            .collect();
        let onehot_types: Vec<bool> = self.dense_width.iter().map(|w| w.is_none()).collect();
        let rows: Vec<FeatureRow> = (0..n)
            .map(|v| match self.dense_width[self.node_type[v]] {
                None => FeatureRow::OneHot(v),
                Some(w) => FeatureRow::Dense(
                    (0..w).map(|k| ((v * 31 + k * 7) as f64).sin()).collect(),
                ),
            })
            .collect();
        HeteroGraph::from_parts(
            self.num_node_types,
            self.num_edge_types,
            self.node_type.clone(),
            &self.edges,
            FeatureTable {
                per_type_dim,
                onehot_types,
                rows,
            },
        )
        .expect("generated graph parts are valid")
    }

    /// Untyped undirected edge list for BFS-style oracles.
    pub fn plain_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(u, v, _)| (u, v)).collect()
    }
}

/// Random graph description: every type occurs, no self loops, at least
/// one edge, possibly disconnected.
pub fn arb_raw_graph(max_nodes: usize) -> impl Strategy<Value = RawGraph> {
    (2..=max_nodes, 1usize..=3, 1usize..=2).prop_flat_map(|(n, t, et)| {
        let t = t.min(n);
        let types = proptest::collection::vec(0..t, n);
        let edges = proptest::collection::vec(((0..n), (0..n), (0..et)), 1..=(3 * n).max(2));
        let widths = proptest::collection::vec(proptest::option::of(1usize..=4), t);
        (types, edges, widths).prop_map(move |(mut node_type, edges, dense_width)| {
            for ty in 0..t {
                node_type[ty] = ty;
            }
            let edges: Vec<(usize, usize, usize)> =
                edges.into_iter().filter(|&(u, v, _)| u != v).collect();
            RawGraph {
                num_nodes: n,
                num_node_types: t,
                num_edge_types: et,
                node_type,
                edges,
                dense_width,
            }
        })
    })
}

/// A labeled dataset over a random graph: target type 0, every type-0
/// node labeled, split assigned round-robin, ids already dense.
pub fn arb_dataset(max_nodes: usize) -> impl Strategy<Value = Dataset> {
    (arb_raw_graph(max_nodes), 2usize..=4, any::<bool>()).prop_map(
        |(raw, num_classes, multilabel)| {
            let graph = raw.build();
            let target_type = 0usize;
            let labels: Vec<Option<Vec<usize>>> = (0..graph.num_nodes)
                .map(|v| {
                    (graph.node_type[v] == target_type).then(|| {
                        if multilabel {
                            let mut ls: Vec<usize> =
                                (0..num_classes).filter(|c| (v + c) % 3 == 0).collect();
                            if ls.is_empty() {
                                ls.push(v % num_classes);
                            }
                            ls
                        } else {
                            vec![v % num_classes]
                        }
                    })
                })
                .collect();
            let label_set = LabelSet {
                num_classes,
                multilabel,
                labels,
            };
            let mut split = Split {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (i, v) in label_set.labeled_nodes().enumerate() {
                match i % 3 {
                    0 => split.train.push(v),
                    1 => split.val.push(v),
                    _ => split.test.push(v),
                }
            }
            let manifest = DatasetManifest {
                num_node_types: graph.num_node_types,
                num_edge_types: graph.num_edge_types,
                target_type,
                num_classes,
                multilabel,
            };
            Dataset {
                original_ids: (0..graph.num_nodes as i64).collect(),
                graph,
                labels: label_set,
                split,
                manifest,
            }
        },
    )
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
