//! In-memory heterogeneous graph: typed nodes and edges, CSR adjacency,
//! per-type feature storage, and the normalised adjacency operators the
//! encoders consume.

mod load;

pub use load::{load_graph, write_dataset, Dataset, DatasetManifest, DatasetPaths};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sparse::SparseMatrix;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("edge references node id {id} which is not in the node table")]
    DanglingEndpoint { id: i64 },
    #[error("{what} id {got} out of range (expected < {max})")]
    TypeOutOfRange {
        what: &'static str,
        got: usize,
        max: usize,
    },
    #[error("node {node}: feature width {got}, expected {expected} for its type")]
    FeatureWidth {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("self-loop on node id {id} is not supported")]
    SelfLoop { id: i64 },
    #[error("node id {id} out of range ({num_nodes} nodes)")]
    NodeOutOfRange { id: usize, num_nodes: usize },
    #[error("{msg}")]
    Inconsistent { msg: String },
}

/// Per-node feature storage. One-hot rows are virtual: they are consumed as
/// a row-select of the projection weights and never materialised.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureRow {
    Dense(Vec<f64>),
    /// Indicator of the node's own id, width = num_nodes.
    OneHot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// Feature width per node type. One-hot types have width num_nodes.
    pub per_type_dim: Vec<usize>,
    /// True for types whose features are the identity one-hot rows.
    pub onehot_types: Vec<bool>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn width_of_type(&self, t: usize) -> usize {
        self.per_type_dim[t]
    }

    pub fn is_onehot_identity(&self, t: usize) -> bool {
        self.onehot_types[t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub num_nodes: usize,
    /// Undirected edge count; parallel edges of distinct types count
    /// separately, exact duplicate (endpoints, type) triples are collapsed.
    pub num_edges: usize,
    pub num_node_types: usize,
    pub num_edge_types: usize,
    pub node_type: Vec<usize>,
    /// Canonical edge list, one entry per undirected edge, src < dst,
    /// sorted by (src, dst, type).
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_type: Vec<usize>,
    /// CSR over directed arcs (each edge stored in both directions),
    /// targets sorted ascending within each node, ties by edge type.
    pub csr_offsets: Vec<usize>,
    pub csr_targets: Vec<usize>,
    pub csr_edge_ids: Vec<usize>,
    pub features: FeatureTable,
}

impl HeteroGraph {
    /// Assemble a graph from raw parts, validating ids, symmetrising the
    /// edge list, and building the CSR index. Exact duplicate edges
    /// (same endpoints and type, either direction) collapse to one.
    pub fn from_parts(
        num_node_types: usize,
        num_edge_types: usize,
        node_type: Vec<usize>,
        edges: &[(usize, usize, usize)],
        features: FeatureTable,
    ) -> Result<Self, GraphError> {
        let n = node_type.len();
        for &t in &node_type {
            if t >= num_node_types {
                return Err(GraphError::TypeOutOfRange {
                    what: "node type",
                    got: t,
                    max: num_node_types,
                });
            }
        }
        if features.rows.len() != n {
            return Err(GraphError::Inconsistent {
                msg: format!(
                    "feature table has {} rows for {} nodes",
                    features.rows.len(),
                    n
                ),
            });
        }
        for (v, row) in features.rows.iter().enumerate() {
            let expected = features.per_type_dim[node_type[v]];
            let got = match row {
                FeatureRow::Dense(d) => d.len(),
                FeatureRow::OneHot(_) => expected,
            };
            if got != expected {
                return Err(GraphError::FeatureWidth {
                    node: v,
                    expected,
                    got,
                });
            }
        }

        let mut canon: Vec<(usize, usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v, t) in edges {
            if u >= n {
                return Err(GraphError::DanglingEndpoint { id: u as i64 });
            }
            if v >= n {
                return Err(GraphError::DanglingEndpoint { id: v as i64 });
            }
            if u == v {
                return Err(GraphError::SelfLoop { id: u as i64 });
            }
            if t >= num_edge_types {
                return Err(GraphError::TypeOutOfRange {
                    what: "edge type",
                    got: t,
                    max: num_edge_types,
                });
            }
            canon.push((u.min(v), u.max(v), t));
        }
        canon.sort_unstable();
        let before = canon.len();
        canon.dedup();
        if canon.len() < before {
            log::debug!("collapsed {} duplicate edges", before - canon.len());
        }

        let num_edges = canon.len();
        let mut edge_src = Vec::with_capacity(num_edges);
        let mut edge_dst = Vec::with_capacity(num_edges);
        let mut edge_type = Vec::with_capacity(num_edges);
        // Arcs as (source, target, edge type, edge id); the sort key gives
        // the required per-node target ordering.
        let mut arcs: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(2 * num_edges);
        for (eid, &(u, v, t)) in canon.iter().enumerate() {
            edge_src.push(u);
            edge_dst.push(v);
            edge_type.push(t);
            arcs.push((u, v, t, eid));
            arcs.push((v, u, t, eid));
        }
        arcs.sort_unstable();

        let mut csr_offsets = vec![0usize; n + 1];
        let mut csr_targets = Vec::with_capacity(arcs.len());
        let mut csr_edge_ids = Vec::with_capacity(arcs.len());
        for &(src, dst, _, eid) in &arcs {
            csr_offsets[src + 1] += 1;
            csr_targets.push(dst);
            csr_edge_ids.push(eid);
        }
        for i in 0..n {
            csr_offsets[i + 1] += csr_offsets[i];
        }

        Ok(HeteroGraph {
            num_nodes: n,
            num_edges,
            num_node_types,
            num_edge_types,
            node_type,
            edge_src,
            edge_dst,
            edge_type,
            csr_offsets,
            csr_targets,
            csr_edge_ids,
            features,
        })
    }

    /// Number of stored arcs out of `v` (parallel typed edges each count).
    pub fn degree(&self, v: usize) -> usize {
        self.csr_offsets[v + 1] - self.csr_offsets[v]
    }

    /// Neighbors of `v` with edge types, sorted by neighbor id ascending.
    pub fn neighbors(
        &self,
        v: usize,
    ) -> Result<impl Iterator<Item = (usize, usize)> + '_, GraphError> {
        if v >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange {
                id: v,
                num_nodes: self.num_nodes,
            });
        }
        let span = self.csr_offsets[v]..self.csr_offsets[v + 1];
        Ok(self.csr_targets[span.clone()]
            .iter()
            .copied()
            .zip(self.csr_edge_ids[span].iter().map(|&e| self.edge_type[e])))
    }

    /// Distinct neighbor ids of `v`, ascending (parallel edges collapsed).
    pub fn neighbor_set(&self, v: usize) -> Vec<usize> {
        let span = self.csr_offsets[v]..self.csr_offsets[v + 1];
        let mut out: Vec<usize> = self.csr_targets[span].to_vec();
        out.dedup();
        out
    }

    /// SHA-256 over the structural content (node types and canonical edge
    /// list); identifies a graph for sampler cache validation.
    pub fn structure_checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        h.update((self.num_node_types as u64).to_le_bytes());
        h.update((self.num_edge_types as u64).to_le_bytes());
        for &t in &self.node_type {
            h.update((t as u32).to_le_bytes());
        }
        for i in 0..self.num_edges {
            h.update((self.edge_src[i] as u64).to_le_bytes());
            h.update((self.edge_dst[i] as u64).to_le_bytes());
            h.update((self.edge_type[i] as u32).to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Symmetrically normalised adjacency D^{-1/2} A D^{-1/2} over the 0/1
/// (parallel-edge-collapsed) adjacency, optionally with self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrix: SparseMatrix,
    pub self_loops_added: bool,
}

pub fn build_normalized_adjacency(g: &HeteroGraph, self_loops: bool) -> NormalizedAdjacency {
    let n = g.num_nodes;
    let mut deg = vec![0.0f64; n];
    for v in 0..n {
        deg[v] = g.neighbor_set(v).len() as f64 + if self_loops { 1.0 } else { 0.0 };
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for v in 0..n {
        let mut row: Vec<(usize, f64)> = g
            .neighbor_set(v)
            .into_iter()
            .map(|u| (u, inv_sqrt[v] * inv_sqrt[u]))
            .collect();
        if self_loops {
            row.push((v, inv_sqrt[v] * inv_sqrt[v]));
        }
        rows.push(row);
    }
    NormalizedAdjacency {
        matrix: SparseMatrix::from_rows(n, n, rows),
        self_loops_added: self_loops,
    }
}

/// Row-stochastic mean aggregation D^{-1} A (optionally with self-loops):
/// each row averages over the neighbor set; isolated nodes without
/// self-loops get a zero row.
pub fn build_mean_adjacency(g: &HeteroGraph, self_loops: bool) -> SparseMatrix {
    let n = g.num_nodes;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for v in 0..n {
        let mut nbrs = g.neighbor_set(v);
        if self_loops {
            nbrs.push(v);
        }
        let w = if nbrs.is_empty() {
            0.0
        } else {
            1.0 / nbrs.len() as f64
        };
        rows.push(nbrs.into_iter().map(|u| (u, w)).collect());
    }
    SparseMatrix::from_rows(n, n, rows)
}

/// Plain 0/1 adjacency over the collapsed neighbor sets.
pub fn build_raw_adjacency(g: &HeteroGraph, self_loops: bool) -> SparseMatrix {
    let n = g.num_nodes;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for v in 0..n {
        let mut row: Vec<(usize, f64)> =
            g.neighbor_set(v).into_iter().map(|u| (u, 1.0)).collect();
        if self_loops {
            row.push((v, 1.0));
        }
        rows.push(row);
    }
    SparseMatrix::from_rows(n, n, rows)
}

/// Class labels over target-type nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub num_classes: usize,
    pub multilabel: bool,
    /// Per node: class ids, sorted ascending; None for unlabeled nodes.
    pub labels: Vec<Option<Vec<usize>>>,
}

impl LabelSet {
    pub fn label_of(&self, v: usize) -> Option<&[usize]> {
        self.labels[v].as_deref()
    }

    /// Single-label accessor; panics on multilabel rows with != 1 class.
    pub fn class_of(&self, v: usize) -> Option<usize> {
        self.labels[v].as_ref().map(|l| {
            assert_eq!(l.len(), 1, "node {} carries {} labels", v, l.len());
            l[0]
        })
    }

    pub fn labeled_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_some())
            .map(|(v, _)| v)
    }
}

/// Disjoint train/val/test partition of the labeled nodes, each sorted
/// ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn part(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}
