//! Loader tests over hand-written dataset files. Every file here is typed
//! out literally so the tests pin the on-disk schema itself, not the
//! writer's idea of it.

use std::fs;
use std::path::Path;

use hinormer_core::{
    load_graph, write_dataset, DatasetPaths, FeatureRow, GraphError,
};
use tempfile::TempDir;

const MANIFEST_2T: &str = "num_node_types=2\nnum_edge_types=1\ntarget_type=0\nnum_classes=2\nmultilabel=false\n";

fn write_files(dir: &Path, manifest: &str, nodes: &str, edges: &str, labels: &str, split: &str) {
    fs::write(dir.join("manifest.txt"), manifest).unwrap();
    fs::write(dir.join("nodes.tsv"), nodes).unwrap();
    fs::write(dir.join("edges.tsv"), edges).unwrap();
    fs::write(dir.join("labels.tsv"), labels).unwrap();
    fs::write(dir.join("split.tsv"), split).unwrap();
}

fn load_dir(dir: &Path) -> Result<hinormer_core::Dataset, GraphError> {
    load_graph(&DatasetPaths::in_dir(dir))
}

#[test]
fn two_node_toy_loads_with_both_arc_directions() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t1.5,2.5\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    let ds = load_dir(dir.path()).unwrap();
    assert_eq!(ds.graph.num_nodes, 2);
    assert_eq!(ds.graph.num_edges, 1);
    assert_eq!(ds.graph.csr_targets.len(), 2, "one undirected edge, two arcs");
    assert_eq!(ds.graph.neighbor_set(0), vec![1]);
    assert_eq!(ds.graph.neighbor_set(1), vec![0]);
    assert_eq!(ds.graph.node_type, vec![0, 1]);
    assert_eq!(
        ds.graph.features.rows[0],
        FeatureRow::Dense(vec![1.5, 2.5])
    );
    assert_eq!(ds.graph.features.rows[1], FeatureRow::OneHot(1));
    assert!(ds.graph.features.is_onehot_identity(1));
    assert_eq!(ds.labels.class_of(0), Some(0));
    assert_eq!(ds.split.train, vec![0]);
    assert_eq!(ds.original_ids, vec![0, 1]);
}

#[test]
fn comments_and_blank_lines_are_skipped_but_counted() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "# node table\n\n0\t0\t-\n1\t1\t-\n\nnot-a-node\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { path, line, .. } => {
            assert!(path.ends_with("nodes.tsv"));
            assert_eq!(line, 6, "line numbers count comments and blanks");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn dangling_edge_endpoint_names_the_original_id() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t77\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::DanglingEndpoint { id } => assert_eq!(id, 77),
        other => panic!("expected a dangling endpoint, got {other:?}"),
    }
}

#[test]
fn feature_width_mismatch_names_node_and_expected_width() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t1.0,2.0\n1\t0\t3.0\n2\t1\t-\n",
        "0\t2\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::FeatureWidth { node, expected, got } => {
            assert_eq!(node, 1);
            assert_eq!(expected, 2);
            assert_eq!(got, 1);
        }
        other => panic!("expected a feature width error, got {other:?}"),
    }
}

#[test]
fn mixing_explicit_and_identity_features_within_a_type_is_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t1.0\n1\t0\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Inconsistent { msg } => assert!(msg.contains("mixes"), "{msg}"),
        other => panic!("expected an inconsistency, got {other:?}"),
    }
}

#[test]
fn node_type_beyond_manifest_count_is_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t5\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::TypeOutOfRange { what, got, max } => {
            assert_eq!(what, "node type");
            assert_eq!(got, 5);
            assert_eq!(max, 2);
        }
        other => panic!("expected a type range error, got {other:?}"),
    }
}

#[test]
fn labels_on_non_target_types_are_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0\n1\t1\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { path, line, msg } => {
            assert!(path.ends_with("labels.tsv"));
            assert_eq!(line, 2);
            assert!(msg.contains("target type"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn labeled_node_absent_from_split_is_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t0\t-\n2\t1\t-\n",
        "0\t2\t0\n",
        "0\t0\n1\t1\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Inconsistent { msg } => {
            assert!(msg.contains("labeled node 1"), "{msg}");
        }
        other => panic!("expected an inconsistency, got {other:?}"),
    }
}

#[test]
fn split_entries_for_unlabeled_nodes_are_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t0\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n1\ttest\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { path, line, msg } => {
            assert!(path.ends_with("split.tsv"));
            assert_eq!(line, 2);
            assert!(msg.contains("no label"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn duplicate_node_ids_are_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "4\t0\t-\n4\t1\t-\n",
        "",
        "",
        "",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Inconsistent { msg } => assert!(msg.contains("node id 4"), "{msg}"),
        other => panic!("expected an inconsistency, got {other:?}"),
    }
}

#[test]
fn self_loops_are_rejected_with_the_original_id() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "100\t0\t-\n200\t1\t-\n",
        "200\t200\t0\n",
        "100\t0\n",
        "100\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::SelfLoop { id } => assert_eq!(id, 200),
        other => panic!("expected a self-loop error, got {other:?}"),
    }
}

#[test]
fn duplicate_labels_and_split_rows_are_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0\n0\t1\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { line, msg, .. } => {
            assert_eq!(line, 2);
            assert!(msg.contains("twice"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n0\tval\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { line, msg, .. } => {
            assert_eq!(line, 2);
            assert!(msg.contains("twice"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn single_label_datasets_reject_multi_label_rows_and_bad_parts() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0,1\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { msg, .. } => assert!(msg.contains("multiple labels"), "{msg}"),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\tholdout\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { msg, .. } => assert!(msg.contains("holdout"), "{msg}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn out_of_range_labels_are_rejected() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t9\n",
        "0\ttrain\n",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { msg, .. } => assert!(msg.contains("out of range"), "{msg}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn missing_files_report_their_path() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        MANIFEST_2T,
        "0\t0\t-\n1\t1\t-\n",
        "0\t1\t0\n",
        "0\t0\n",
        "0\ttrain\n",
    );
    fs::remove_file(dir.path().join("edges.tsv")).unwrap();
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Io { path, .. } => assert!(path.ends_with("edges.tsv"), "{path}"),
        other => panic!("expected an io error, got {other:?}"),
    }
}

#[test]
fn manifest_problems_are_reported_by_key() {
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        "num_node_types=2\nnum_edge_types=1\nnum_classes=2\n",
        "0\t0\t-\n",
        "",
        "",
        "",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Inconsistent { msg } => assert!(msg.contains("target_type"), "{msg}"),
        other => panic!("expected a missing-key error, got {other:?}"),
    }

    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        "num_node_types=2\nnum_edge_types=1\ntarget_type=0\nnum_classes=2\nmystery=1\n",
        "0\t0\t-\n",
        "",
        "",
        "",
    );
    match load_dir(dir.path()).unwrap_err() {
        GraphError::Parse { line, msg, .. } => {
            assert_eq!(line, 5);
            assert!(msg.contains("mystery"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn sparse_original_ids_remap_to_dense_ascending_order() {
    let dir = TempDir::new().unwrap();
    // Ids deliberately out of order and far from dense.
    write_files(
        dir.path(),
        MANIFEST_2T,
        "900\t1\t-\n-5\t0\t-\n30\t0\t-\n",
        "-5\t900\t0\n30\t900\t0\n",
        "-5\t1\n30\t0\n",
        "-5\ttrain\n30\tval\n",
    );
    let ds = load_dir(dir.path()).unwrap();
    assert_eq!(ds.original_ids, vec![-5, 30, 900]);
    assert_eq!(ds.graph.node_type, vec![0, 0, 1]);
    assert_eq!(ds.graph.neighbor_set(2), vec![0, 1]);
    assert_eq!(ds.labels.class_of(0), Some(1));
    assert_eq!(ds.labels.class_of(1), Some(0));
    assert_eq!(ds.split.train, vec![0]);
    assert_eq!(ds.split.val, vec![1]);
}

#[test]
fn loaded_adjacency_matches_an_independent_oracle() {
    // A 30-node file with scattered ids and formula-driven edges; the
    // oracle adjacency is rebuilt from the same text with plain string
    // splitting and compared against the CSR.
    let n = 30;
    let ids: Vec<i64> = (0..n).map(|v| (v as i64) * 7 - 40).collect();
    let mut nodes = String::new();
    for (v, id) in ids.iter().enumerate() {
        nodes.push_str(&format!("{id}\t{}\t-\n", v % 3));
    }
    let mut edges = String::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for v in 0..n {
        for step in [1usize, 4, 9] {
            let u = (v + step) % n;
            if u != v {
                pairs.push((v, u));
                edges.push_str(&format!("{}\t{}\t0\n", ids[v], ids[u]));
            }
        }
    }
    let mut labels = String::new();
    let mut split = String::new();
    for (v, id) in ids.iter().enumerate() {
        if v % 3 == 0 {
            labels.push_str(&format!("{id}\t{}\n", v % 2));
            split.push_str(&format!("{id}\ttrain\n"));
        }
    }
    let dir = TempDir::new().unwrap();
    write_files(
        dir.path(),
        "num_node_types=3\nnum_edge_types=1\ntarget_type=0\nnum_classes=2\n",
        &nodes,
        &edges,
        &labels,
        &split,
    );
    let ds = load_dir(dir.path()).unwrap();

    // ids here are an increasing function of v, so dense id == v.
    let mut oracle = vec![std::collections::BTreeSet::new(); n];
    for &(v, u) in &pairs {
        oracle[v].insert(u);
        oracle[u].insert(v);
    }
    for v in 0..n {
        let want: Vec<usize> = oracle[v].iter().copied().collect();
        assert_eq!(ds.graph.neighbor_set(v), want, "neighbors of {v}");
    }
    assert_eq!(ds.graph.num_edges, pairs.len());
}

#[test]
fn writer_output_loads_back_verbatim_and_is_byte_stable() {
    let data = hinormer_core::synthesize(&hinormer_core::SynthConfig {
        num_nodes: 40,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    write_dataset(&data, a.path()).unwrap();
    write_dataset(&data, b.path()).unwrap();
    for name in ["manifest.txt", "nodes.tsv", "edges.tsv", "labels.tsv", "split.tsv"] {
        let ba = fs::read(a.path().join(name)).unwrap();
        let bb = fs::read(b.path().join(name)).unwrap();
        assert_eq!(ba, bb, "{name} differs between writes");
    }
    let back = load_dir(a.path()).unwrap();
    assert_eq!(back, data);
}
