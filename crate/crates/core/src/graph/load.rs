//! Dataset file loading and writing.
//!
//! A dataset directory holds five UTF-8 tab-separated files:
//!
//! ```text
//! manifest.txt   key=value: num_node_types, num_edge_types, target_type,
//!                num_classes, multilabel
//! nodes.tsv      node_id \t node_type_id \t feature_csv-or-"-"
//! edges.tsv      src_id \t dst_id \t edge_type_id
//! labels.tsv     node_id \t label[,label...]
//! split.tsv      node_id \t train|val|test
//! ```
//!
//! Node ids may be arbitrary integers; they are remapped to dense 0-based
//! ids by ascending original id, and the mapping is kept on the loaded
//! dataset. A "-" feature column marks the node's type as one-hot identity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{FeatureRow, FeatureTable, GraphError, HeteroGraph, LabelSet, Split};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub num_node_types: usize,
    pub num_edge_types: usize,
    pub target_type: usize,
    pub num_classes: usize,
    pub multilabel: bool,
}

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            manifest: dir.join("manifest.txt"),
            nodes: dir.join("nodes.tsv"),
            edges: dir.join("edges.tsv"),
            labels: dir.join("labels.tsv"),
            split: dir.join("split.tsv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: HeteroGraph,
    pub labels: LabelSet,
    pub split: Split,
    pub manifest: DatasetManifest,
    /// Dense id -> original file id.
    pub original_ids: Vec<i64>,
}

fn read_to_string(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_manifest(path: &Path) -> Result<DatasetManifest, GraphError> {
    let text = read_to_string(path)?;
    let mut kv: HashMap<&str, (usize, &str)> = HashMap::new();
    for (ln, line) in content_lines(&text) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, ln, "expected key=value"))?;
        if kv.insert(k.trim(), (ln, v.trim())).is_some() {
            return Err(parse_err(path, ln, format!("duplicate key {}", k.trim())));
        }
    }
    let get = |key: &str| -> Result<(usize, &str), GraphError> {
        kv.get(key).copied().ok_or_else(GraphError::wrap_missing(path, key))
    };
    let get_usize = |key: &str| -> Result<usize, GraphError> {
        let (ln, v) = get(key)?;
        v.parse()
            .map_err(|_| parse_err(path, ln, format!("{key} must be a non-negative integer")))
    };
    let multilabel = match kv.get("multilabel") {
        None => false,
        Some(&(ln, v)) => match v {
            "true" | "1" => true,
            "false" | "0" => false,
            _ => return Err(parse_err(path, ln, "multilabel must be true or false")),
        },
    };
    for &k in kv.keys() {
        if !matches!(
            k,
            "num_node_types" | "num_edge_types" | "target_type" | "num_classes" | "multilabel"
        ) {
            let ln = kv[k].0;
            return Err(parse_err(path, ln, format!("unknown manifest key {k}")));
        }
    }
    Ok(DatasetManifest {
        num_node_types: get_usize("num_node_types")?,
        num_edge_types: get_usize("num_edge_types")?,
        target_type: get_usize("target_type")?,
        num_classes: get_usize("num_classes")?,
        multilabel,
    })
}

impl GraphError {
    fn wrap_missing<'a>(path: &'a Path, key: &'a str) -> impl Fn() -> GraphError + 'a {
        move || GraphError::Inconsistent {
            msg: format!("{}: missing required key {}", path.display(), key),
        }
    }
}

/// Load a dataset from its five files. See the module docs for the schema.
pub fn load_graph(paths: &DatasetPaths) -> Result<Dataset, GraphError> {
    let manifest = parse_manifest(&paths.manifest)?;
    if manifest.target_type >= manifest.num_node_types {
        return Err(GraphError::TypeOutOfRange {
            what: "target node type",
            got: manifest.target_type,
            max: manifest.num_node_types,
        });
    }

    // Pass 1 over nodes: original ids and type/feature columns.
    let node_text = read_to_string(&paths.nodes)?;
    let mut raw_nodes: Vec<(i64, usize, Option<Vec<f64>>)> = Vec::new();
    for (ln, line) in content_lines(&node_text) {
        let mut cols = line.split('\t');
        let id: i64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| parse_err(&paths.nodes, ln, "bad node id"))?;
        let ty: usize = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| parse_err(&paths.nodes, ln, "bad node type id"))?;
        if ty >= manifest.num_node_types {
            return Err(GraphError::TypeOutOfRange {
                what: "node type",
                got: ty,
                max: manifest.num_node_types,
            });
        }
        let feat = match cols.next() {
            None | Some("-") => None,
            Some(csv) => {
                let mut vals = Vec::new();
                for piece in csv.split(',') {
                    let v: f64 = piece.trim().parse().map_err(|_| {
                        parse_err(&paths.nodes, ln, format!("bad feature value {piece:?}"))
                    })?;
                    vals.push(v);
                }
                Some(vals)
            }
        };
        if cols.next().is_some() {
            return Err(parse_err(&paths.nodes, ln, "too many columns"));
        }
        raw_nodes.push((id, ty, feat));
    }

    // Dense remap by ascending original id.
    let mut order: Vec<usize> = (0..raw_nodes.len()).collect();
    order.sort_by_key(|&i| raw_nodes[i].0);
    for w in order.windows(2) {
        if raw_nodes[w[0]].0 == raw_nodes[w[1]].0 {
            return Err(GraphError::Inconsistent {
                msg: format!(
                    "{}: node id {} appears twice",
                    paths.nodes.display(),
                    raw_nodes[w[0]].0
                ),
            });
        }
    }
    let original_ids: Vec<i64> = order.iter().map(|&i| raw_nodes[i].0).collect();
    let id_map: HashMap<i64, usize> = original_ids
        .iter()
        .enumerate()
        .map(|(dense, &orig)| (orig, dense))
        .collect();

    let n = original_ids.len();
    let node_type: Vec<usize> = order.iter().map(|&i| raw_nodes[i].1).collect();

    // Per-type feature layout: every node of a type must agree on dense
    // width or on being one-hot ("-").
    let mut per_type_dim: Vec<Option<usize>> = vec![None; manifest.num_node_types];
    let mut onehot_types: Vec<Option<bool>> = vec![None; manifest.num_node_types];
    for &i in &order {
        let (_, ty, ref feat) = raw_nodes[i];
        let (is_onehot, width) = match feat {
            None => (true, n),
            Some(v) => (false, v.len()),
        };
        match onehot_types[ty] {
            None => {
                onehot_types[ty] = Some(is_onehot);
                per_type_dim[ty] = Some(width);
            }
            Some(prev) if prev != is_onehot => {
                return Err(GraphError::Inconsistent {
                    msg: format!(
                        "{}: node type {} mixes explicit features and \"-\"",
                        paths.nodes.display(),
                        ty
                    ),
                });
            }
            Some(_) => {
                let expected = per_type_dim[ty].unwrap();
                if width != expected {
                    return Err(GraphError::FeatureWidth {
                        node: id_map[&raw_nodes[i].0],
                        expected,
                        got: width,
                    });
                }
            }
        }
    }
    // Types with no nodes: width 0, not one-hot.
    let per_type_dim: Vec<usize> = per_type_dim.into_iter().map(|d| d.unwrap_or(0)).collect();
    let onehot_types: Vec<bool> = onehot_types
        .into_iter()
        .map(|o| o.unwrap_or(false))
        .collect();

    let mut rows: Vec<FeatureRow> = Vec::with_capacity(n);
    for (dense, &i) in order.iter().enumerate() {
        rows.push(match raw_nodes[i].2.clone() {
            Some(v) => FeatureRow::Dense(v),
            None => FeatureRow::OneHot(dense),
        });
    }

    let features = FeatureTable {
        per_type_dim,
        onehot_types,
        rows,
    };

    // Edges.
    let edge_text = read_to_string(&paths.edges)?;
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for (ln, line) in content_lines(&edge_text) {
        let mut cols = line.split('\t');
        let mut endpoint = |what: &'static str| -> Result<usize, GraphError> {
            let raw: i64 = cols
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| parse_err(&paths.edges, ln, format!("bad {what} id")))?;
            id_map
                .get(&raw)
                .copied()
                .ok_or(GraphError::DanglingEndpoint { id: raw })
        };
        let src = endpoint("source")?;
        let dst = endpoint("target")?;
        let ty: usize = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| parse_err(&paths.edges, ln, "bad edge type id"))?;
        if src == dst {
            return Err(GraphError::SelfLoop {
                id: original_ids[src],
            });
        }
        edges.push((src, dst, ty));
    }

    let graph = HeteroGraph::from_parts(
        manifest.num_node_types,
        manifest.num_edge_types,
        node_type,
        &edges,
        features,
    )?;

    // Labels.
    let label_text = read_to_string(&paths.labels)?;
    let mut labels: Vec<Option<Vec<usize>>> = vec![None; n];
    for (ln, line) in content_lines(&label_text) {
        let (id_col, label_col) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(&paths.labels, ln, "expected node_id<TAB>labels"))?;
        let raw: i64 = id_col
            .parse()
            .map_err(|_| parse_err(&paths.labels, ln, "bad node id"))?;
        let &v = id_map
            .get(&raw)
            .ok_or(GraphError::DanglingEndpoint { id: raw })?;
        if graph.node_type[v] != manifest.target_type {
            return Err(parse_err(
                &paths.labels,
                ln,
                format!(
                    "node {} has type {}, labels are only valid on target type {}",
                    raw, graph.node_type[v], manifest.target_type
                ),
            ));
        }
        if labels[v].is_some() {
            return Err(parse_err(&paths.labels, ln, format!("node {raw} labeled twice")));
        }
        let mut classes = Vec::new();
        for piece in label_col.split(',') {
            let c: usize = piece
                .trim()
                .parse()
                .map_err(|_| parse_err(&paths.labels, ln, format!("bad label {piece:?}")))?;
            if c >= manifest.num_classes {
                return Err(parse_err(
                    &paths.labels,
                    ln,
                    format!("label {} out of range ({} classes)", c, manifest.num_classes),
                ));
            }
            classes.push(c);
        }
        if !manifest.multilabel && classes.len() != 1 {
            return Err(parse_err(
                &paths.labels,
                ln,
                "single-label dataset line carries multiple labels",
            ));
        }
        classes.sort_unstable();
        classes.dedup();
        labels[v] = Some(classes);
    }
    let labels = LabelSet {
        num_classes: manifest.num_classes,
        multilabel: manifest.multilabel,
        labels,
    };

    // Split.
    let split_text = read_to_string(&paths.split)?;
    let mut assignment: Vec<Option<u8>> = vec![None; n];
    for (ln, line) in content_lines(&split_text) {
        let (id_col, part) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(&paths.split, ln, "expected node_id<TAB>part"))?;
        let raw: i64 = id_col
            .parse()
            .map_err(|_| parse_err(&paths.split, ln, "bad node id"))?;
        let &v = id_map
            .get(&raw)
            .ok_or(GraphError::DanglingEndpoint { id: raw })?;
        if labels.labels[v].is_none() {
            return Err(parse_err(
                &paths.split,
                ln,
                format!("node {raw} is in the split but has no label"),
            ));
        }
        if assignment[v].is_some() {
            return Err(parse_err(&paths.split, ln, format!("node {raw} split twice")));
        }
        assignment[v] = Some(match part {
            "train" => 0,
            "val" => 1,
            "test" => 2,
            other => {
                return Err(parse_err(
                    &paths.split,
                    ln,
                    format!("bad split value {other:?} (want train|val|test)"),
                ))
            }
        });
    }
    for v in labels.labeled_nodes() {
        if assignment[v].is_none() {
            return Err(GraphError::Inconsistent {
                msg: format!(
                    "{}: labeled node {} missing from the split",
                    paths.split.display(),
                    original_ids[v]
                ),
            });
        }
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (v, a) in assignment.iter().enumerate() {
        match a {
            Some(0) => split.train.push(v),
            Some(1) => split.val.push(v),
            Some(2) => split.test.push(v),
            _ => {}
        }
    }

    Ok(Dataset {
        graph,
        labels,
        split,
        manifest,
        original_ids,
    })
}

/// Write a dataset back to the five-file format. Inverse of [`load_graph`]:
/// loading the written files reproduces the dataset exactly.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), GraphError> {
    let wrap = |path: &Path| {
        let p = path.display().to_string();
        move |source: std::io::Error| GraphError::Io { path: p.clone(), source }
    };
    fs::create_dir_all(dir).map_err(wrap(dir))?;
    let paths = DatasetPaths::in_dir(dir);

    let m = &ds.manifest;
    let manifest_text = format!(
        "num_node_types={}\nnum_edge_types={}\ntarget_type={}\nnum_classes={}\nmultilabel={}\n",
        m.num_node_types, m.num_edge_types, m.target_type, m.num_classes, m.multilabel
    );
    fs::write(&paths.manifest, manifest_text).map_err(wrap(&paths.manifest))?;

    let g = &ds.graph;
    let mut nodes = String::new();
    for v in 0..g.num_nodes {
        let feat = match &g.features.rows[v] {
            FeatureRow::OneHot(_) => "-".to_string(),
            FeatureRow::Dense(vals) => {
                let mut s = String::new();
                for (i, x) in vals.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    // RFC-compliant shortest round-trip formatting of f64.
                    let _ = write!(s, "{x}");
                }
                s
            }
        };
        let _ = writeln!(
            nodes,
            "{}\t{}\t{}",
            ds.original_ids[v], g.node_type[v], feat
        );
    }
    fs::write(&paths.nodes, nodes).map_err(wrap(&paths.nodes))?;

    let mut edges = String::new();
    for e in 0..g.num_edges {
        let _ = writeln!(
            edges,
            "{}\t{}\t{}",
            ds.original_ids[g.edge_src[e]],
            ds.original_ids[g.edge_dst[e]],
            g.edge_type[e]
        );
    }
    fs::write(&paths.edges, edges).map_err(wrap(&paths.edges))?;

    let mut labels = String::new();
    for v in ds.labels.labeled_nodes() {
        let classes = ds.labels.label_of(v).unwrap();
        let list = classes
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(labels, "{}\t{}", ds.original_ids[v], list);
    }
    fs::write(&paths.labels, labels).map_err(wrap(&paths.labels))?;

    let mut split = String::new();
    for (part, ids) in [
        ("train", &ds.split.train),
        ("val", &ds.split.val),
        ("test", &ds.split.test),
    ] {
        for &v in ids {
            let _ = writeln!(split, "{}\t{}", ds.original_ids[v], part);
        }
    }
    fs::write(&paths.split, split).map_err(wrap(&paths.split))?;
    Ok(())
}
