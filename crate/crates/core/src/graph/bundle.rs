//! Directory-based dataset bundles.
//!
//! ```text
//! meta.json     {"kind":"node"|"graphset","n_nodes":int|null,"n_features":int,"n_classes":int,"name":str}
//! edges.tsv     "u\tv" per line, or "g\tu\tv" for graph sets (node ids local to the graph)
//! features.csv  one comma-separated row per node, prefixed by "g," for graph sets; absent when n_features = 0
//! labels.csv    "node_id,label" or "graph_id,label"
//! split.json    optional {"train":[..],"val":[..],"test":[..]}
//! ```
//!
//! Graph-set bundles also carry `"graph_sizes"` in `meta.json` so featureless
//! graphs keep their isolated nodes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, GraphSet, Split};
use crate::autodiff::{CsrMatrix, Matrix};
use crate::error::{BundleError, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BundleKind {
    Node,
    Graphset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub kind: BundleKind,
    pub n_nodes: Option<usize>,
    pub n_features: usize,
    pub n_classes: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_sizes: Option<Vec<usize>>,
}

struct Lines {
    file: PathBuf,
    text: String,
}

impl Lines {
    fn read(dir: &Path, name: &str) -> Result<Option<Lines>> {
        let file = dir.join(name);
        match fs::read_to_string(&file) {
            Ok(text) => Ok(Some(Lines { file, text })),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(file, e)),
        }
    }

    fn require(dir: &Path, name: &str) -> Result<Lines> {
        Lines::read(dir, name)?.ok_or_else(|| BundleError::Missing { file: dir.join(name) }.into())
    }

    /// Non-blank lines with their 1-based line numbers.
    fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
    }

    fn parse_err(&self, line: usize, msg: impl Into<String>) -> Error {
        BundleError::Parse { file: self.file.clone(), line, msg: msg.into() }.into()
    }

    fn inconsistent(&self, line: usize, msg: impl Into<String>) -> Error {
        BundleError::Inconsistent { file: self.file.clone(), line, msg: msg.into() }.into()
    }

    fn field<T: std::str::FromStr>(&self, line: usize, raw: &str, what: &str) -> Result<T> {
        raw.trim().parse().map_err(|_| self.parse_err(line, format!("cannot parse {what} from '{raw}'")))
    }
}

fn read_meta(dir: &Path) -> Result<BundleMeta> {
    let lines = Lines::require(dir, "meta.json")?;
    serde_json::from_str(&lines.text).map_err(|e| lines.parse_err(e.line(), e.to_string()))
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    match meta.kind {
        BundleKind::Node => load_node(dir, &meta),
        BundleKind::Graphset => load_graphset(dir, &meta).map(Dataset::Graphs),
    }
}

fn parse_edge(lines: &Lines, line: usize, u: &str, v: &str, n: usize) -> Result<(usize, usize)> {
    let u: usize = lines.field(line, u, "node id")?;
    let v: usize = lines.field(line, v, "node id")?;
    if u >= n || v >= n {
        return Err(BundleError::NonSquare {
            file: lines.file.clone(),
            line,
            msg: format!("edge ({u},{v}) references a node id >= n_nodes {n}"),
        }
        .into());
    }
    if u == v {
        return Err(BundleError::SelfLoop { file: lines.file.clone(), line, node: u }.into());
    }
    Ok((u, v))
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix {
    let mut trip: Vec<(usize, usize, f64)> = edges.iter().flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)]).collect();
    trip.sort_by_key(|&(r, c, _)| (r, c));
    trip.dedup_by_key(|t| (t.0, t.1));
    CsrMatrix::from_triplets(n, n, trip).expect("ids validated")
}

fn parse_floats(lines: &Lines, line: usize, raw: &[&str], d: usize) -> Result<Vec<f64>> {
    if raw.len() != d {
        return Err(lines.inconsistent(line, format!("{} feature values, expected {d}", raw.len())));
    }
    raw.iter()
        .map(|s| {
            let v: f64 = lines.field(line, s, "feature value")?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(lines.parse_err(line, format!("non-finite feature '{s}'")))
            }
        })
        .collect()
}

fn parse_label(lines: &Lines, line: usize, raw: &str, n_classes: usize) -> Result<usize> {
    let label: i64 = lines.field(line, raw, "label")?;
    if label < 0 || label as usize >= n_classes {
        return Err(BundleError::LabelOutOfRange { file: lines.file.clone(), line, label, n_classes }.into());
    }
    Ok(label as usize)
}

fn no_feature_file(dir: &Path) -> Result<()> {
    if let Some(f) = Lines::read(dir, "features.csv")? {
        if let Some((line, _)) = f.iter().next() {
            return Err(f.inconsistent(line, "features.csv present but meta.json declares n_features = 0"));
        }
    }
    Ok(())
}

fn load_node(dir: &Path, meta: &BundleMeta) -> Result<Dataset> {
    let meta_file = dir.join("meta.json");
    let n = meta.n_nodes.ok_or_else(|| BundleError::Inconsistent {
        file: meta_file.clone(),
        line: 1,
        msg: "node bundle needs an integer n_nodes".into(),
    })?;
    let d = meta.n_features;

    let edge_lines = Lines::require(dir, "edges.tsv")?;
    let mut edges = Vec::new();
    for (line, text) in edge_lines.iter() {
        let parts: Vec<&str> = text.split('\t').collect();
        if parts.len() != 2 {
            return Err(edge_lines.parse_err(line, format!("expected 'u\\tv', got {} fields", parts.len())));
        }
        edges.push(parse_edge(&edge_lines, line, parts[0], parts[1], n)?);
    }

    let features = if d == 0 {
        no_feature_file(dir)?;
        Matrix::zeros(n, 0)
    } else {
        let f = Lines::require(dir, "features.csv")?;
        let mut data = Vec::with_capacity(n * d);
        let mut rows = 0;
        let mut last = 0;
        for (line, text) in f.iter() {
            let raw: Vec<&str> = text.split(',').collect();
            data.extend(parse_floats(&f, line, &raw, d)?);
            rows += 1;
            last = line;
        }
        if rows != n {
            return Err(f.inconsistent(last, format!("{rows} feature rows for n_nodes {n}")));
        }
        Matrix::from_vec(n, d, data)?
    };

    let labels = match Lines::read(dir, "labels.csv")? {
        None => None,
        Some(f) => {
            let mut labels = vec![None; n];
            let mut last = 0;
            for (line, text) in f.iter() {
                let (id, lab) = text.split_once(',').ok_or_else(|| f.parse_err(line, "expected 'node_id,label'"))?;
                let id: usize = f.field(line, id, "node id")?;
                if id >= n {
                    return Err(f.inconsistent(line, format!("node id {id} >= n_nodes {n}")));
                }
                let lab = parse_label(&f, line, lab, meta.n_classes)?;
                if labels[id].replace(lab).is_some() {
                    return Err(f.inconsistent(line, format!("node {id} labelled twice")));
                }
                last = line;
            }
            let labels: Option<Vec<usize>> = labels.into_iter().collect();
            Some(labels.ok_or_else(|| f.inconsistent(last, "not every node has a label"))?)
        }
    };

    let split = match Lines::read(dir, "split.json")? {
        None => None,
        Some(f) => {
            let s: Split = serde_json::from_str(&f.text).map_err(|e| f.parse_err(e.line(), e.to_string()))?;
            s.validate(n).map_err(|e| f.inconsistent(1, e.to_string()))?;
            Some(s)
        }
    };

    let graph = Graph::from_parts(meta.name.clone(), adjacency(n, &edges), features, labels, meta.n_classes)
        .map_err(|e| BundleError::Inconsistent { file: meta_file, line: 1, msg: e.to_string() })?;
    Ok(Dataset::Nodes { graph, split })
}

fn load_graphset(dir: &Path, meta: &BundleMeta) -> Result<GraphSet> {
    let meta_file = dir.join("meta.json");
    let d = meta.n_features;

    let label_lines = Lines::require(dir, "labels.csv")?;
    let mut labels: Vec<Option<usize>> = Vec::new();
    let mut last = 0;
    for (line, text) in label_lines.iter() {
        let (id, lab) = text.split_once(',').ok_or_else(|| label_lines.parse_err(line, "expected 'graph_id,label'"))?;
        let id: usize = label_lines.field(line, id, "graph id")?;
        let lab = parse_label(&label_lines, line, lab, meta.n_classes)?;
        if id >= labels.len() {
            labels.resize(id + 1, None);
        }
        if labels[id].replace(lab).is_some() {
            return Err(label_lines.inconsistent(line, format!("graph {id} labelled twice")));
        }
        last = line;
    }
    let n_graphs = labels.len();
    let labels: Vec<usize> =
        labels.into_iter().collect::<Option<_>>().ok_or_else(|| label_lines.inconsistent(last, "graph ids must be contiguous from 0"))?;

    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); n_graphs];
    let mut counted = vec![0usize; n_graphs];
    if d == 0 {
        no_feature_file(dir)?;
    } else {
        let f = Lines::require(dir, "features.csv")?;
        for (line, text) in f.iter() {
            let raw: Vec<&str> = text.split(',').collect();
            let g: usize = f.field(line, raw[0], "graph id")?;
            if g >= n_graphs {
                return Err(f.inconsistent(line, format!("graph id {g} has no label")));
            }
            feats[g].extend(parse_floats(&f, line, &raw[1..], d)?);
            counted[g] += 1;
        }
    }
    let sizes = match &meta.graph_sizes {
        Some(s) => {
            if s.len() != n_graphs {
                return Err(BundleError::Inconsistent {
                    file: meta_file,
                    line: 1,
                    msg: format!("graph_sizes lists {} graphs, labels.csv {n_graphs}", s.len()),
                }
                .into());
            }
            if d > 0 {
                if let Some(g) = (0..n_graphs).find(|&g| counted[g] != s[g]) {
                    return Err(BundleError::Inconsistent {
                        file: dir.join("features.csv"),
                        line: 0,
                        msg: format!("graph {g} has {} feature rows but graph_sizes says {}", counted[g], s[g]),
                    }
                    .into());
                }
            }
            s.clone()
        }
        None if d > 0 => counted,
        None => {
            return Err(
                BundleError::Inconsistent { file: meta_file, line: 1, msg: "graph_sizes is required when n_features = 0".into() }.into()
            )
        }
    };
    if let Some(total) = meta.n_nodes {
        let sum: usize = sizes.iter().sum();
        if sum != total {
            return Err(BundleError::Inconsistent {
                file: meta_file,
                line: 1,
                msg: format!("n_nodes {total} but graphs hold {sum} nodes"),
            }
            .into());
        }
    }

    let edge_lines = Lines::require(dir, "edges.tsv")?;
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (line, text) in edge_lines.iter() {
        let parts: Vec<&str> = text.split('\t').collect();
        if parts.len() != 3 {
            return Err(edge_lines.parse_err(line, format!("expected 'g\\tu\\tv', got {} fields", parts.len())));
        }
        let g: usize = edge_lines.field(line, parts[0], "graph id")?;
        if g >= n_graphs {
            return Err(edge_lines.inconsistent(line, format!("graph id {g} has no label")));
        }
        edges[g].push(parse_edge(&edge_lines, line, parts[1], parts[2], sizes[g])?);
    }

    let graphs = (0..n_graphs)
        .map(|g| {
            let x = Matrix::from_vec(sizes[g], d, std::mem::take(&mut feats[g]))?;
            Graph::from_parts(format!("{}#{g}", meta.name), adjacency(sizes[g], &edges[g]), x, None, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    GraphSet::new(meta.name.clone(), graphs, labels, meta.n_classes)
}

fn write(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn row_text(row: &[f64]) -> String {
    row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes a bundle that [`load_bundle`] reads back to an equal dataset.
pub fn save_bundle(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for stale in ["features.csv", "labels.csv", "split.json"] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(p, e))?;
        }
    }
    let meta = match data {
        Dataset::Nodes { graph, split } => {
            let mut edges = String::new();
            for (u, v) in graph.edges() {
                edges.push_str(&format!("{u}\t{v}\n"));
            }
            write(dir.join("edges.tsv"), edges)?;
            if graph.n_features() > 0 {
                let rows: String = (0..graph.n()).map(|v| row_text(graph.features().row(v)) + "\n").collect();
                write(dir.join("features.csv"), rows)?;
            }
            if let Some(labels) = graph.labels() {
                let text: String = labels.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
                write(dir.join("labels.csv"), text)?;
            }
            if let Some(s) = split {
                write(dir.join("split.json"), serde_json::to_string(s).expect("plain data"))?;
            }
            BundleMeta {
                kind: BundleKind::Node,
                n_nodes: Some(graph.n()),
                n_features: graph.n_features(),
                n_classes: graph.n_classes(),
                name: graph.name().to_string(),
                graph_sizes: None,
            }
        }
        Dataset::Graphs(gs) => {
            let mut edges = String::new();
            let mut feats = String::new();
            for (g, graph) in gs.graphs().iter().enumerate() {
                for (u, v) in graph.edges() {
                    edges.push_str(&format!("{g}\t{u}\t{v}\n"));
                }
                if graph.n_features() > 0 {
                    for v in 0..graph.n() {
                        feats.push_str(&format!("{g},{}\n", row_text(graph.features().row(v))));
                    }
                }
            }
            write(dir.join("edges.tsv"), edges)?;
            if gs.n_features() > 0 {
                write(dir.join("features.csv"), feats)?;
            }
            let labels: String = gs.labels().iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
            write(dir.join("labels.csv"), labels)?;
            let sizes: Vec<usize> = gs.graphs().iter().map(Graph::n).collect();
            BundleMeta {
                kind: BundleKind::Graphset,
                n_nodes: Some(sizes.iter().sum()),
                n_features: gs.n_features(),
                n_classes: gs.n_classes(),
                name: gs.name.clone(),
                graph_sizes: Some(sizes),
            }
        }
    };
    write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("plain data") + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_sbm, SbmParams};

    fn put(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn minimal(dir: &Path) {
        put(dir, "meta.json", r#"{"kind":"node","n_nodes":2,"n_features":1,"n_classes":0,"name":"tiny"}"#);
        put(dir, "edges.tsv", "0\t1\n");
        put(dir, "features.csv", "1\n2\n");
    }

    #[test]
    fn minimal_bundle() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        let Dataset::Nodes { graph, split } = load_bundle(tmp.path()).unwrap() else { panic!() };
        assert_eq!(graph.adjacency().nnz(), 2);
        assert!(graph.adjacency().is_symmetric());
        assert_eq!(graph.features().data(), &[1.0, 2.0]);
        assert!(split.is_none());
    }

    #[test]
    fn out_of_range_edge_names_line() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        put(tmp.path(), "edges.tsv", "0\t1\n1\t5\n");
        let err = load_bundle(tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Bundle(BundleError::NonSquare { line: 2, .. })), "{err}");
        assert!(err.to_string().contains("edges.tsv:2"));
    }

    #[test]
    fn distinct_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path();
        assert!(matches!(load_bundle(p), Err(Error::Bundle(BundleError::Missing { .. }))));
        minimal(p);
        put(p, "edges.tsv", "1\t1\n");
        assert!(matches!(load_bundle(p), Err(Error::Bundle(BundleError::SelfLoop { line: 1, .. }))));
        minimal(p);
        put(p, "features.csv", "1\n");
        assert!(matches!(load_bundle(p), Err(Error::Bundle(BundleError::Inconsistent { .. }))));
        minimal(p);
        put(p, "edges.tsv", "0\tx\n");
        assert!(matches!(load_bundle(p), Err(Error::Bundle(BundleError::Parse { line: 1, .. }))));
        minimal(p);
        put(p, "meta.json", r#"{"kind":"node","n_nodes":2,"n_features":1,"n_classes":2,"name":"tiny"}"#);
        put(p, "labels.csv", "0,0\n1,2\n");
        assert!(matches!(load_bundle(p), Err(Error::Bundle(BundleError::LabelOutOfRange { line: 2, label: 2, .. }))));
    }

    #[test]
    fn directed_input_is_symmetrized() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        put(tmp.path(), "edges.tsv", "1\t0\n0\t1\n");
        let Dataset::Nodes { graph, .. } = load_bundle(tmp.path()).unwrap() else { panic!() };
        assert_eq!(graph.n_edges(), 1);
    }

    #[test]
    fn node_round_trip_with_split() {
        let tmp = tempfile::tempdir().unwrap();
        let p = SbmParams { n_per_block: 10, n_blocks: 3, p_in: 0.4, p_out: 0.05, feat_dim: 5, feat_noise: 0.7 };
        let graph = gen_sbm(&p, 5).unwrap();
        let split = Some(crate::graph::split_nodes(30, (0.2, 0.2, 0.6), 1).unwrap());
        let data = Dataset::Nodes { graph, split };
        save_bundle(&data, tmp.path()).unwrap();
        assert_eq!(load_bundle(tmp.path()).unwrap(), data);
    }

    #[test]
    fn featureless_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let g = Graph::from_edges("bare", 5, [(0, 1), (3, 1)], Matrix::zeros(5, 0)).unwrap();
        let data = Dataset::Nodes { graph: g, split: None };
        save_bundle(&data, tmp.path()).unwrap();
        assert_eq!(load_bundle(tmp.path()).unwrap(), data);
    }

    #[test]
    fn graphset_round_trip_keeps_order() {
        let tmp = tempfile::tempdir().unwrap();
        let mk = |n: usize, e: Vec<(usize, usize)>| Graph::from_edges("x", n, e, Matrix::zeros(n, 0)).unwrap();
        let graphs = vec![mk(3, vec![(0, 1)]), mk(1, vec![]), mk(4, vec![(0, 3), (1, 2)])];
        let gs = GraphSet::new("set", graphs, vec![1, 0, 1], 2).unwrap();
        let named = GraphSet::new(
            "set",
            gs.graphs().iter().enumerate().map(|(i, g)| g.clone().with_name(format!("set#{i}"))).collect(),
            gs.labels().to_vec(),
            2,
        )
        .unwrap();
        save_bundle(&Dataset::Graphs(gs), tmp.path()).unwrap();
        assert_eq!(load_bundle(tmp.path()).unwrap(), Dataset::Graphs(named.clone()));

        let with_feats = named.degree_features(None).unwrap();
        let tmp2 = tempfile::tempdir().unwrap();
        save_bundle(&Dataset::Graphs(with_feats.clone()), tmp2.path()).unwrap();
        assert_eq!(load_bundle(tmp2.path()).unwrap(), Dataset::Graphs(with_feats));
    }
}
