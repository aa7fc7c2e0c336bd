//! Attributed graphs, graph collections, splits and the on-disk bundle format.

mod batch;
mod bundle;
mod norm;
mod sbm;
mod split;
mod tu;

pub use batch::GraphBatch;
pub use bundle::{load_bundle, save_bundle, BundleKind, BundleMeta};
pub use norm::sym_norm_adj;
pub use sbm::{gen_sbm, SbmParams};
pub use split::{kfold_split, split_nodes, Split};
pub use tu::import_tu;

use crate::autodiff::{CsrMatrix, Matrix};
use crate::error::{Error, Result};

/// Undirected simple graph with node features and optional node labels.
///
/// The adjacency is stored symmetric with unit values and no diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    adjacency: CsrMatrix,
    features: Matrix,
    labels: Option<Vec<usize>>,
    n_classes: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Both orientations of an edge
    /// and repeated edges collapse to one; self-loops are rejected.
    pub fn from_edges(
        name: impl Into<String>,
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
    ) -> Result<Self> {
        let mut trip = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u},{v}) references a node outside 0..{n}")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop on node {u}")));
            }
            trip.push((u, v, 1.0));
            trip.push((v, u, 1.0));
        }
        trip.sort_by_key(|&(r, c, _)| (r, c));
        trip.dedup_by_key(|t| (t.0, t.1));
        let adjacency = CsrMatrix::from_triplets(n, n, trip)?;
        Graph::from_parts(name, adjacency, features, None, 0)
    }

    /// Validates and assembles a graph from prebuilt parts.
    pub fn from_parts(
        name: impl Into<String>,
        adjacency: CsrMatrix,
        features: Matrix,
        labels: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = adjacency.n_rows();
        if adjacency.n_cols() != n {
            return Err(Error::Graph(format!("adjacency is {}x{}", n, adjacency.n_cols())));
        }
        if features.rows() != n {
            return Err(Error::Graph(format!("{} feature rows for {n} nodes", features.rows())));
        }
        if adjacency.values().iter().any(|&v| v != 1.0) {
            return Err(Error::Graph("adjacency must be binary".into()));
        }
        if adjacency.triplets().any(|(r, c, _)| r == c) {
            return Err(Error::Graph("adjacency has a self-loop".into()));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::Graph("adjacency is not symmetric".into()));
        }
        let g = Graph { name: name.into(), adjacency, features, labels: None, n_classes: 0 };
        match labels {
            Some(l) => g.with_labels(l, n_classes),
            None => Ok(g),
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Graph(format!("{} labels for {} nodes", labels.len(), self.n())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Graph(format!("label {bad} outside 0..{n_classes}")));
        }
        self.labels = Some(labels);
        self.n_classes = n_classes;
        Ok(self)
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.n() {
            return Err(Error::Graph(format!("{} feature rows for {} nodes", features.rows(), self.n())));
        }
        self.features = features;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.adjacency.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.row_nnz(v)
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|v| self.degree(v)).collect()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.row(v).0
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.triplets().filter(|&(r, c, _)| r < c).map(|(r, c, _)| (r, c))
    }

    /// Induced subgraph on `keep` (in the given order). Labels follow their nodes.
    pub fn induced(&self, keep: &[usize]) -> Graph {
        let mut pos = vec![usize::MAX; self.n()];
        for (i, &v) in keep.iter().enumerate() {
            pos[v] = i;
        }
        let trip = keep.iter().enumerate().flat_map(|(i, &v)| {
            let pos = &pos;
            self.neighbors(v).iter().filter_map(move |&u| (pos[u] != usize::MAX).then_some((i, pos[u], 1.0)))
        });
        let adjacency = CsrMatrix::from_triplets(keep.len(), keep.len(), trip).expect("indices remapped in range");
        Graph {
            name: self.name.clone(),
            adjacency,
            features: self.features.gather_rows(keep),
            labels: self.labels.as_ref().map(|l| keep.iter().map(|&v| l[v]).collect()),
            n_classes: self.n_classes,
        }
    }

    /// Replaces the adjacency with a subset of the current edges. Used by augmentations.
    pub(crate) fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Graph {
        let trip = edges.into_iter().flat_map(|(u, v)| [(u, v, 1.0), (v, u, 1.0)]);
        let adjacency = CsrMatrix::from_triplets(self.n(), self.n(), trip).expect("edges within graph");
        Graph { adjacency, ..self.clone() }
    }

    /// Replaces featureless input with one-hot `min(degree, max_degree)`.
    pub fn degree_features(&self, max_degree: usize) -> Result<Graph> {
        if self.n_features() != 0 {
            return Err(Error::contract(format!(
                "degree features requested for '{}' which already has {} features",
                self.name,
                self.n_features()
            )));
        }
        let mut x = Matrix::zeros(self.n(), max_degree + 1);
        for v in 0..self.n() {
            x.set(v, self.degree(v).min(max_degree), 1.0);
        }
        Ok(Graph { features: x, ..self.clone() })
    }
}

/// A labelled collection of graphs for graph-level tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    pub name: String,
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl GraphSet {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::Graph(format!("{} labels for {} graphs", labels.len(), graphs.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Graph(format!("graph label {bad} outside 0..{n_classes}")));
        }
        if let Some(d) = graphs.first().map(Graph::n_features) {
            if graphs.iter().any(|g| g.n_features() != d) {
                return Err(Error::Graph("graphs disagree on feature dimension".into()));
            }
        }
        Ok(GraphSet { name: name.into(), graphs, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.graphs.first().map_or(0, Graph::n_features)
    }

    pub fn max_degree(&self) -> usize {
        self.graphs.iter().flat_map(|g| g.degrees()).max().unwrap_or(0)
    }

    /// Degree one-hot features for every graph; `cap` defaults to the largest observed degree.
    pub fn degree_features(&self, cap: Option<usize>) -> Result<GraphSet> {
        let cap = cap.unwrap_or_else(|| self.max_degree());
        let graphs = self.graphs.iter().map(|g| g.degree_features(cap)).collect::<Result<_>>()?;
        Ok(GraphSet { graphs, ..self.clone() })
    }
}

/// What a bundle or generator produced.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Nodes { graph: Graph, split: Option<Split> },
    Graphs(GraphSet),
}

impl Dataset {
    pub fn name(&self) -> &str {
        match self {
            Dataset::Nodes { graph, .. } => graph.name(),
            Dataset::Graphs(gs) => &gs.name,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Dataset::Nodes { graph, .. } => graph.n_features(),
            Dataset::Graphs(gs) => gs.n_features(),
        }
    }

    /// Fills in degree one-hot features when the data has none.
    pub fn ensure_features(self, cap: Option<usize>) -> Result<Dataset> {
        if self.n_features() > 0 {
            return Ok(self);
        }
        Ok(match self {
            Dataset::Nodes { graph, split } => {
                let cap = cap.unwrap_or_else(|| graph.degrees().into_iter().max().unwrap_or(0));
                Dataset::Nodes { graph: graph.degree_features(cap)?, split }
            }
            Dataset::Graphs(gs) => Dataset::Graphs(gs.degree_features(cap)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges("p", 3, [(0, 1), (1, 2)], Matrix::zeros(3, 0)).unwrap()
    }

    #[test]
    fn edges_are_symmetrized_and_deduplicated() {
        let g = Graph::from_edges("g", 3, [(0, 1), (1, 0), (0, 1), (2, 1)], Matrix::zeros(3, 1)).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert!(g.adjacency().is_symmetric());
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn self_loops_rejected() {
        assert!(Graph::from_edges("g", 2, [(1, 1)], Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn degree_one_hot_on_path() {
        let x = path3().degree_features(2).unwrap();
        let hot: Vec<usize> = (0..3).map(|v| x.features().row(v).iter().position(|&f| f == 1.0).unwrap()).collect();
        assert_eq!(hot, vec![1, 2, 1]);
    }

    #[test]
    fn degree_features_clamp_and_empty() {
        let x = path3().degree_features(1).unwrap();
        assert_eq!(x.features().row(1), &[0.0, 1.0]);
        let empty = Graph::from_edges("e", 4, [], Matrix::zeros(4, 0)).unwrap().degree_features(3).unwrap();
        assert!((0..4).all(|v| empty.features().row(v) == [1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn degree_features_require_featureless_graph() {
        let g = Graph::from_edges("g", 2, [(0, 1)], Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(g.degree_features(2), Err(Error::Contract(_))));
    }

    #[test]
    fn induced_subgraph_compacts_ids() {
        let tri = Graph::from_edges("t", 3, [(0, 1), (1, 2), (0, 2)], Matrix::zeros(3, 0)).unwrap().with_labels(vec![0, 1, 0], 2).unwrap();
        let sub = tri.induced(&[0, 2]);
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.n_edges(), 1);
        assert_eq!(sub.labels().unwrap(), &[0, 0]);
    }
}
