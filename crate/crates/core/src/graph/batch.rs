use super::Graph;
use crate::autodiff::{CsrMatrix, Matrix};
use crate::error::Result;

/// Several graphs merged into one block-diagonal graph for minibatch training.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub graph: Graph,
    /// `offsets[g]..offsets[g+1]` are the node ids of member graph `g`.
    pub offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut trip = Vec::new();
        let mut feats = Vec::with_capacity(graphs.len());
        for g in graphs {
            let base = *offsets.last().unwrap();
            trip.extend(g.adjacency().triplets().map(|(r, c, v)| (r + base, c + base, v)));
            offsets.push(base + g.n());
            feats.push(g.features());
        }
        let n = *offsets.last().unwrap();
        let d = graphs.first().map_or(0, |g| g.n_features());
        let features = if feats.is_empty() { Matrix::zeros(0, d) } else { Matrix::concat_rows(&feats)? };
        let adjacency = CsrMatrix::from_triplets(n, n, trip)?;
        let graph = Graph::from_parts("batch", adjacency, features, None, 0)?;
        Ok(GraphBatch { graph, offsets })
    }

    pub fn n_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Member graph id of every node.
    pub fn graph_of_node(&self) -> Vec<usize> {
        (0..self.n_graphs()).flat_map(|g| std::iter::repeat_n(g, self.offsets[g + 1] - self.offsets[g])).collect()
    }

    /// `B × N` pooling matrix: row `g` holds `weight(size_g)` on the nodes of graph `g`.
    pub fn pooling(&self, weight: impl Fn(usize) -> f64) -> CsrMatrix {
        let trip = (0..self.n_graphs()).flat_map(|g| {
            let (s, e) = (self.offsets[g], self.offsets[g + 1]);
            let w = weight(e - s);
            (s..e).map(move |v| (g, v, w))
        });
        CsrMatrix::from_triplets(self.n_graphs(), self.graph.n(), trip).expect("offsets in range")
    }
}
