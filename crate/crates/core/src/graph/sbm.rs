use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::seed;

/// Stochastic block model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub n_per_block: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub feat_noise: f64,
}

/// Samples an undirected SBM. Nodes are numbered block by block; features are the
/// block one-hot (in the first `n_blocks` of `feat_dim` dims) plus `N(0, feat_noise²)` noise.
pub fn gen_sbm(p: &SbmParams, seed: u64) -> Result<Graph> {
    if p.n_blocks == 0 || p.n_per_block == 0 {
        return Err(Error::config("/synthetic", "need at least one block with at least one node"));
    }
    if !(0.0..=1.0).contains(&p.p_in) || !(0.0..=1.0).contains(&p.p_out) {
        return Err(Error::config("/synthetic", "edge probabilities must lie in [0, 1]"));
    }
    if p.feat_dim < p.n_blocks {
        return Err(Error::config("/synthetic/feat_dim", format!("feat_dim {} smaller than n_blocks {}", p.feat_dim, p.n_blocks)));
    }
    if !(p.feat_noise >= 0.0 && p.feat_noise.is_finite()) {
        return Err(Error::config("/synthetic/feat_noise", "noise must be finite and non-negative"));
    }
    let n = p.n_per_block * p.n_blocks;
    let block = |v: usize| v / p.n_per_block;
    let mut rng = seed::rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if block(u) == block(v) { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((u, v));
            }
        }
    }
    let noise = Normal::new(0.0, p.feat_noise).expect("validated sigma");
    let mut x = Matrix::zeros(n, p.feat_dim);
    for v in 0..n {
        for (c, f) in x.row_mut(v).iter_mut().enumerate() {
            *f = (noise.sample(&mut rng) + if c == block(v) { 1.0 } else { 0.0 }) as f64;
        }
    }
    let labels = (0..n).map(block).collect();
    Graph::from_edges(format!("sbm-{}x{}", p.n_blocks, p.n_per_block), n, edges, x)?.with_labels(labels, p.n_blocks)
}
