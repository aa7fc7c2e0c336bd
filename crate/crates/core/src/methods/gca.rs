//! Two-view node contrast with degree-adaptive edge dropping.

use crate::augment::{drop_edges_weighted, mask_features};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::encoders::{Encoder, EncoderConfig, MlpHead};
use crate::error::Result;
use crate::graph::Graph;
use crate::seed;

use super::losses::nt_xent;
use super::{cap_anchors, default_embed, encode_nodes, node_only, Batch, MethodConfig, Objective};

/// Per-edge drop probabilities in `g.edges()` order. Edges between low-degree
/// nodes are dropped more often; the result is capped at `p_tau`.
pub fn gca_edge_weights(g: &Graph, p_e: f64, p_tau: f64) -> Vec<f64> {
    let deg = g.degrees();
    let s: Vec<f64> = g.edges().map(|(u, v)| (((deg[u] + 1) as f64).ln() + ((deg[v] + 1) as f64).ln()) / 2.0).collect();
    if s.is_empty() {
        return s;
    }
    let s_max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_mean = s.iter().sum::<f64>() / s.len() as f64;
    let spread = s_max - s_mean;
    if spread <= 1e-12 * s_max.abs().max(1.0) {
        return vec![p_e.min(p_tau); s.len()];
    }
    s.iter().map(|&x| ((s_max - x) / spread * p_e).min(p_tau).max(0.0)).collect()
}

pub(crate) struct Gca {
    enc: Encoder,
    head: MlpHead,
    tau: f64,
    p_e: f64,
    p_f: f64,
    p_tau: f64,
}

impl Gca {
    pub fn new(store: &mut ParamStore, cfg: &MethodConfig, enc_cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let enc = Encoder::new(store, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let h = enc_cfg.hidden_dim;
        let head = MlpHead::new(store, "proj", h, h, h, seed::derive(seed, 1))?;
        Ok(Gca { enc, head, tau: cfg.tau, p_e: cfg.drop_edge_p, p_f: cfg.mask_feat_p, p_tau: cfg.p_tau })
    }

    fn view(&self, store: &ParamStore, tape: &mut Tape, g: &Graph, probs: &[f64], seed: u64) -> Result<Var> {
        let v = drop_edges_weighted(g, probs, seed::derive(seed, 0))?;
        let v = mask_features(&v, self.p_f, seed::derive(seed, 1))?;
        let h = encode_nodes(&self.enc, store, tape, &v)?;
        self.head.forward(tape, store, h)
    }
}

impl Objective for Gca {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        let g = node_only(batch, "gca")?;
        let probs = gca_edge_weights(g, self.p_e, self.p_tau);
        let z1 = self.view(store, tape, g, &probs, seed::derive(seed, 0))?;
        let z2 = self.view(store, tape, g, &probs, seed::derive(seed, 1))?;
        let (z1, z2) = cap_anchors(tape, z1, z2, seed::derive(seed, 2))?;
        nt_xent(tape, z1, z2, self.tau)
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        default_embed(&self.enc, store, tape, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::*;
    use super::*;
    use crate::encoders::{Activation, EncoderKind};
    use proptest::prelude::*;

    fn ring(n: usize) -> Graph {
        Graph::from_edges("ring", n, (0..n).map(|i| (i, (i + 1) % n)), Matrix::zeros(n, 1)).unwrap()
    }

    #[test]
    fn regular_graph_uses_base_probability() {
        assert!(gca_edge_weights(&ring(7), 0.3, 0.7).iter().all(|&p| p == 0.3));
        assert!(gca_edge_weights(&ring(7), 0.9, 0.7).iter().all(|&p| p == 0.7));
    }

    #[test]
    fn star_with_tail_matches_formula() {
        // hub 0 with leaves 1..=4, plus a tail edge 4-5
        let g = Graph::from_edges("s", 6, [(0, 1), (0, 2), (0, 3), (0, 4), (4, 5)], Matrix::zeros(6, 1)).unwrap();
        let p = gca_edge_weights(&g, 0.4, 0.9);
        let hub_leaf = (5f64.ln() + 2f64.ln()) / 2.0;
        let hub_mid = (5f64.ln() + 3f64.ln()) / 2.0;
        let tail = (3f64.ln() + 2f64.ln()) / 2.0;
        let mean = (3.0 * hub_leaf + hub_mid + tail) / 5.0;
        let f = |s: f64| ((hub_mid - s) / (hub_mid - mean) * 0.4).min(0.9);
        let edges: Vec<_> = g.edges().collect();
        for (e, &got) in edges.iter().zip(&p) {
            let want = match e {
                (0, 4) => f(hub_mid),
                (4, 5) => f(tail),
                _ => f(hub_leaf),
            };
            assert!((got - want).abs() < 1e-12, "{e:?}: {got} vs {want}");
        }
        assert_eq!(p[edges.iter().position(|&e| e == (0, 4)).unwrap()], 0.0);
    }

    proptest! {
        #[test]
        fn probabilities_within_cap(seed in 0u64..200, p_e in 0.0f64..1.0, p_tau in 0.0f64..1.0) {
            let g = random_graph(12, 1, 0.2, seed);
            for p in gca_edge_weights(&g, p_e, p_tau) {
                prop_assert!((0.0..=p_tau).contains(&p));
            }
        }
    }

    #[test]
    fn deterministic_and_descending() {
        let g = random_graph(14, 4, 0.25, 5);
        let mut s =
            MethodState::new(MethodConfig::new(MethodName::Gca), small_encoder(EncoderKind::Gcn, Activation::Prelu), Level::Node, 4, 3)
                .unwrap();
        assert_eq!(loss_value(&s, &Batch::Node(&g), 2), loss_value(&s, &Batch::Node(&g), 2));
        let (before, after) = descent(&mut s, &Batch::Node(&g), 200, 0.01);
        assert!(after < before, "{before} -> {after}");
    }
}
