//! Masked feature reconstruction with a scaled cosine error.

use std::rc::Rc;

use rand::seq::index::sample;

use crate::autodiff::{xavier_init, Matrix, ParamId, ParamStore, Tape, Var};
use crate::encoders::{Activation, Encoder, EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::graph::{sym_norm_adj, Graph, GraphBatch};
use crate::seed;

use super::losses::sce;
use super::{default_embed, Batch, MethodConfig, Objective};

pub(crate) struct GraphMae {
    enc: Encoder,
    decoder: Encoder,
    mask_token: ParamId,
    dec_token: ParamId,
    mask_rate: f64,
    gamma: f64,
}

/// Sorted indices of the `round(rate·n)` nodes whose features are hidden.
pub(crate) fn mask_set(n: usize, rate: f64, seed: u64) -> Result<Vec<usize>> {
    let m = (rate * n as f64).round() as usize;
    if m == 0 {
        return Err(Error::Method(format!("mask rate {rate} hides no node of {n}")));
    }
    let mut idx = sample(&mut seed::rng(seed), n, m.min(n)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Rows in `mask` take `token`; the rest keep `h`.
fn replace_rows(tape: &mut Tape, h: Var, mask: &[usize], token: Var) -> Result<Var> {
    let n = tape.shape(h).0;
    let mut keep = Matrix::filled(n, 1, 1.0);
    let mut hit = Matrix::zeros(n, 1);
    for &i in mask {
        keep.set(i, 0, 0.0);
        hit.set(i, 0, 1.0);
    }
    let keep = tape.constant(keep);
    let hit = tape.constant(hit);
    let kept = tape.mul_col(h, keep)?;
    let filled = tape.matmul(hit, token)?;
    tape.add(kept, filled)
}

impl GraphMae {
    pub fn new(store: &mut ParamStore, cfg: &MethodConfig, enc_cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let enc = Encoder::new(store, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let dec_cfg = EncoderConfig {
            kind: EncoderKind::Gcn,
            layers: 1,
            hidden_dim: in_dim,
            activation: Activation::Identity,
            readout: enc_cfg.readout,
        };
        let decoder = Encoder::new(store, "dec", dec_cfg, enc_cfg.hidden_dim, seed::derive(seed, 1))?;
        let mask_token = store.add("mask_token", xavier_init(1, in_dim, seed::derive(seed, 2))?);
        let dec_token = store.add("dec_token", xavier_init(1, enc_cfg.hidden_dim, seed::derive(seed, 3))?);
        Ok(GraphMae { enc, decoder, mask_token, dec_token, mask_rate: cfg.mask_rate, gamma: cfg.gamma })
    }

    fn reconstruction_loss(&self, store: &ParamStore, tape: &mut Tape, g: &Graph, seed: u64) -> Result<Var> {
        if g.n_features() == 0 {
            return Err(Error::Method("graphmae needs node features".into()));
        }
        let mask = mask_set(g.n(), self.mask_rate, seed)?;
        let x = g.features();
        let scored: Vec<usize> = mask.iter().copied().filter(|&i| x.row(i).iter().any(|&v| v != 0.0)).collect();
        if scored.len() < mask.len() {
            log::warn!("graphmae: {} masked nodes have all-zero features and are left out of the loss", mask.len() - scored.len());
        }
        if scored.is_empty() {
            return Err(Error::Method("every masked node has all-zero features".into()));
        }
        let xv = tape.constant(x.clone());
        let token = tape.param(store, self.mask_token);
        let x_in = replace_rows(tape, xv, &mask, token)?;
        let h = self.enc.encode(tape, store, &self.enc.propagation(g), x_in)?;
        let dtoken = tape.param(store, self.dec_token);
        let h = replace_rows(tape, h, &mask, dtoken)?;
        let x_hat = self.decoder.encode(tape, store, &Rc::new(sym_norm_adj(g)), h)?;
        let idx = Rc::new(scored);
        let x_hat = tape.gather_rows(x_hat, idx.clone())?;
        let target = tape.gather_rows(xv, idx)?;
        sce(tape, x_hat, target, self.gamma)
    }
}

impl Objective for GraphMae {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        match batch {
            Batch::Node(g) => self.reconstruction_loss(store, tape, g, seed),
            Batch::Graphs(gs) => {
                let gb = GraphBatch::new(gs)?;
                self.reconstruction_loss(store, tape, &gb.graph, seed)
            }
        }
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

    fn state(rate: f64, gamma: f64, level: Level, seed: u64) -> MethodState {
        let mut cfg = MethodConfig::new(MethodName::Graphmae);
        cfg.mask_rate = rate;
        cfg.gamma = gamma;
        let kind = if level == Level::Node { EncoderKind::Gcn } else { EncoderKind::Gin };
        MethodState::new(cfg, small_encoder(kind, Activation::Relu), level, 4, seed).unwrap()
    }

    #[test]
    fn mask_size_and_empty_mask() {
        assert_eq!(mask_set(10, 0.5, 1).unwrap().len(), 5);
        assert_eq!(mask_set(3, 1.0, 1).unwrap(), vec![0, 1, 2]);
        assert!(matches!(mask_set(3, 0.1, 1), Err(Error::Method(_))));
        let g = random_graph(3, 4, 0.3, 0);
        let s = state(0.1, 2.0, Level::Node, 0);
        let mut tape = Tape::new();
        assert!(s.loss(&mut tape, &Batch::Node(&g), 0).is_err());
    }

    #[test]
    fn replaced_rows_hold_the_token() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let t = tape.constant(Matrix::from_rows(&[vec![-1.0, 9.0]]));
        let r = replace_rows(&mut tape, h, &[1], t).unwrap();
        assert_eq!(tape.value(r), &Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 9.0], vec![5.0, 6.0]]));
    }

    #[test]
    fn invariant_to_rescaling_masked_rows() {
        let g = random_graph(10, 4, 0.3, 3);
        let s = state(0.5, 2.0, Level::Node, 1);
        let seed = 8;
        let mask = mask_set(10, 0.5, seed).unwrap();
        let mut x = g.features().clone();
        for (k, &i) in mask.iter().enumerate() {
            x.row_mut(i).iter_mut().for_each(|v| *v *= 0.5 + k as f64);
        }
        let scaled = g.clone().with_features(x).unwrap();
        let a = loss_value(&s, &Batch::Node(&g), seed);
        let b = loss_value(&s, &Batch::Node(&scaled), seed);
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn zero_feature_rows_are_excluded() {
        let g = random_graph(6, 4, 0.3, 4);
        let mut x = g.features().clone();
        x.row_mut(2).fill(0.0);
        let g = g.with_features(x).unwrap();
        let s = state(1.0, 2.0, Level::Node, 2);
        assert!(loss_value(&s, &Batch::Node(&g), 0).is_finite());
    }

    #[test]
    fn loss_within_bounds_and_descends() {
        let g = random_graph(14, 4, 0.3, 5);
        let mut s = state(0.5, 2.0, Level::Node, 3);
        let l = loss_value(&s, &Batch::Node(&g), 0);
        assert!((0.0..=4.0).contains(&l));
        let (before, after) = descent(&mut s, &Batch::Node(&g), 200, 0.01);
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn graph_level_descends() {
        let gs: Vec<Graph> = (0..5).map(|i| random_graph(5 + i, 4, 0.3, 60 + i as u64)).collect();
        let mut s = state(0.5, 2.0, Level::Graph, 4);
        let batch = Batch::Graphs(gs.iter().collect());
        assert_eq!(s.embed(&batch).unwrap().shape(), (5, 16));
        let (before, after) = descent(&mut s, &batch, 150, 0.01);
        assert!(after < before, "{before} -> {after}");
    }
}
