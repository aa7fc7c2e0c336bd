//! Mutual-information maximization between node patches and whole-graph summaries.

use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::encoders::{Encoder, EncoderConfig, EncoderKind, Linear};
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::seed;

use super::{default_embed, graphs_only, Batch, Objective};

pub(crate) struct InfoGraph {
    enc: Encoder,
    node_proj: Linear,
    graph_proj: Linear,
}

impl InfoGraph {
    pub fn new(store: &mut ParamStore, enc_cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        if enc_cfg.kind != EncoderKind::Gin {
            return Err(Error::config("/model/kind", "infograph uses a gin encoder"));
        }
        let enc = Encoder::new(store, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let d = enc_cfg.graph_dim();
        let node_proj = Linear::new(store, "node_proj", d, d, seed::derive(seed, 1))?;
        let graph_proj = Linear::new(store, "graph_proj", d, d, seed::derive(seed, 2))?;
        Ok(InfoGraph { enc, node_proj, graph_proj })
    }
}

/// Jensen-Shannon loss over a node × graph score matrix with a 0/1 positive mask.
fn jsd_loss(tape: &mut Tape, scores: Var, pos: Matrix) -> Result<Var> {
    let (n, b) = tape.shape(scores);
    let neg = pos.map(|v| 1.0 - v);
    let pos = tape.constant(pos);
    let neg = tape.constant(neg);
    let flipped = tape.scale(scores, -1.0);
    let sp_pos = tape.softplus(flipped);
    let sp_neg = tape.softplus(scores);
    let p = tape.mul(sp_pos, pos)?;
    let q = tape.mul(sp_neg, neg)?;
    let p = tape.sum(p);
    let q = tape.sum(q);
    let p = tape.scale(p, 1.0 / n as f64);
    let q = tape.scale(q, 1.0 / (n * (b - 1)) as f64);
    tape.add(p, q)
}

impl Objective for InfoGraph {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, _seed: u64) -> Result<Var> {
        let graphs = graphs_only(batch, "infograph")?;
        let gb = GraphBatch::new(graphs)?;
        let x = tape.constant(gb.graph.features().clone());
        let layers = self.enc.forward(tape, store, &self.enc.propagation(&gb.graph), x)?;
        let patches = tape.concat_cols(&layers)?;
        let summaries = self.enc.graph_embedding(tape, &gb, &layers)?;
        let pn = self.node_proj.forward(tape, store, patches)?;
        let pg = self.graph_proj.forward(tape, store, summaries)?;
        let scores = tape.matmul_t(pn, pg)?;
        let owner = gb.graph_of_node();
        let mut pos = Matrix::zeros(owner.len(), graphs.len());
        for (v, &g) in owner.iter().enumerate() {
            pos.set(v, g, 1.0);
        }
        jsd_loss(tape, scores, pos)
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        default_embed(&self.enc, store, tape, batch)
    }
}
