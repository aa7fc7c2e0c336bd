//! Local-global discrimination against a feature-shuffled corruption.

use crate::augment::shuffle_features;
use crate::autodiff::{xavier_init, ParamId, ParamStore, Tape, Var};
use crate::encoders::{bilinear_score, Encoder, EncoderConfig};
use crate::error::Result;
use crate::seed;

use super::losses::bce_logits;
use super::{default_embed, encode_nodes, node_only, Batch, Objective};

pub(crate) struct Dgi {
    enc: Encoder,
    disc: ParamId,
}

impl Dgi {
    pub fn new(store: &mut ParamStore, enc_cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let enc = Encoder::new(store, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let h = enc_cfg.hidden_dim;
        let disc = store.add("disc.w", xavier_init(h, h, seed::derive(seed, 1))?);
        Ok(Dgi { enc, disc })
    }
}

/// `sigmoid(mean of rows)`.
pub(crate) fn summary(tape: &mut Tape, h: Var) -> Result<Var> {
    let m = tape.col_mean(h)?;
    Ok(tape.sigmoid(m))
}

impl Objective for Dgi {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        let g = node_only(batch, "dgi")?;
        let corrupted = shuffle_features(g, seed)?;
        let h = encode_nodes(&self.enc, store, tape, g)?;
        let s = summary(tape, h)?;
        let h_neg = encode_nodes(&self.enc, store, tape, &corrupted)?;
        let w = tape.param(store, self.disc);
        let pos = bilinear_score(tape, h, s, w)?;
        let neg = bilinear_score(tape, h_neg, s, w)?;
        let lp = bce_logits(tape, pos, true)?;
        let ln = bce_logits(tape, neg, false)?;
        let total = tape.add(lp, ln)?;
        Ok(tape.scale(total, 0.5))
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        default_embed(&self.enc, store, tape, batch)
    }
}
