//! Cross-view local-global discrimination between an adjacency view and a
//! diffusion view, each with its own encoder.

use std::cell::RefCell;
use std::rc::Rc;

use crate::augment::{ppr_diffusion, shuffle_features};
use crate::autodiff::{xavier_init, CsrMatrix, ParamId, ParamStore, Tape, Var};
use crate::encoders::{bilinear_score, Encoder, EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed;

use super::dgi::summary;
use super::losses::bce_logits;
use super::{node_only, Batch, MethodConfig, Objective};

pub(crate) struct Mvgrl {
    enc_adj: Encoder,
    enc_diff: Encoder,
    disc: ParamId,
    alpha: f64,
    top_k: usize,
    // the diffusion of the last graph seen, keyed by its adjacency
    cache: RefCell<Option<(CsrMatrix, Rc<CsrMatrix>)>>,
}

impl Mvgrl {
    pub fn new(store: &mut ParamStore, cfg: &MethodConfig, enc_cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        if enc_cfg.kind != EncoderKind::Gcn {
            return Err(Error::config("/model/kind", "mvgrl propagates with a diffusion operator and needs a gcn encoder"));
        }
        let enc_adj = Encoder::new(store, "a", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let enc_diff = Encoder::new(store, "b", enc_cfg, in_dim, seed::derive(seed, 1))?;
        let h = enc_cfg.hidden_dim;
        let disc = store.add("disc.w", xavier_init(h, h, seed::derive(seed, 2))?);
        Ok(Mvgrl { enc_adj, enc_diff, disc, alpha: cfg.alpha, top_k: cfg.top_k, cache: RefCell::new(None) })
    }

    fn diffusion(&self, g: &Graph) -> Result<Rc<CsrMatrix>> {
        let mut cache = self.cache.borrow_mut();
        if let Some((adj, s)) = cache.as_ref() {
            if adj == g.adjacency() {
                return Ok(s.clone());
            }
        }
        let s = Rc::new(ppr_diffusion(g, self.alpha, self.top_k)?);
        *cache = Some((g.adjacency().clone(), s.clone()));
        Ok(s)
    }

    fn encode_both(&self, store: &ParamStore, tape: &mut Tape, g: &Graph, x: Var) -> Result<(Var, Var)> {
        let ha = self.enc_adj.encode(tape, store, &self.enc_adj.propagation(g), x)?;
        let hb = self.enc_diff.encode(tape, store, &self.diffusion(g)?, x)?;
        Ok((ha, hb))
    }
}

impl Objective for Mvgrl {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        let g = node_only(batch, "mvgrl")?;
        if g.n_features() == 0 {
            return Err(Error::Method("mvgrl needs node features".into()));
        }
        let x = tape.constant(g.features().clone());
        let (ha, hb) = self.encode_both(store, tape, g, x)?;
        let sa = summary(tape, ha)?;
        let sb = summary(tape, hb)?;
        // one shuffled feature matrix feeds both corrupted views
        let xc = tape.constant(shuffle_features(g, seed)?.features().clone());
        let (ca, cb) = self.encode_both(store, tape, g, xc)?;
        let w = tape.param(store, self.disc);
        let mut terms = Vec::with_capacity(4);
        for (h, s, positive) in [(ha, sb, true), (hb, sa, true), (ca, sb, false), (cb, sa, false)] {
            let logits = bilinear_score(tape, h, s, w)?;
            terms.push(bce_logits(tape, logits, positive)?);
        }
        let total = terms.into_iter().try_fold(None, |acc: Option<Var>, t| -> Result<_> {
            Ok(Some(match acc {
                None => t,
                Some(a) => tape.add(a, t)?,
            }))
        })?;
        Ok(tape.scale(total.expect("four terms"), 0.25))
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let g = node_only(batch, "mvgrl")?;
        let x = tape.constant(g.features().clone());
        let (ha, hb) = self.encode_both(store, tape, g, x)?;
        tape.add(ha, hb)
    }
}
