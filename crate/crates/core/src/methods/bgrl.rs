//! Bootstrapped node representations: an online encoder with a predictor
//! regresses a moving-average target encoder across two views.

use crate::augment::{drop_edges, mask_features};
use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::encoders::{Encoder, EncoderConfig, MlpHead};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed;

use super::losses::cosine_rows;
use super::{default_embed, encode_nodes, node_only, Batch, MethodConfig, Objective};

/// `target ← decay·target + (1 − decay)·online`, elementwise.
pub fn ema_update(target: &mut Matrix, online: &Matrix, decay: f64) -> Result<()> {
    if target.shape() != online.shape() {
        return Err(Error::shape(format!("ema target {:?} vs online {:?}", target.shape(), online.shape())));
    }
    let (a, b) = (decay, (1.0 - decay));
    target.data_mut().iter_mut().zip(online.data()).for_each(|(t, &o)| *t = a * *t + b * o);
    Ok(())
}

pub(crate) struct Bgrl {
    online: Encoder,
    predictor: MlpHead,
    target_enc: Encoder,
    target: ParamStore,
    decay: f64,
    p_e: f64,
    p_f: f64,
}

impl Bgrl {
    pub fn new(store: &mut ParamStore, cfg: &MethodConfig, enc_cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let online = Encoder::new(store, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let h = enc_cfg.hidden_dim;
        let predictor = MlpHead::new(store, "pred", h, h, h, seed::derive(seed, 1))?;
        // same prefix and seed: the target starts as an exact copy
        let mut target = ParamStore::new();
        let target_enc = Encoder::new(&mut target, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        Ok(Bgrl { online, predictor, target_enc, target, decay: cfg.ema_decay, p_e: cfg.drop_edge_p, p_f: cfg.mask_feat_p })
    }

    fn view(&self, g: &Graph, seed: u64) -> Result<Graph> {
        let v = drop_edges(g, self.p_e, seed::derive(seed, 0))?;
        mask_features(&v, self.p_f, seed::derive(seed, 1))
    }

    /// Target embeddings computed on a separate gradient-free tape and brought
    /// into `tape` as constants.
    fn target_embedding(&self, tape: &mut Tape, g: &Graph) -> Result<Var> {
        let mut side = Tape::no_grad();
        let t = encode_nodes(&self.target_enc, &self.target, &mut side, g)?;
        Ok(tape.constant(side.value(t).clone()))
    }
}

impl Objective for Bgrl {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        let g = node_only(batch, "bgrl")?;
        if g.n_features() == 0 {
            return Err(Error::Method("bgrl needs node features".into()));
        }
        let v1 = self.view(g, seed::derive(seed, 0))?;
        let v2 = self.view(g, seed::derive(seed, 1))?;
        let h1 = encode_nodes(&self.online, store, tape, &v1)?;
        let q1 = self.predictor.forward(tape, store, h1)?;
        let h2 = encode_nodes(&self.online, store, tape, &v2)?;
        let q2 = self.predictor.forward(tape, store, h2)?;
        let t1 = self.target_embedding(tape, &v1)?;
        let t2 = self.target_embedding(tape, &v2)?;
        let c12 = cosine_rows(tape, q1, t2)?;
        let c21 = cosine_rows(tape, q2, t1)?;
        let m12 = tape.mean(c12)?;
        let m21 = tape.mean(c21)?;
        let s = tape.add(m12, m21)?;
        let neg = tape.scale(s, -1.0);
        Ok(tape.add_scalar(neg, 2.0))
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        default_embed(&self.online, store, tape, batch)
    }

    fn after_step(&mut self, store: &ParamStore) -> Result<()> {
        for (t, o) in self.target_enc.param_ids().into_iter().zip(self.online.param_ids()) {
            ema_update(self.target.value_mut(t), store.value(o), self.decay)?;
        }
        Ok(())
    }

    fn target(&self) -> Option<&ParamStore> {
        Some(&self.target)
    }

    fn target_mut(&mut self) -> Option<&mut ParamStore> {
        Some(&mut self.target)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::*;
    use super::*;
    use crate::autodiff::{adam_step, AdamConfig};
    use crate::encoders::{Activation, EncoderKind};

    fn state(decay: f64, seed: u64) -> MethodState {
        let mut cfg = MethodConfig::new(MethodName::Bgrl);
        cfg.ema_decay = decay;
        MethodState::new(cfg, small_encoder(EncoderKind::Gcn, Activation::Prelu), Level::Node, 4, seed).unwrap()
    }

    fn online_encoder_values(s: &MethodState) -> Vec<Matrix> {
        s.params.iter().filter(|p| p.name.starts_with("enc.")).map(|p| p.value.clone()).collect()
    }

    #[test]
    fn ema_arithmetic() {
        let mut t = Matrix::zeros(2, 2);
        ema_update(&mut t, &Matrix::filled(2, 2, 2.0), 0.5).unwrap();
        assert_eq!(t, Matrix::filled(2, 2, 1.0));
        let before = t.clone();
        ema_update(&mut t, &Matrix::filled(2, 2, 7.0), 1.0).unwrap();
        assert_eq!(t, before);
        ema_update(&mut t, &Matrix::filled(2, 2, 7.0), 0.0).unwrap();
        assert_eq!(t, Matrix::filled(2, 2, 7.0));
        assert!(ema_update(&mut t, &Matrix::zeros(1, 2), 0.5).is_err());
    }

    #[test]
    fn target_starts_as_copy_and_tracks_with_zero_decay() {
        let mut s = state(0.0, 1);
        let target: Vec<Matrix> = s.target().unwrap().values();
        assert_eq!(target, online_encoder_values(&s));
        let g = random_graph(10, 4, 0.3, 2);
        descent(&mut s, &Batch::Node(&g), 3, 0.01);
        assert_eq!(s.target().unwrap().values(), online_encoder_values(&s));
    }

    #[test]
    fn target_untouched_by_backward_and_adam() {
        let mut s = state(0.99, 2);
        let g = random_graph(10, 4, 0.3, 3);
        let before = s.target().unwrap().values();
        for step in 0..3 {
            let mut tape = Tape::new();
            let l = s.loss(&mut tape, &Batch::Node(&g), step).unwrap();
            tape.backward(l, &mut s.params).unwrap();
            adam_step(&mut s.params, &AdamConfig::default()).unwrap();
        }
        let target = s.target().unwrap();
        assert_eq!(target.values(), before);
        assert!(target.iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
        let online_before = online_encoder_values(&s);
        s.after_step().unwrap();
        assert_ne!(s.target().unwrap().values(), before);
        assert_eq!(online_encoder_values(&s), online_before);
    }

    #[test]
    fn unit_decay_freezes_target_and_embeddings_use_online() {
        let g = random_graph(10, 4, 0.3, 4);
        let mut s = state(1.0, 3);
        let before = s.target().unwrap().values();
        let (_, _) = descent(&mut s, &Batch::Node(&g), 5, 0.01);
        assert_eq!(s.target().unwrap().values(), before);
        let e = s.embed(&Batch::Node(&g)).unwrap();
        s.after_step().unwrap();
        assert_eq!(e, s.embed(&Batch::Node(&g)).unwrap());
    }

    #[test]
    fn loss_bounds_and_descent() {
        let g = random_graph(12, 4, 0.3, 5);
        let mut s = state(0.99, 4);
        let l = loss_value(&s, &Batch::Node(&g), 0);
        assert!((0.0..=4.0).contains(&l));
        let (before, after) = descent(&mut s, &Batch::Node(&g), 200, 0.01);
        assert!(after < before, "{before} -> {after}");
    }
}
