//! Self-supervised objectives.
//!
//! Each objective builds its views from `(batch, seed)` and records a scalar
//! loss on a tape. [`MethodState`] owns the trainable parameters and, for the
//! bootstrapped objective, the moving-average target network.

mod bgrl;
mod dgi;
mod gca;
mod graphcl;
mod graphmae;
mod infograph;
pub mod losses;
mod mvgrl;

pub use bgrl::ema_update;
pub use gca::gca_edge_weights;

use std::rc::Rc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::encoders::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch};
use crate::seed;

/// Node-level contrastive losses use at most this many anchors per step; the
/// pairwise similarity matrix grows quadratically.
pub const MAX_ANCHORS: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Dgi,
    Graphcl,
    Mvgrl,
    Gca,
    Bgrl,
    Infograph,
    Graphmae,
}

impl MethodName {
    pub const ALL: [MethodName; 7] = [
        MethodName::Dgi,
        MethodName::Graphcl,
        MethodName::Mvgrl,
        MethodName::Gca,
        MethodName::Bgrl,
        MethodName::Infograph,
        MethodName::Graphmae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Dgi => "dgi",
            MethodName::Graphcl => "graphcl",
            MethodName::Mvgrl => "mvgrl",
            MethodName::Gca => "gca",
            MethodName::Bgrl => "bgrl",
            MethodName::Infograph => "infograph",
            MethodName::Graphmae => "graphmae",
        }
    }

    pub fn supports(self, level: Level) -> bool {
        match self {
            MethodName::Graphcl | MethodName::Graphmae => true,
            MethodName::Infograph => level == Level::Graph,
            _ => level == Level::Node,
        }
    }
}

/// Whether a run learns node embeddings of one graph or graph embeddings of a collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Node,
    Graph,
}

/// Fully resolved objective hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: MethodName,
    pub tau: f64,
    pub alpha: f64,
    pub top_k: usize,
    pub gamma: f64,
    pub mask_rate: f64,
    pub ema_decay: f64,
    pub drop_edge_p: f64,
    pub mask_feat_p: f64,
    pub p_tau: f64,
    /// The two view recipes of `graphcl`; level-dependent defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_specs: Option<Vec<AugmentSpec>>,
}

impl MethodConfig {
    pub fn new(name: MethodName) -> Self {
        MethodConfig {
            name,
            tau: 0.5,
            alpha: 0.2,
            top_k: 64,
            gamma: 2.0,
            mask_rate: 0.5,
            ema_decay: 0.99,
            drop_edge_p: 0.3,
            mask_feat_p: 0.3,
            p_tau: 0.7,
            aug_specs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("/method/{field}"), msg));
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad("tau", format!("temperature {} must be positive", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", format!("{} is not in (0, 1]", self.alpha));
        }
        if self.top_k == 0 {
            return bad("top_k", "top_k must be at least 1".into());
        }
        if self.gamma.is_nan() || self.gamma < 1.0 {
            return bad("gamma", format!("exponent {} must be at least 1", self.gamma));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return bad("mask_rate", format!("{} is not in (0, 1]", self.mask_rate));
        }
        for (field, v) in
            [("ema_decay", self.ema_decay), ("drop_edge_p", self.drop_edge_p), ("mask_feat_p", self.mask_feat_p), ("p_tau", self.p_tau)]
        {
            if !prob(v) {
                return bad(field, format!("{v} is not in [0, 1]"));
            }
        }
        if let Some(specs) = &self.aug_specs {
            if specs.len() != 2 {
                return bad("aug_specs", format!("expected two view specs, got {}", specs.len()));
            }
            for (i, s) in specs.iter().enumerate() {
                s.validate(&format!("/method/aug_specs/{i}"))?;
            }
        }
        Ok(())
    }
}

/// What one optimization step sees.
#[derive(Clone, Debug)]
pub enum Batch<'a> {
    Node(&'a Graph),
    Graphs(Vec<&'a Graph>),
}

impl Batch<'_> {
    pub fn level(&self) -> Level {
        match self {
            Batch::Node(_) => Level::Node,
            Batch::Graphs(_) => Level::Graph,
        }
    }
}

pub(crate) trait Objective {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var>;

    /// Frozen embeddings: one row per node, or per graph for graph batches.
    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var>;

    fn after_step(&mut self, _store: &ParamStore) -> Result<()> {
        Ok(())
    }

    fn target(&self) -> Option<&ParamStore> {
        None
    }

    fn target_mut(&mut self) -> Option<&mut ParamStore> {
        None
    }
}

pub(crate) fn node_only<'a>(batch: &'a Batch, method: &str) -> Result<&'a Graph> {
    match batch {
        Batch::Node(g) => Ok(g),
        Batch::Graphs(_) => Err(Error::Method(format!("{method} learns node embeddings of a single graph"))),
    }
}

pub(crate) fn graphs_only<'a, 'b>(batch: &'a Batch<'b>, method: &str) -> Result<&'a [&'b Graph]> {
    match batch {
        Batch::Graphs(gs) if gs.len() >= 2 => Ok(gs),
        Batch::Graphs(_) => Err(Error::Method(format!("{method} needs at least two graphs per batch for negatives"))),
        Batch::Node(_) => Err(Error::Method(format!("{method} needs a collection of graphs"))),
    }
}

/// Last-layer node embeddings of `g`.
pub(crate) fn encode_nodes(enc: &Encoder, store: &ParamStore, tape: &mut Tape, g: &Graph) -> Result<Var> {
    let x = tape.constant(g.features().clone());
    enc.encode(tape, store, &enc.propagation(g), x)
}

/// Layer-concatenated readouts, one row per graph.
pub(crate) fn encode_graphs(enc: &Encoder, store: &ParamStore, tape: &mut Tape, graphs: &[&Graph]) -> Result<Var> {
    let batch = GraphBatch::new(graphs)?;
    let x = tape.constant(batch.graph.features().clone());
    let layers = enc.forward(tape, store, &enc.propagation(&batch.graph), x)?;
    enc.graph_embedding(tape, &batch, &layers)
}

pub(crate) fn default_embed(enc: &Encoder, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
    match batch {
        Batch::Node(g) => encode_nodes(enc, store, tape, g),
        Batch::Graphs(gs) => encode_graphs(enc, store, tape, gs),
    }
}

/// Restricts two aligned views to a random subset of at most [`MAX_ANCHORS`] rows.
pub(crate) fn cap_anchors(tape: &mut Tape, z1: Var, z2: Var, seed: u64) -> Result<(Var, Var)> {
    let n = tape.shape(z1).0;
    if n <= MAX_ANCHORS {
        return Ok((z1, z2));
    }
    let mut idx = sample(&mut seed::rng(seed), n, MAX_ANCHORS).into_vec();
    idx.sort_unstable();
    let idx = Rc::new(idx);
    Ok((tape.gather_rows(z1, idx.clone())?, tape.gather_rows(z2, idx)?))
}

/// Parameter values of a method, including any target network.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    params: Vec<Matrix>,
    target: Option<Vec<Matrix>>,
}

/// A configured objective with its parameters.
pub struct MethodState {
    cfg: MethodConfig,
    enc_cfg: EncoderConfig,
    level: Level,
    in_dim: usize,
    pub params: ParamStore,
    objective: Box<dyn Objective>,
}

impl std::fmt::Debug for MethodState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MethodState")
            .field("method", &self.cfg.name)
            .field("level", &self.level)
            .field("in_dim", &self.in_dim)
            .field("params", &self.params.len())
            .finish()
    }
}

const TARGET_PREFIX: &str = "target/";

impl MethodState {
    pub fn new(cfg: MethodConfig, enc_cfg: EncoderConfig, level: Level, in_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        enc_cfg.validate()?;
        if !cfg.name.supports(level) {
            return Err(Error::Method(format!(
                "{} does not support {}-level data",
                cfg.name.as_str(),
                if level == Level::Node { "node" } else { "graph" }
            )));
        }
        if in_dim == 0 {
            return Err(Error::Method(format!("{} needs node features (got dimension 0)", cfg.name.as_str())));
        }
        let mut params = ParamStore::new();
        let objective: Box<dyn Objective> = match cfg.name {
            MethodName::Dgi => Box::new(dgi::Dgi::new(&mut params, enc_cfg, in_dim, seed)?),
            MethodName::Graphcl => Box::new(graphcl::GraphCl::new(&mut params, &cfg, enc_cfg, level, in_dim, seed)?),
            MethodName::Mvgrl => Box::new(mvgrl::Mvgrl::new(&mut params, &cfg, enc_cfg, in_dim, seed)?),
            MethodName::Gca => Box::new(gca::Gca::new(&mut params, &cfg, enc_cfg, in_dim, seed)?),
            MethodName::Bgrl => Box::new(bgrl::Bgrl::new(&mut params, &cfg, enc_cfg, in_dim, seed)?),
            MethodName::Infograph => Box::new(infograph::InfoGraph::new(&mut params, enc_cfg, in_dim, seed)?),
            MethodName::Graphmae => Box::new(graphmae::GraphMae::new(&mut params, &cfg, enc_cfg, in_dim, seed)?),
        };
        Ok(MethodState { cfg, enc_cfg, level, in_dim, params, objective })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.cfg
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc_cfg
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.level() != self.level {
            return Err(Error::Method(format!("{} was configured for {:?}-level data", self.cfg.name.as_str(), self.level)));
        }
        Ok(())
    }

    /// Records the loss of `batch` on `tape`. Views depend only on `seed`.
    pub fn loss(&self, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        self.check_batch(batch)?;
        self.objective.loss(&self.params, tape, batch, seed)
    }

    /// Hook run after every optimizer step (moving-average targets).
    pub fn after_step(&mut self) -> Result<()> {
        self.objective.after_step(&self.params)
    }

    /// Embeddings of `batch` computed without recording gradients.
    pub fn embed(&self, batch: &Batch) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut tape = Tape::no_grad();
        let v = self.objective.embed(&self.params, &mut tape, batch)?;
        Ok(tape.value(v).clone())
    }

    pub fn target(&self) -> Option<&ParamStore> {
        self.objective.target()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { params: self.params.values(), target: self.objective.target().map(ParamStore::values) }
    }

    pub fn restore(&mut self, snap: &Snapshot) {
        self.params.set_values(&snap.params);
        if let (Some(t), Some(vals)) = (self.objective.target_mut(), &snap.target) {
            t.set_values(vals);
        }
    }

    /// Named values for a checkpoint; target parameters carry a `target/` prefix.
    pub fn checkpoint_records(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = self.params.iter().map(|p| (p.name.clone(), &p.value)).collect();
        if let Some(t) = self.objective.target() {
            out.extend(t.iter().map(|p| (format!("{TARGET_PREFIX}{}", p.name), &p.value)));
        }
        out
    }

    /// Loads values saved by [`checkpoint_records`](Self::checkpoint_records). Every
    /// parameter must be present with a matching shape.
    pub fn load_records(&mut self, records: Vec<(String, Matrix)>) -> Result<()> {
        let mut by_name: std::collections::HashMap<String, Matrix> = records.into_iter().collect();
        let mut fill = |store: &mut ParamStore, prefix: &str| -> Result<()> {
            for p in store.iter_mut() {
                let key = format!("{prefix}{}", p.name);
                let m = by_name
                    .remove(&key)
                    .ok_or_else(|| Error::Format { path: Default::default(), msg: format!("checkpoint lacks parameter '{key}'") })?;
                if m.shape() != p.value.shape() {
                    return Err(Error::Format {
                        path: Default::default(),
                        msg: format!("parameter '{key}' is {:?} in the checkpoint but {:?} in the model", m.shape(), p.value.shape()),
                    });
                }
                p.value = m;
            }
            Ok(())
        };
        fill(&mut self.params, "")?;
        if let Some(t) = self.objective.target_mut() {
            fill(t, TARGET_PREFIX)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format { path: Default::default(), msg: format!("checkpoint has unknown parameter '{extra}'") });
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::encoders::{Activation, EncoderKind};

    #[test]
    fn defaults_validate() {
        for name in MethodName::ALL {
            MethodConfig::new(name).validate().unwrap();
        }
        let mut c = MethodConfig::new(MethodName::Graphcl);
        c.tau = -1.0;
        match c.validate() {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/method/tau"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn level_support() {
        let enc = small_encoder(EncoderKind::Gcn, Activation::Relu);
        assert!(MethodState::new(MethodConfig::new(MethodName::Dgi), enc, Level::Graph, 3, 0).is_err());
        assert!(MethodState::new(MethodConfig::new(MethodName::Infograph), enc, Level::Node, 3, 0).is_err());
        assert!(MethodState::new(MethodConfig::new(MethodName::Dgi), enc, Level::Node, 0, 0).is_err());
    }

    #[test]
    fn checkpoint_records_round_trip() {
        let enc = small_encoder(EncoderKind::Gcn, Activation::Prelu);
        let a = MethodState::new(MethodConfig::new(MethodName::Bgrl), enc, Level::Node, 4, 1).unwrap();
        let mut b = MethodState::new(MethodConfig::new(MethodName::Bgrl), enc, Level::Node, 4, 2).unwrap();
        assert_ne!(a.snapshot(), b.snapshot());
        let recs: Vec<(String, Matrix)> = a.checkpoint_records().into_iter().map(|(n, m)| (n, m.clone())).collect();
        assert!(recs.iter().any(|(n, _)| n.starts_with(TARGET_PREFIX)));
        b.load_records(recs.clone()).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
        let mut missing = recs;
        missing.pop();
        assert!(b.load_records(missing).is_err());
    }

    #[test]
    fn embeddings_are_deterministic_and_sized() {
        let g = random_graph(9, 3, 0.3, 4);
        for name in [MethodName::Dgi, MethodName::Mvgrl, MethodName::Bgrl, MethodName::Gca, MethodName::Graphcl, MethodName::Graphmae] {
            let s =
                MethodState::new(MethodConfig::new(name), small_encoder(EncoderKind::Gcn, Activation::Prelu), Level::Node, 3, 0).unwrap();
            let e = s.embed(&Batch::Node(&g)).unwrap();
            assert_eq!(e.shape(), (9, 8));
            assert_eq!(e, s.embed(&Batch::Node(&g)).unwrap());
        }
    }
}
