//! Contrast of two augmented views with in-batch negatives.

use std::rc::Rc;

use crate::augment::{apply_spec, AugmentKind, AugmentSpec};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::encoders::{Encoder, EncoderConfig, MlpHead};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch};
use crate::seed;

use super::losses::nt_xent;
use super::{cap_anchors, default_embed, Batch, Level, MethodConfig, Objective};

pub(crate) struct GraphCl {
    enc: Encoder,
    head: MlpHead,
    specs: [AugmentSpec; 2],
    tau: f64,
}

/// Default view pair: feature masking plus edge dropping for node-level data;
/// node dropping against subgraph sampling for graph collections.
pub fn default_specs(cfg: &MethodConfig, level: Level) -> [AugmentSpec; 2] {
    match level {
        Level::Node => {
            let v = AugmentSpec::compose(vec![AugmentSpec::drop_edges(cfg.drop_edge_p), AugmentSpec::mask_features(cfg.mask_feat_p)]);
            [v.clone(), v]
        }
        Level::Graph => [AugmentSpec::drop_nodes(0.2), AugmentSpec::subgraph_fraction(0.2)],
    }
}

fn changes_node_set(spec: &AugmentSpec) -> bool {
    matches!(spec.kind, AugmentKind::DropNodes | AugmentKind::Subgraph) || spec.children.iter().any(changes_node_set)
}

impl GraphCl {
    pub fn new(store: &mut ParamStore, cfg: &MethodConfig, enc_cfg: EncoderConfig, level: Level, in_dim: usize, seed: u64) -> Result<Self> {
        let specs = match &cfg.aug_specs {
            Some(v) => [v[0].clone(), v[1].clone()],
            None => default_specs(cfg, level),
        };
        if level == Level::Node && specs.iter().any(changes_node_set) {
            return Err(Error::Method("node-level graphcl needs views that keep every node (no drop_nodes/subgraph)".into()));
        }
        let enc = Encoder::new(store, "enc", enc_cfg, in_dim, seed::derive(seed, 0))?;
        let d = match level {
            Level::Node => enc_cfg.hidden_dim,
            Level::Graph => enc_cfg.graph_dim(),
        };
        let head = MlpHead::new(store, "proj", d, d, d, seed::derive(seed, 1))?;
        Ok(GraphCl { enc, head, specs, tau: cfg.tau })
    }

    fn node_view(&self, store: &ParamStore, tape: &mut Tape, g: &Graph, k: usize, seed: u64) -> Result<Var> {
        let view = apply_spec(g, &self.specs[k], seed)?;
        let prop = match view.propagation {
            Some(p) => Rc::new(p),
            None => self.enc.propagation(&view.graph),
        };
        let x = tape.constant(view.graph.features().clone());
        let h = self.enc.encode(tape, store, &prop, x)?;
        self.head.forward(tape, store, h)
    }

    fn graph_view(&self, store: &ParamStore, tape: &mut Tape, graphs: &[&Graph], k: usize, seed: u64) -> Result<Var> {
        let views = graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let v = apply_spec(g, &self.specs[k], seed::derive(seed, i as u64))?;
                if v.propagation.is_some() {
                    return Err(Error::Method("diffusion views are only supported for node-level graphcl".into()));
                }
                Ok(v.graph)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Graph> = views.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let x = tape.constant(batch.graph.features().clone());
        let layers = self.enc.forward(tape, store, &self.enc.propagation(&batch.graph), x)?;
        let e = self.enc.graph_embedding(tape, &batch, &layers)?;
        self.head.forward(tape, store, e)
    }
}

impl Objective for GraphCl {
    fn loss(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        let (z1, z2) = match batch {
            Batch::Node(g) => {
                let z1 = self.node_view(store, tape, g, 0, seed::derive(seed, 0))?;
                let z2 = self.node_view(store, tape, g, 1, seed::derive(seed, 1))?;
                cap_anchors(tape, z1, z2, seed::derive(seed, 2))?
            }
            Batch::Graphs(gs) => {
                if gs.len() < 2 {
                    return Err(Error::Method("graphcl needs at least two graphs per batch for negatives".into()));
                }
                (self.graph_view(store, tape, gs, 0, seed::derive(seed, 0))?, self.graph_view(store, tape, gs, 1, seed::derive(seed, 1))?)
            }
        };
        nt_xent(tape, z1, z2, self.tau)
    }

    fn embed(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        default_embed(&self.enc, store, tape, batch)
    }
}
