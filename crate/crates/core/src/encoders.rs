//! GCN and GIN encoders, readouts, the bilinear discriminator and MLP heads.
//!
//! Encoders only hold [`ParamId`]s; values live in a [`ParamStore`] owned by
//! the method so one store can back several networks.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{xavier_init, CsrMatrix, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{sym_norm_adj, Graph, GraphBatch};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Gcn,
    Gin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Prelu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Mean,
    Sum,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub readout: Readout,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("/model/layers", "need at least one layer"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::config("/model/hidden_dim", "hidden_dim must be at least 1"));
        }
        Ok(())
    }

    /// Width of the layer-concatenated graph embedding.
    pub fn graph_dim(&self) -> usize {
        self.layers * self.hidden_dim
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Gcn { w: ParamId, b: ParamId, slope: Option<ParamId> },
    Gin { eps: ParamId, w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId, slope: Option<ParamId> },
}

/// A stack of message-passing layers.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    in_dim: usize,
    layers: Vec<Layer>,
}

fn weight(store: &mut ParamStore, name: String, rows: usize, cols: usize, seed: u64) -> Result<ParamId> {
    Ok(store.add(name, xavier_init(rows, cols, seed)?))
}

impl Encoder {
    /// Registers parameters named `{prefix}.l{i}.*` in `store`.
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: EncoderConfig, in_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 {
            return Err(Error::shape("encoder input dimension is 0"));
        }
        let h = cfg.hidden_dim;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { in_dim } else { h };
            let s = |k: u64| seed::derive(seed, 16 * l as u64 + k);
            let p = format!("{prefix}.l{l}");
            let slope = match cfg.activation {
                Activation::Prelu => Some(store.add(format!("{p}.slope"), Matrix::scalar(0.25))),
                _ => None,
            };
            layers.push(match cfg.kind {
                EncoderKind::Gcn => Layer::Gcn {
                    w: weight(store, format!("{p}.w"), d_in, h, s(0))?,
                    b: store.add(format!("{p}.b"), Matrix::zeros(1, h)),
                    slope,
                },
                EncoderKind::Gin => Layer::Gin {
                    eps: store.add(format!("{p}.eps"), Matrix::scalar(0.0)),
                    w1: weight(store, format!("{p}.w1"), d_in, h, s(1))?,
                    b1: store.add(format!("{p}.b1"), Matrix::zeros(1, h)),
                    w2: weight(store, format!("{p}.w2"), h, h, s(2))?,
                    b2: store.add(format!("{p}.b2"), Matrix::zeros(1, h)),
                    slope,
                },
            });
        }
        Ok(Encoder { cfg, in_dim, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Parameter ids in a fixed order (layer by layer).
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| match *l {
                Layer::Gcn { w, b, slope } => [Some(w), Some(b), slope].into_iter().flatten().collect::<Vec<_>>(),
                Layer::Gin { eps, w1, b1, w2, b2, slope } => {
                    [Some(eps), Some(w1), Some(b1), Some(w2), Some(b2), slope].into_iter().flatten().collect()
                }
            })
            .collect()
    }

    /// The operator this encoder propagates with: the normalized adjacency for
    /// GCN, the raw adjacency for GIN.
    pub fn propagation(&self, g: &Graph) -> Rc<CsrMatrix> {
        Rc::new(match self.cfg.kind {
            EncoderKind::Gcn => sym_norm_adj(g),
            EncoderKind::Gin => g.adjacency().clone(),
        })
    }

    fn activate(&self, tape: &mut Tape, store: &ParamStore, x: Var, slope: Option<ParamId>) -> Result<Var> {
        Ok(match self.cfg.activation {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
            Activation::Prelu => {
                let k = tape.param(store, slope.expect("prelu layer has a slope"));
                tape.prelu(x, k)?
            }
        })
    }

    /// Runs every layer and returns each layer's output (`n × hidden_dim`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, prop: &Rc<CsrMatrix>, x: Var) -> Result<Vec<Var>> {
        let (n, d) = tape.shape(x);
        if d != self.in_dim || prop.n_rows() != n || prop.n_cols() != n {
            return Err(Error::shape(format!(
                "encoder expects {} features and a {n}x{n} operator, got {d} features and {}x{}",
                self.in_dim,
                prop.n_rows(),
                prop.n_cols()
            )));
        }
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = match *layer {
                Layer::Gcn { w, b, slope } => {
                    let (w, b) = (tape.param(store, w), tape.param(store, b));
                    let hw = tape.matmul(h, w)?;
                    let agg = tape.spmm(prop, hw)?;
                    let z = tape.add_row(agg, b)?;
                    self.activate(tape, store, z, slope)?
                }
                Layer::Gin { eps, w1, b1, w2, b2, slope } => {
                    let eps = tape.param(store, eps);
                    let scaled = tape.scale_by(h, eps)?;
                    let self_term = tape.add(h, scaled)?;
                    let agg = tape.spmm(prop, h)?;
                    let z = tape.add(self_term, agg)?;
                    let z = mlp(tape, store, z, [w1, b1, w2, b2])?;
                    self.activate(tape, store, z, slope)?
                }
            };
            outs.push(h);
        }
        Ok(outs)
    }

    /// Final-layer node embeddings.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, prop: &Rc<CsrMatrix>, x: Var) -> Result<Var> {
        Ok(*self.forward(tape, store, prop, x)?.last().expect("at least one layer"))
    }

    /// One row per graph in `batch`: readouts of all layers, concatenated.
    pub fn graph_embedding(&self, tape: &mut Tape, batch: &GraphBatch, layers: &[Var]) -> Result<Var> {
        let parts = layers.iter().map(|&h| batch_readout(tape, h, self.cfg.readout, batch)).collect::<Result<Vec<_>>>()?;
        tape.concat_cols(&parts)
    }
}

/// `Linear → ReLU → Linear`.
fn mlp(tape: &mut Tape, store: &ParamStore, x: Var, [w1, b1, w2, b2]: [ParamId; 4]) -> Result<Var> {
    let (w1, b1, w2, b2) = (tape.param(store, w1), tape.param(store, b1), tape.param(store, w2), tape.param(store, b2));
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, w2)?;
    tape.add_row(h, b2)
}

/// Column-wise pooling of all rows into `1 × d`.
pub fn readout(tape: &mut Tape, h: Var, kind: Readout) -> Result<Var> {
    if tape.shape(h).0 == 0 {
        return Err(Error::contract("readout of an empty node set"));
    }
    match kind {
        Readout::Mean => tape.col_mean(h),
        Readout::Sum => Ok(tape.col_sum(h)),
        Readout::Max => tape.col_max(h),
    }
}

/// Per-graph pooling over a block-diagonal batch: `N × d → B × d`.
pub fn batch_readout(tape: &mut Tape, h: Var, kind: Readout, batch: &GraphBatch) -> Result<Var> {
    if tape.shape(h).0 != batch.graph.n() {
        return Err(Error::shape("readout input rows differ from batch node count"));
    }
    match kind {
        Readout::Sum | Readout::Mean => {
            if (0..batch.n_graphs()).any(|i| batch.offsets[i + 1] == batch.offsets[i]) {
                return Err(Error::contract("readout of an empty graph"));
            }
            let pool = match kind {
                Readout::Sum => batch.pooling(|_| 1.0),
                _ => batch.pooling(|n| 1.0 / n as f64),
            };
            tape.spmm(&Rc::new(pool), h)
        }
        Readout::Max => {
            let rows = (0..batch.n_graphs())
                .map(|i| {
                    let idx: Vec<usize> = (batch.offsets[i]..batch.offsets[i + 1]).collect();
                    let part = tape.gather_rows(h, Rc::new(idx))?;
                    readout(tape, part, Readout::Max)
                })
                .collect::<Result<Vec<_>>>()?;
            tape.concat_rows(&rows)
        }
    }
}

/// Discriminator logits `h_i · (W sᵀ)` as an `n × 1` column.
pub fn bilinear_score(tape: &mut Tape, h: Var, s: Var, w: Var) -> Result<Var> {
    let ws = tape.matmul_t(w, s)?;
    tape.matmul(h, ws)
}

/// Two-layer perceptron with a ReLU hidden layer and linear output.
#[derive(Clone, Debug)]
pub struct MlpHead {
    ids: [ParamId; 4],
}

impl MlpHead {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize, seed: u64) -> Result<Self> {
        Ok(MlpHead {
            ids: [
                weight(store, format!("{prefix}.w1"), d_in, d_hidden, seed::derive(seed, 1))?,
                store.add(format!("{prefix}.b1"), Matrix::zeros(1, d_hidden)),
                weight(store, format!("{prefix}.w2"), d_hidden, d_out, seed::derive(seed, 2))?,
                store.add(format!("{prefix}.b2"), Matrix::zeros(1, d_out)),
            ],
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.ids.to_vec()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        mlp(tape, store, x, self.ids)
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        Ok(Linear {
            w: weight(store, format!("{prefix}.w"), d_in, d_out, seed)?,
            b: store.add(format!("{prefix}.b"), Matrix::zeros(1, d_out)),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}
