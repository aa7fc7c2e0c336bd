//! Pretraining loop: Adam updates, early stopping on a monitored loss,
//! best-parameter restoration and checkpointing.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, ParamStore, Tape, Var};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::EmbeddingTable;
use crate::graph::{Dataset, Graph, GraphSet, Split};
use crate::io::save_checkpoint;
use crate::methods::{Batch, Level, MethodConfig, MethodState, Snapshot};
use crate::seed;

pub const DEFAULT_PATIENCE: usize = 20;
pub const DEFAULT_MIN_DELTA: f64 = 1e-4;
pub const DEFAULT_NODE_EPOCHS: usize = 500;
pub const DEFAULT_GRAPH_EPOCHS: usize = 100;

/// Which loss drives early stopping and best-parameter selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    TrainLoss,
    /// The objective evaluated on the subgraph induced by the validation
    /// nodes; node datasets with a split only.
    ValLoss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Graphs per minibatch; ignored for node-level data, which trains full-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub monitor: Monitor,
}

impl TrainConfig {
    pub fn new(level: Level) -> Self {
        TrainConfig {
            max_epochs: if level == Level::Node { DEFAULT_NODE_EPOCHS } else { DEFAULT_GRAPH_EPOCHS },
            patience: DEFAULT_PATIENCE,
            min_delta: DEFAULT_MIN_DELTA,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 128,
            seed: 0,
            checkpoint_path: None,
            monitor: Monitor::TrainLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("/optimizer/{field}"), msg));
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta", format!("{} must be a finite value ≥ 0", self.min_delta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", format!("{} must be ≥ 0", self.weight_decay));
        }
        if self.batch_size < 2 {
            return Err(Error::config("/dataset/batch_size", "graph minibatches need at least 2 graphs"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub loss_history: Vec<f64>,
    /// Monitored validation losses, empty unless [`Monitor::ValLoss`] is used.
    pub val_history: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub wall_time: f64,
}

impl TrainReport {
    /// One `epoch <i> loss <float>` line per epoch.
    pub fn log_lines(&self) -> String {
        self.loss_history.iter().enumerate().map(|(i, l)| format!("epoch {} loss {l}\n", i + 1)).collect()
    }
}

/// True when the trailing run of epochs that failed to beat the running best
/// by more than `min_delta` is longer than `patience`.
pub fn should_stop(loss_history: &[f64], patience: usize, min_delta: f64) -> bool {
    stale_epochs(loss_history, min_delta) > patience
}

/// Length of the trailing run of epochs that did not beat the running best by more than `min_delta`.
pub fn stale_epochs(history: &[f64], min_delta: f64) -> usize {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &l in history {
        if l < best - min_delta {
            best = l;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale
}

/// A model the loop can optimize. [`MethodState`] is the production
/// implementation.
pub trait Trainable {
    type Snap: Clone;
    fn level(&self) -> Level;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn loss(&self, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var>;
    fn after_step(&mut self) -> Result<()>;
    fn snapshot(&self) -> Self::Snap;
    fn restore(&mut self, snap: &Self::Snap);
}

impl Trainable for MethodState {
    type Snap = Snapshot;
    fn level(&self) -> Level {
        MethodState::level(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn loss(&self, tape: &mut Tape, batch: &Batch, seed: u64) -> Result<Var> {
        MethodState::loss(self, tape, batch, seed)
    }
    fn after_step(&mut self) -> Result<()> {
        MethodState::after_step(self)
    }
    fn snapshot(&self) -> Snapshot {
        MethodState::snapshot(self)
    }
    fn restore(&mut self, snap: &Snapshot) {
        MethodState::restore(self, snap)
    }
}

/// Training data viewed by level.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    Nodes { graph: &'a Graph, split: Option<&'a Split> },
    Graphs(&'a GraphSet),
}

impl<'a> From<&'a Dataset> for TrainData<'a> {
    fn from(d: &'a Dataset) -> Self {
        match d {
            Dataset::Nodes { graph, split } => TrainData::Nodes { graph, split: split.as_ref() },
            Dataset::Graphs(gs) => TrainData::Graphs(gs),
        }
    }
}

impl TrainData<'_> {
    pub fn level(&self) -> Level {
        match self {
            TrainData::Nodes { .. } => Level::Node,
            TrainData::Graphs(_) => Level::Graph,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainData::Nodes { graph, .. } => graph.n_features(),
            TrainData::Graphs(gs) => gs.n_features(),
        }
    }
}

fn step<T: Trainable>(model: &mut T, batch: &Batch, seed: u64, adam: &AdamConfig, epoch: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let l = model.loss(&mut tape, batch, seed)?;
    let value = tape.scalar(l);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { epoch });
    }
    tape.backward(l, model.params_mut())?;
    adam_step(model.params_mut(), adam)?;
    model.after_step()?;
    Ok(value)
}

/// Graph indices of each minibatch for one epoch. A trailing single graph
/// joins the previous batch, since graph-level objectives contrast within a batch.
pub fn minibatches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Augmentation seed of a 1-based epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed::derive(seed::derive(seed, 1), epoch as u64)
}

fn val_loss<T: Trainable>(model: &T, val: &Graph, seed: u64, epoch: usize) -> Result<f64> {
    let mut tape = Tape::no_grad();
    let l = model.loss(&mut tape, &Batch::Node(val), seed)?;
    let v = tape.scalar(l);
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss { epoch });
    }
    Ok(v)
}

/// Runs the optimization loop on an existing model.
///
/// Node data takes one full-graph step per epoch, and the recorded loss is the
/// one evaluated at that epoch's starting parameters. Graph data shuffles the
/// set with an epoch seed and averages the minibatch losses; its best
/// parameters are those at the end of the best epoch.
pub fn fit<T: Trainable>(model: &mut T, data: TrainData, tc: &TrainConfig) -> Result<TrainReport> {
    tc.validate()?;
    if model.level() != data.level() {
        return Err(Error::Method(format!("model is {:?}-level but the data is {:?}-level", model.level(), data.level())));
    }
    let start = Instant::now();
    let adam = tc.adam();
    let val_graph = match (tc.monitor, data) {
        (Monitor::TrainLoss, _) => None,
        (Monitor::ValLoss, TrainData::Nodes { graph, split: Some(split) }) if !split.val.is_empty() => Some(graph.induced(&split.val)),
        (Monitor::ValLoss, _) => {
            return Err(Error::config("/optimizer/monitor", "val_loss needs node-level data with a non-empty validation split"))
        }
    };
    let val_seed = seed::derive(tc.seed, 2);
    let mut report = TrainReport {
        epochs_run: 0,
        loss_history: Vec::new(),
        val_history: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        wall_time: 0.0,
    };
    let mut best: Option<(f64, T::Snap)> = None;
    for epoch in 1..=tc.max_epochs {
        let epoch_seed = epoch_seed(tc.seed, epoch);
        let (loss, monitored, snap) = match data {
            TrainData::Nodes { graph, .. } => {
                let monitored = val_graph.as_ref().map(|v| val_loss(model, v, val_seed, epoch)).transpose()?;
                let before = model.snapshot();
                let loss = step(model, &Batch::Node(graph), epoch_seed, &adam, epoch)?;
                (loss, monitored.unwrap_or(loss), before)
            }
            TrainData::Graphs(gs) => {
                let batches = minibatches(gs.len(), tc.batch_size, epoch_seed);
                let mut total = 0.0;
                for (b, idx) in batches.iter().enumerate() {
                    let graphs: Vec<&Graph> = idx.iter().map(|&i| &gs.graphs()[i]).collect();
                    total += step(model, &Batch::Graphs(graphs), seed::derive(epoch_seed, b as u64 + 1), &adam, epoch)?;
                }
                let loss = total / batches.len() as f64;
                (loss, loss, model.snapshot())
            }
        };
        log::info!("epoch {epoch} loss {loss}");
        report.loss_history.push(loss);
        if val_graph.is_some() {
            report.val_history.push(monitored);
        }
        report.epochs_run = epoch;
        if best.as_ref().is_none_or(|(b, _)| monitored < *b) {
            best = Some((monitored, snap));
            report.best_epoch = epoch;
        }
        let history = if val_graph.is_some() { &report.val_history } else { &report.loss_history };
        if epoch < tc.max_epochs && should_stop(history, tc.patience, tc.min_delta) {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, snap)) = &best {
        model.restore(snap);
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Builds a fresh method state for `data` and trains it. The checkpoint, when
/// requested, holds the restored best parameters.
pub fn pretrain(data: TrainData, method: MethodConfig, enc: EncoderConfig, tc: &TrainConfig) -> Result<(MethodState, TrainReport)> {
    let mut state = MethodState::new(method, enc, data.level(), data.n_features(), seed::derive(tc.seed, 0))?;
    let report = fit(&mut state, data, tc)?;
    if let Some(path) = &tc.checkpoint_path {
        let records = state.checkpoint_records();
        save_checkpoint(path, records.iter().map(|(n, m)| (n.as_str(), *m)))?;
    }
    Ok((state, report))
}

/// Frozen embeddings: one row per node for node data, one per graph otherwise.
pub fn extract_embeddings(state: &MethodState, data: TrainData) -> Result<EmbeddingTable> {
    if state.in_dim() != data.n_features() {
        return Err(Error::shape(format!("model expects {} input features, data has {}", state.in_dim(), data.n_features())));
    }
    let m = match data {
        TrainData::Nodes { graph, .. } => state.embed(&Batch::Node(graph))?,
        TrainData::Graphs(gs) => {
            // bounded batches keep the block-diagonal union small
            let mut rows = Vec::with_capacity(gs.len());
            for chunk in gs.graphs().chunks(256) {
                let e = state.embed(&Batch::Graphs(chunk.iter().collect()))?;
                rows.extend((0..e.rows()).map(|i| e.row(i).to_vec()));
            }
            crate::autodiff::Matrix::from_rows(&rows)
        }
    };
    EmbeddingTable::from_matrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::encoders::{Activation, EncoderKind, Readout};
    use crate::io::load_checkpoint;
    use crate::methods::MethodName;
    use proptest::prelude::*;

    #[test]
    fn hand_traced_stop() {
        let h = [3.0, 2.0, 2.0, 2.0, 2.0];
        let stale: Vec<usize> = (1..=5).map(|e| stale_epochs(&h[..e], 0.0)).collect();
        assert_eq!(stale, vec![0, 0, 1, 2, 3]);
        let stops: Vec<bool> = (1..=5).map(|e| should_stop(&h[..e], 2, 0.0)).collect();
        assert_eq!(stops, vec![false, false, false, false, true]);
    }

    #[test]
    fn zero_patience_stops_at_first_stall() {
        assert!(!should_stop(&[3.0, 2.0], 0, 0.0));
        assert!(should_stop(&[3.0, 2.0, 2.5], 0, 0.0));
    }

    #[test]
    fn min_delta_counts_small_gains_as_stale() {
        assert!(should_stop(&[1.0, 0.99995, 0.9999], 1, 1e-4));
        assert!(!should_stop(&[1.0, 0.99995, 0.9], 1, 1e-4));
    }

    proptest! {
        #[test]
        fn strictly_decreasing_never_stops(start in 1.0f64..100.0, steps in proptest::collection::vec(1e-3f64..1.0, 1..60)) {
            let mut h = vec![start];
            for s in steps {
                let last = *h.last().unwrap();
                h.push(last - s);
            }
            for e in 1..=h.len() {
                prop_assert!(!should_stop(&h[..e], 0, 1e-4));
            }
        }

        #[test]
        fn minibatches_partition(n in 2usize..300, bs in 2usize..64, seed in any::<u64>()) {
            let b = minibatches(n, bs, seed);
            let mut all: Vec<usize> = b.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(b.iter().all(|x| x.len() >= 2 && x.len() <= bs + 1));
        }
    }

    /// One scalar parameter; the loss is `slope·w` plus an optional NaN epoch.
    struct Stub {
        store: ParamStore,
        slope: f64,
        nan_at_step: Option<usize>,
        steps: std::cell::Cell<usize>,
    }

    impl Stub {
        fn new(slope: f64) -> Self {
            let mut store = ParamStore::new();
            store.add("w", Matrix::scalar(0.0));
            Stub { store, slope, nan_at_step: None, steps: Default::default() }
        }
    }

    impl Trainable for Stub {
        type Snap = Vec<Matrix>;
        fn level(&self) -> Level {
            Level::Node
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.store
        }
        fn loss(&self, tape: &mut Tape, _: &Batch, _: u64) -> Result<Var> {
            let k = self.steps.get() + 1;
            self.steps.set(k);
            let w = tape.param(&self.store, self.store.id_of("w").unwrap());
            let l = tape.scale(w, self.slope);
            Ok(if self.nan_at_step == Some(k) { tape.scale(l, f64::NAN) } else { l })
        }
        fn after_step(&mut self) -> Result<()> {
            Ok(())
        }
        fn snapshot(&self) -> Vec<Matrix> {
            self.store.values()
        }
        fn restore(&mut self, snap: &Vec<Matrix>) {
            self.store.set_values(snap)
        }
    }

    fn tiny() -> Graph {
        Graph::from_edges("t", 3, [(0, 1), (1, 2)], Matrix::identity(3)).unwrap()
    }

    fn tc(max_epochs: usize, patience: usize) -> TrainConfig {
        TrainConfig { max_epochs, patience, lr: 0.01, ..TrainConfig::new(Level::Node) }
    }

    #[test]
    fn single_epoch_runs_once() {
        let g = tiny();
        let r = fit(&mut Stub::new(1.0), TrainData::Nodes { graph: &g, split: None }, &tc(1, 0)).unwrap();
        assert_eq!((r.epochs_run, r.loss_history.len(), r.stopped_early), (1, 1, false));
    }

    #[test]
    fn decreasing_loss_runs_to_the_end() {
        let g = tiny();
        let r = fit(&mut Stub::new(1.0), TrainData::Nodes { graph: &g, split: None }, &tc(50, 0)).unwrap();
        assert_eq!(r.epochs_run, 50);
        assert!(!r.stopped_early);
        assert!(r.loss_history.windows(2).all(|w| w[1] < w[0]));
        assert!(r.log_lines().starts_with("epoch 1 loss 0\nepoch 2 loss "));
    }

    #[test]
    fn patience_beyond_budget_runs_every_epoch() {
        // slope 0: the loss never moves, so only patience ≥ max_epochs avoids a stop
        let g = tiny();
        let data = TrainData::Nodes { graph: &g, split: None };
        assert_eq!(fit(&mut Stub::new(0.0), data, &tc(30, 30)).unwrap().epochs_run, 30);
        let r = fit(&mut Stub::new(0.0), data, &tc(30, 3)).unwrap();
        assert_eq!((r.epochs_run, r.stopped_early, r.best_epoch), (5, true, 1));
    }

    #[test]
    fn non_finite_loss_aborts_with_epoch() {
        let g = tiny();
        let mut s = Stub::new(1.0);
        s.nan_at_step = Some(3);
        let err = fit(&mut s, TrainData::Nodes { graph: &g, split: None }, &tc(10, 10)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 3 }), "{err}");
    }

    fn enc(kind: EncoderKind) -> EncoderConfig {
        EncoderConfig { kind, layers: 2, hidden_dim: 8, activation: Activation::Prelu, readout: Readout::Sum }
    }

    fn node_graph() -> Graph {
        crate::methods::testutil::random_graph(20, 5, 0.2, 3)
    }

    #[test]
    fn deterministic_and_restores_best() {
        let g = node_graph();
        let data = TrainData::Nodes { graph: &g, split: None };
        let cfg = TrainConfig { max_epochs: 40, lr: 0.05, seed: 9, ..TrainConfig::new(Level::Node) };
        let (s1, r1) = pretrain(data, MethodConfig::new(MethodName::Gca), enc(EncoderKind::Gcn), &cfg).unwrap();
        let (s2, r2) = pretrain(data, MethodConfig::new(MethodName::Gca), enc(EncoderKind::Gcn), &cfg).unwrap();
        assert_eq!(r1.loss_history, r2.loss_history);
        assert_eq!(s1.params.values(), s2.params.values());
        let min = r1.loss_history.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r1.loss_history[r1.best_epoch - 1], min);
        let mut tape = Tape::new();
        let l = s1.loss(&mut tape, &Batch::Node(&g), epoch_seed(cfg.seed, r1.best_epoch)).unwrap();
        assert!((tape.scalar(l) - min).abs() < 1e-12, "{} vs {min}", tape.scalar(l));
    }

    #[test]
    fn graph_level_training_and_extraction() {
        let graphs: Vec<Graph> = (0..9).map(|i| crate::methods::testutil::random_graph(5 + i % 3, 4, 0.4, i as u64)).collect();
        let gs = GraphSet::new("set", graphs, (0..9).map(|i| i % 2).collect(), 2).unwrap();
        let cfg = TrainConfig { max_epochs: 3, batch_size: 4, seed: 1, ..TrainConfig::new(Level::Graph) };
        let (s, r) = pretrain(TrainData::Graphs(&gs), MethodConfig::new(MethodName::Infograph), enc(EncoderKind::Gin), &cfg).unwrap();
        assert_eq!(r.loss_history.len(), r.epochs_run);
        let e = extract_embeddings(&s, TrainData::Graphs(&gs)).unwrap();
        assert_eq!((e.n(), e.d()), (9, 16));
        assert_eq!(e, extract_embeddings(&s, TrainData::Graphs(&gs)).unwrap());
    }

    #[test]
    fn incompatible_pairings_fail() {
        let g = node_graph();
        let cfg = TrainConfig { max_epochs: 2, ..TrainConfig::new(Level::Node) };
        let node = TrainData::Nodes { graph: &g, split: None };
        assert!(pretrain(node, MethodConfig::new(MethodName::Infograph), enc(EncoderKind::Gin), &cfg).is_err());
        let gs = GraphSet::new("s", vec![g.clone(), g.clone()], vec![0, 1], 2).unwrap();
        assert!(pretrain(TrainData::Graphs(&gs), MethodConfig::new(MethodName::Dgi), enc(EncoderKind::Gcn), &cfg).is_err());
        let (s, _) = pretrain(node, MethodConfig::new(MethodName::Dgi), enc(EncoderKind::Gcn), &cfg).unwrap();
        let other = crate::methods::testutil::random_graph(6, 3, 0.3, 1);
        assert!(extract_embeddings(&s, TrainData::Nodes { graph: &other, split: None }).is_err());
        let bad = TrainConfig { max_epochs: 0, ..cfg };
        assert!(matches!(pretrain(node, MethodConfig::new(MethodName::Dgi), enc(EncoderKind::Gcn), &bad), Err(Error::Config { .. })));
    }

    #[test]
    fn bgrl_extraction_ignores_frozen_ema() {
        let g = node_graph();
        let mut m = MethodConfig::new(MethodName::Bgrl);
        m.ema_decay = 1.0;
        let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::new(Level::Node) };
        let data = TrainData::Nodes { graph: &g, split: None };
        let (mut s, _) = pretrain(data, m, enc(EncoderKind::Gcn), &cfg).unwrap();
        let e = extract_embeddings(&s, data).unwrap();
        assert_eq!(e.n(), 20);
        s.after_step().unwrap();
        assert_eq!(e, extract_embeddings(&s, data).unwrap());
    }

    #[test]
    fn validation_monitor_and_checkpoint() {
        let g = node_graph();
        let split = crate::graph::split_nodes(20, (0.5, 0.25, 0.25), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg =
            TrainConfig { max_epochs: 12, monitor: Monitor::ValLoss, checkpoint_path: Some(path.clone()), ..TrainConfig::new(Level::Node) };
        let data = TrainData::Nodes { graph: &g, split: Some(&split) };
        let (s, r) = pretrain(data, MethodConfig::new(MethodName::Dgi), enc(EncoderKind::Gcn), &cfg).unwrap();
        assert_eq!(r.val_history.len(), r.epochs_run);
        let min = r.val_history.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r.val_history[r.best_epoch - 1], min);
        let saved = load_checkpoint(&path).unwrap();
        let mut fresh = MethodState::new(MethodConfig::new(MethodName::Dgi), enc(EncoderKind::Gcn), Level::Node, 5, 0).unwrap();
        fresh.load_records(saved).unwrap();
        let a = extract_embeddings(&s, data).unwrap();
        let b = extract_embeddings(&fresh, data).unwrap();
        assert!(a.data().max_abs_diff(b.data()) < 1e-5);
        let no_split = TrainData::Nodes { graph: &g, split: None };
        assert!(matches!(pretrain(no_split, MethodConfig::new(MethodName::Dgi), enc(EncoderKind::Gcn), &cfg), Err(Error::Config { .. })));
    }
}
