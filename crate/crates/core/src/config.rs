//! Run configuration: one JSON object with the sections `dataset`, `model`,
//! `method`, `optimizer`, `evaluator` and a top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::encoders::{Activation, EncoderConfig, EncoderKind, Readout};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, SvmConfig};
use crate::methods::{Level, MethodConfig, MethodName};
use crate::trainer::{Monitor, TrainConfig, DEFAULT_GRAPH_EPOCHS, DEFAULT_MIN_DELTA, DEFAULT_NODE_EPOCHS, DEFAULT_PATIENCE};

/// Environment variable that replaces `dataset.root` when set.
pub const DATA_ROOT_ENV: &str = "GSSL_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub root: PathBuf,
    /// Graphs per minibatch for graph-level data.
    pub batch_size: usize,
    /// Degree cap for one-hot degree features on featureless data; the
    /// observed maximum degree when absent.
    pub degree_cap: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: OptimizerName,
    pub lr: f64,
    pub weight_decay: f64,
    /// Level-dependent default when absent.
    pub max_epochs: Option<usize>,
    pub patience: usize,
    pub min_delta: f64,
    pub monitor: Monitor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    #[default]
    Logistic,
    Svm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub classifier: Classifier,
    /// L2 strength of the logistic probe.
    pub l2: f64,
    /// Inverse regularization of the SVM.
    pub c: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Folds of cross-validated classification.
    pub k: usize,
    /// Split seeds of the node-classification protocol.
    pub repeats: usize,
    /// Train/validation/test fractions of random node splits.
    pub split: [f64; 3],
    /// Neighbours scored by similarity search.
    pub search_k: usize,
    /// Restarts of k-means.
    pub n_init: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        let probe = ProbeConfig::default();
        EvaluatorConfig {
            classifier: Classifier::Logistic,
            l2: probe.l2,
            c: SvmConfig::default().c,
            epochs: probe.epochs,
            lr: probe.lr,
            k: 10,
            repeats: 20,
            split: [0.1, 0.1, 0.8],
            search_k: 10,
            n_init: 10,
        }
    }
}

impl EvaluatorConfig {
    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig { l2: self.l2, epochs: self.epochs, lr: self.lr }
    }

    pub fn svm(&self) -> SvmConfig {
        SvmConfig { c: self.c, epochs: self.epochs, lr: self.lr }
    }
}

/// A fully resolved run description; serializing it yields the canonical form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: EncoderConfig,
    pub method: MethodConfig,
    pub optimizer: OptimizerConfig,
    pub evaluator: EvaluatorConfig,
    pub seed: u64,
    #[serde(rename = "_notes", skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

// What a config file may say; absent fields take defaults during resolution.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: RawDataset,
    #[serde(default)]
    model: RawModel,
    method: RawMethod,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    evaluator: RawEvaluator,
    seed: u64,
    #[serde(rename = "_notes", default)]
    notes: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    name: String,
    root: Option<PathBuf>,
    batch_size: Option<usize>,
    degree_cap: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<EncoderKind>,
    layers: Option<usize>,
    hidden_dim: Option<usize>,
    activation: Option<Activation>,
    readout: Option<Readout>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    name: MethodName,
    tau: Option<f64>,
    alpha: Option<f64>,
    top_k: Option<usize>,
    gamma: Option<f64>,
    mask_rate: Option<f64>,
    ema_decay: Option<f64>,
    drop_edge_p: Option<f64>,
    mask_feat_p: Option<f64>,
    p_tau: Option<f64>,
    aug_specs: Option<Vec<AugmentSpec>>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    name: Option<OptimizerName>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    min_delta: Option<f64>,
    monitor: Option<Monitor>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluator {
    classifier: Option<Classifier>,
    l2: Option<f64>,
    c: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    k: Option<usize>,
    repeats: Option<usize>,
    split: Option<[f64; 3]>,
    search_k: Option<usize>,
    n_init: Option<usize>,
}

/// Encoder defaults: graph-level objectives read out every GIN layer, node
/// objectives use a two-layer GCN.
fn default_model(method: MethodName) -> EncoderConfig {
    match method {
        MethodName::Infograph => {
            EncoderConfig { kind: EncoderKind::Gin, layers: 3, hidden_dim: 32, activation: Activation::Relu, readout: Readout::Sum }
        }
        _ => EncoderConfig { kind: EncoderKind::Gcn, layers: 2, hidden_dim: 128, activation: Activation::Prelu, readout: Readout::Mean },
    }
}

impl RawConfig {
    fn resolve(self) -> RunConfig {
        let m = self.method;
        let base = MethodConfig::new(m.name);
        let method = MethodConfig {
            name: m.name,
            tau: m.tau.unwrap_or(base.tau),
            alpha: m.alpha.unwrap_or(base.alpha),
            top_k: m.top_k.unwrap_or(base.top_k),
            gamma: m.gamma.unwrap_or(base.gamma),
            mask_rate: m.mask_rate.unwrap_or(base.mask_rate),
            ema_decay: m.ema_decay.unwrap_or(base.ema_decay),
            drop_edge_p: m.drop_edge_p.unwrap_or(base.drop_edge_p),
            mask_feat_p: m.mask_feat_p.unwrap_or(base.mask_feat_p),
            p_tau: m.p_tau.unwrap_or(base.p_tau),
            aug_specs: m.aug_specs,
        };
        let dm = default_model(m.name);
        let model = EncoderConfig {
            kind: self.model.kind.unwrap_or(dm.kind),
            layers: self.model.layers.unwrap_or(dm.layers),
            hidden_dim: self.model.hidden_dim.unwrap_or(dm.hidden_dim),
            activation: self.model.activation.unwrap_or(dm.activation),
            readout: self.model.readout.unwrap_or(dm.readout),
        };
        let o = self.optimizer;
        let optimizer = OptimizerConfig {
            name: o.name.unwrap_or_default(),
            lr: o.lr.unwrap_or(1e-3),
            weight_decay: o.weight_decay.unwrap_or(0.0),
            max_epochs: o.max_epochs,
            patience: o.patience.unwrap_or(DEFAULT_PATIENCE),
            min_delta: o.min_delta.unwrap_or(DEFAULT_MIN_DELTA),
            monitor: o.monitor.unwrap_or_default(),
        };
        let e = self.evaluator;
        let de = EvaluatorConfig::default();
        let evaluator = EvaluatorConfig {
            classifier: e.classifier.unwrap_or(de.classifier),
            l2: e.l2.unwrap_or(de.l2),
            c: e.c.unwrap_or(de.c),
            epochs: e.epochs.unwrap_or(de.epochs),
            lr: e.lr.unwrap_or(de.lr),
            k: e.k.unwrap_or(de.k),
            repeats: e.repeats.unwrap_or(de.repeats),
            split: e.split.unwrap_or(de.split),
            search_k: e.search_k.unwrap_or(de.search_k),
            n_init: e.n_init.unwrap_or(de.n_init),
        };
        let d = self.dataset;
        let dataset = DatasetConfig {
            name: d.name,
            root: d.root.unwrap_or_else(|| PathBuf::from("data")),
            batch_size: d.batch_size.unwrap_or(128),
            degree_cap: d.degree_cap,
        };
        RunConfig { dataset, model, method, optimizer, evaluator, seed: self.seed, notes: self.notes }
    }
}

/// JSON pointer of a serde path such as `method.tau` or `method.aug_specs[1]`.
fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl RunConfig {
    /// Parses and validates JSON text, filling defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let p = pointer(e.path());
            let inner = e.into_inner();
            // syntax errors carry a position but no meaningful path
            let ptr = if p.is_empty() || p == "/?" { String::from("/") } else { p };
            Error::config(ptr, inner.to_string())
        })?;
        let cfg = raw.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("/", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical pretty-printed JSON; `parse(to_json(c)) == c`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.method.validate()?;
        if self.dataset.name.is_empty() {
            return Err(Error::config("/dataset/name", "dataset name is empty"));
        }
        if self.dataset.batch_size < 2 {
            return Err(Error::config("/dataset/batch_size", "graph minibatches need at least 2 graphs"));
        }
        let o = &self.optimizer;
        if o.max_epochs == Some(0) {
            return Err(Error::config("/optimizer/max_epochs", "must be at least 1"));
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config("/optimizer/lr", format!("{} must be positive", o.lr)));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::config("/optimizer/weight_decay", format!("{} must be ≥ 0", o.weight_decay)));
        }
        if !(o.min_delta >= 0.0 && o.min_delta.is_finite()) {
            return Err(Error::config("/optimizer/min_delta", format!("{} must be ≥ 0", o.min_delta)));
        }
        let e = &self.evaluator;
        for (field, v) in [("l2", e.l2), ("lr", e.lr)] {
            if !(v >= 0.0 && v.is_finite()) || (field == "lr" && v == 0.0) {
                return Err(Error::config(format!("/evaluator/{field}"), format!("{v} is out of range")));
            }
        }
        if !(e.c > 0.0 && e.c.is_finite()) {
            return Err(Error::config("/evaluator/c", format!("{} must be positive", e.c)));
        }
        for (field, v, min) in
            [("epochs", e.epochs, 1), ("k", e.k, 2), ("repeats", e.repeats, 1), ("search_k", e.search_k, 1), ("n_init", e.n_init, 1)]
        {
            if v < min {
                return Err(Error::config(format!("/evaluator/{field}"), format!("{v} is below the minimum {min}")));
            }
        }
        let s = e.split;
        if s.iter().any(|r| !(0.0..=1.0).contains(r)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-6 || s[0] == 0.0 || s[2] == 0.0 {
            return Err(Error::config("/evaluator/split", format!("{s:?} must be fractions summing to 1 with non-empty train and test")));
        }
        Ok(())
    }

    /// `dataset.root`, unless the environment overrides it.
    pub fn data_root(&self) -> PathBuf {
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.dataset.root.clone(),
        }
    }

    pub fn train_config(&self, level: Level, checkpoint_path: Option<PathBuf>) -> TrainConfig {
        let o = &self.optimizer;
        TrainConfig {
            max_epochs: o.max_epochs.unwrap_or(if level == Level::Node { DEFAULT_NODE_EPOCHS } else { DEFAULT_GRAPH_EPOCHS }),
            patience: o.patience,
            min_delta: o.min_delta,
            lr: o.lr,
            weight_decay: o.weight_decay,
            batch_size: self.dataset.batch_size,
            seed: self.seed,
            checkpoint_path,
            monitor: o.monitor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset": {"name": "sbm-demo"}, "method": {"name": "dgi"}, "seed": 7}"#;

    fn err_pointer(text: &str) -> String {
        match RunConfig::parse(text) {
            Err(Error::Config { pointer, .. }) => pointer,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.method, MethodConfig::new(MethodName::Dgi));
        assert_eq!(c.optimizer.lr, 1e-3);
        assert_eq!(c.optimizer.patience, 20);
        assert_eq!(c.model.hidden_dim, 128);
        assert_eq!(c.dataset.root, PathBuf::from("data"));
        assert_eq!(c.train_config(Level::Node, None).max_epochs, 500);
        assert_eq!(c.train_config(Level::Graph, None).max_epochs, 100);
        let ig = RunConfig::parse(&MINIMAL.replace("dgi", "infograph")).unwrap();
        assert_eq!(ig.model.kind, EncoderKind::Gin);
    }

    #[test]
    fn range_errors_name_the_field() {
        assert_eq!(err_pointer(&MINIMAL.replace(r#""dgi""#, r#""dgi", "tau": -1"#)), "/method/tau");
        assert_eq!(err_pointer(&MINIMAL.replace(r#""seed": 7"#, r#""seed": 7, "optimizer": {"lr": 0}"#)), "/optimizer/lr");
        assert_eq!(err_pointer(&MINIMAL.replace(r#""seed": 7"#, r#""seed": 7, "model": {"layers": 0}"#)), "/model/layers");
        assert_eq!(
            err_pointer(&MINIMAL.replace(r#""seed": 7"#, r#""seed": 7, "evaluator": {"split": [0.5, 0.5, 0.5]}"#)),
            "/evaluator/split"
        );
    }

    #[test]
    fn unknown_keys_and_values_rejected() {
        assert_eq!(err_pointer(&MINIMAL.replace(r#""dgi""#, r#""dgi", "temperature": 1"#)), "/method/temperature");
        assert_eq!(err_pointer(&MINIMAL.replace(r#""seed": 7"#, r#""seed": 7, "extra": 1"#)), "/extra");
        assert_eq!(err_pointer(&MINIMAL.replace("dgi", "simclr")), "/method/name");
        assert_eq!(err_pointer(&MINIMAL.replace("\"seed\": 7", "\"seed\": \"x\"")), "/seed");
        assert_eq!(err_pointer("{not json"), "/");
        let with_notes = MINIMAL.replace(r#""seed": 7"#, r#""seed": 7, "_notes": "tuned by hand""#);
        assert_eq!(RunConfig::parse(&with_notes).unwrap().notes.as_deref(), Some("tuned by hand"));
    }

    #[test]
    fn canonical_round_trip() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let text = c.to_json();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }
}
