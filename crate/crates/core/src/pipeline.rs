//! End-to-end steps shared by the command line and the C interface: resolve
//! a dataset, pretrain, extract embeddings, evaluate and write artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Classifier, RunConfig};
use crate::error::{BundleError, Error, Result};
use crate::eval::{kmeans_nmi, linear_svm_cv, logistic_probe, similarity_search, EmbeddingTable, EvalResult};
use crate::graph::{gen_sbm, kfold_split, load_bundle, split_nodes, Dataset, SbmParams, Split};
use crate::io::{export_embeddings, load_checkpoint, save_checkpoint, EmbeddingFormat};
use crate::methods::{Level, MethodState};
use crate::seed;
use crate::trainer::{extract_embeddings, pretrain, TrainData, TrainReport};

/// Dataset name that is generated on the fly when no bundle of that name exists.
pub const SBM_DEMO: &str = "sbm-demo";

/// The four-community demo graph: 4 blocks of 50 nodes; the block one-hot sits in
/// 4 of 128 feature dimensions under unit-variance noise scaled by 3.
pub fn sbm_demo_params() -> SbmParams {
    SbmParams { n_per_block: 50, n_blocks: 4, p_in: 0.3, p_out: 0.02, feat_dim: 128, feat_noise: 3.0 }
}

/// Loads `root/name` as a bundle, or generates the demo graph for [`SBM_DEMO`].
/// Featureless data receives one-hot degree features.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_root().join(&cfg.dataset.name);
    let data = if dir.join("meta.json").is_file() {
        load_bundle(&dir)?
    } else if cfg.dataset.name == SBM_DEMO {
        let graph = gen_sbm(&sbm_demo_params(), seed::derive(cfg.seed, 3))?.with_name(SBM_DEMO);
        Dataset::Nodes { graph, split: None }
    } else {
        return Err(BundleError::Missing { file: dir.join("meta.json") }.into());
    };
    data.ensure_features(cfg.dataset.degree_cap)
}

pub fn level_of(data: &Dataset) -> Level {
    TrainData::from(data).level()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeClf,
    GraphClf,
    Cluster,
    Search,
}

impl Task {
    pub fn default_for(data: &Dataset) -> Task {
        match data {
            Dataset::Nodes { .. } => Task::NodeClf,
            Dataset::Graphs(_) => Task::GraphClf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::NodeClf => "node-clf",
            Task::GraphClf => "graph-clf",
            Task::Cluster => "cluster",
            Task::Search => "search",
        }
    }
}

fn labels_of(data: &Dataset) -> Result<(Vec<usize>, usize)> {
    match data {
        Dataset::Nodes { graph, .. } => {
            let labels = graph.labels().ok_or_else(|| Error::Graph(format!("dataset '{}' has no node labels", graph.name())))?;
            Ok((labels.to_vec(), graph.n_classes()))
        }
        Dataset::Graphs(gs) => Ok((gs.labels().to_vec(), gs.n_classes())),
    }
}

/// Labels aligned with the rows of `emb`, looked up through its ids.
fn aligned_labels(emb: &EmbeddingTable, labels: &[usize]) -> Result<Vec<usize>> {
    if emb.n() != labels.len() {
        return Err(Error::shape(format!("{} embeddings for {} labelled items", emb.n(), labels.len())));
    }
    emb.ids()
        .iter()
        .map(|&i| labels.get(i).copied().ok_or_else(|| Error::shape(format!("embedding id {i} outside 0..{}", labels.len()))))
        .collect()
}

/// Splits of the classification protocol: the bundled split for every repeat
/// when present, otherwise one random split per repeat.
fn node_splits(cfg: &RunConfig, n: usize, bundled: Option<&Split>) -> Result<Vec<Split>> {
    let e = &cfg.evaluator;
    (0..e.repeats)
        .map(|r| match bundled {
            Some(s) => Ok(s.clone()),
            None => split_nodes(n, (e.split[0], e.split[1], e.split[2]), seed::derive(seed::derive(cfg.seed, 4), r as u64)),
        })
        .collect()
}

fn probe_repeats(cfg: &RunConfig, emb: &EmbeddingTable, labels: &[usize], splits: &[Split]) -> Result<EvalResult> {
    let probe = cfg.evaluator.probe();
    let base = seed::derive(cfg.seed, 5);
    let results: Vec<EvalResult> = splits
        .par_iter()
        .enumerate()
        .map(|(r, s)| logistic_probe(emb, labels, s, &probe, seed::derive(base, r as u64)))
        .collect::<Result<_>>()?;
    EvalResult::aggregate(&results)
}

/// Scores `emb` on `task`. The task must match the data's level for the two
/// classification tasks.
pub fn evaluate(cfg: &RunConfig, data: &Dataset, emb: &EmbeddingTable, task: Task) -> Result<EvalResult> {
    let (labels, n_classes) = labels_of(data)?;
    let labels = aligned_labels(emb, &labels)?;
    let e = &cfg.evaluator;
    let eval_seed = seed::derive(cfg.seed, 6);
    match (task, data) {
        (Task::NodeClf, Dataset::Nodes { split, .. }) => match e.classifier {
            Classifier::Logistic => probe_repeats(cfg, emb, &labels, &node_splits(cfg, emb.n(), split.as_ref())?),
            Classifier::Svm => linear_svm_cv(emb, &labels, e.k, &e.svm(), eval_seed),
        },
        (Task::GraphClf, Dataset::Graphs(_)) => match e.classifier {
            Classifier::Svm => linear_svm_cv(emb, &labels, e.k, &e.svm(), eval_seed),
            Classifier::Logistic => {
                if e.k > emb.n() {
                    return Err(Error::contract(format!("{} folds for {} samples", e.k, emb.n())));
                }
                probe_repeats(cfg, emb, &labels, &kfold_split(emb.n(), e.k, eval_seed)?)
            }
        },
        (Task::NodeClf | Task::GraphClf, _) => Err(Error::config(
            "/evaluator",
            format!("task {} does not match {}-level data", task.as_str(), if level_of(data) == Level::Node { "node" } else { "graph" }),
        )),
        (Task::Cluster, _) => kmeans_nmi(emb, &labels, n_classes, e.n_init, 300, eval_seed),
        (Task::Search, _) => similarity_search(emb, &labels, e.search_k),
    }
}

/// Everything one `reproduce` run writes into `result.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub dataset: String,
    pub method: String,
    pub task: Task,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_loss: f64,
    #[serde(flatten)]
    pub eval: EvalResult,
    pub wall_time: f64,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }
}

/// Paths of the artifacts a run writes into its output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub result: PathBuf,
    pub log: PathBuf,
    pub config: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Artifacts {
            checkpoint: dir.join("model.ckpt"),
            embeddings: dir.join("embeddings.bin"),
            result: dir.join("result.json"),
            log: dir.join("train.log"),
            config: dir.join("config.json"),
        }
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretrains on `data` and writes the checkpoint, training log and resolved config.
pub fn run_pretrain(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<(MethodState, TrainReport)> {
    let art = Artifacts::in_dir(out);
    let tc = cfg.train_config(level_of(data), None);
    let (state, report) = pretrain(data.into(), cfg.method.clone(), cfg.model, &tc)?;
    save_model(&state, &art.checkpoint)?;
    write_text(&art.log, &report.log_lines())?;
    write_text(&art.config, &cfg.to_json())?;
    Ok((state, report))
}

pub fn save_model(state: &MethodState, path: &Path) -> Result<()> {
    let records = state.checkpoint_records();
    save_checkpoint(path, records.iter().map(|(n, m)| (n.as_str(), *m)))
}

/// Rebuilds the configured model for `data` from a checkpoint.
pub fn load_model(cfg: &RunConfig, data: &Dataset, checkpoint: &Path) -> Result<MethodState> {
    let mut state = MethodState::new(cfg.method.clone(), cfg.model, level_of(data), data.n_features(), 0)?;
    state.load_records(load_checkpoint(checkpoint)?)?;
    Ok(state)
}

pub fn embed(state: &MethodState, data: &Dataset) -> Result<EmbeddingTable> {
    extract_embeddings(state, data.into())
}

/// Pretrain, embed and evaluate in one go, writing every artifact to `out`.
pub fn reproduce(cfg: &RunConfig, out: &Path, task: Option<Task>) -> Result<RunResult> {
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    let task = task.unwrap_or_else(|| Task::default_for(&data));
    let (state, report) = run_pretrain(cfg, &data, out)?;
    let art = Artifacts::in_dir(out);
    let emb = embed(&state, &data)?;
    export_embeddings(&emb, &art.embeddings, EmbeddingFormat::Binary)?;
    let eval = evaluate(cfg, &data, &emb, task)?;
    let result = RunResult {
        dataset: cfg.dataset.name.clone(),
        method: cfg.method.name.as_str().to_string(),
        task,
        seed: cfg.seed,
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        final_loss: report.loss_history[report.best_epoch - 1],
        eval,
        wall_time: start.elapsed().as_secs_f64(),
    };
    write_text(&art.result, &result.to_json())?;
    Ok(result)
}
