//! Downstream evaluation of frozen embeddings.

mod cluster;
mod probe;
mod project;
mod search;
mod svm;

pub use cluster::{kmeans, kmeans_nmi, nmi, KMeansFit};
pub use probe::{logistic_probe, ProbeConfig};
pub use project::project_2d;
pub use search::similarity_search;
pub use svm::{linear_svm_cv, SvmConfig};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Frozen embeddings, one row per node or graph, with the original ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    data: Matrix,
    ids: Vec<usize>,
}

impl EmbeddingTable {
    pub fn new(data: Matrix, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != data.rows() {
            return Err(Error::shape(format!("{} ids for {} embedding rows", ids.len(), data.rows())));
        }
        // stored at the 32-bit precision of the exchange formats
        let data = data.map(|v| v as f32 as f64);
        if !data.is_finite() {
            return Err(Error::Contract("embedding table contains NaN or infinity".into()));
        }
        Ok(EmbeddingTable { data, ids })
    }

    /// Rows numbered `0..n`.
    pub fn from_matrix(data: Matrix) -> Result<Self> {
        let ids = (0..data.rows()).collect();
        Self::new(data, ids)
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn d(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

/// Scores of one evaluation. `mean`/`std`/`per_fold` describe `metric`;
/// `metrics` holds the mean of every metric that was computed. `std` is the
/// population standard deviation over folds or repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_fold: Vec<f64>,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl EvalResult {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }

    /// One value per fold/repeat for each named metric; `primary` must be among them.
    pub fn from_folds(primary: &str, folds: &[BTreeMap<String, f64>]) -> Self {
        let names: BTreeSet<&String> = folds.iter().flat_map(|f| f.keys()).collect();
        let metrics = names
            .into_iter()
            .map(|k| {
                let vals: Vec<f64> = folds.iter().filter_map(|f| f.get(k).copied()).collect();
                (k.clone(), mean_std(&vals).0)
            })
            .collect();
        let per_fold: Vec<f64> = folds.iter().map(|f| f[primary]).collect();
        let (mean, std) = mean_std(&per_fold);
        EvalResult { metric: primary.to_string(), mean, std, per_fold, metrics }
    }

    pub fn single(primary: &str, values: BTreeMap<String, f64>) -> Self {
        Self::from_folds(primary, &[values])
    }

    /// Pools repeated evaluations: each input contributes its mean as one fold.
    pub fn aggregate(results: &[EvalResult]) -> Result<Self> {
        let first = results.first().ok_or_else(|| Error::contract("nothing to aggregate"))?;
        let folds: Vec<BTreeMap<String, f64>> = results.iter().map(|r| r.metrics.clone()).collect();
        Ok(Self::from_folds(&first.metric, &folds))
    }
}

/// Accuracy and macro-F1. Macro-F1 averages over the classes present in `gold`.
pub fn classification_metrics(pred: &[usize], gold: &[usize]) -> Result<(f64, f64)> {
    if pred.len() != gold.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", pred.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::contract("no predictions to score"));
    }
    let acc = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64;
    let classes: BTreeSet<usize> = gold.iter().copied().collect();
    let mut f1_sum = 0.0;
    for &c in &classes {
        let tp = pred.iter().zip(gold).filter(|&(&p, &g)| p == c && g == c).count() as f64;
        let fp = pred.iter().zip(gold).filter(|&(&p, &g)| p == c && g != c).count() as f64;
        let fn_ = pred.iter().zip(gold).filter(|&(&p, &g)| p != c && g == c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    Ok((acc, f1_sum / classes.len() as f64))
}

/// Per-column mean and standard deviation over `rows` (zero deviation maps to 1).
pub(crate) fn fit_standardizer(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = vec![0.0; d];
    for &r in rows {
        for ((s, &v), m) in sd.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    });
    (mean, sd)
}

pub(crate) fn standardize(x: &Matrix, rows: &[usize], (mean, sd): &(Vec<f64>, Vec<f64>)) -> Matrix {
    let d = x.cols();
    let mut out = Matrix::zeros(rows.len(), d);
    for (i, &r) in rows.iter().enumerate() {
        for (j, (o, &v)) in out.row_mut(i).iter_mut().zip(x.row(r)).enumerate() {
            *o = (v - mean[j]) / sd[j];
        }
    }
    out
}

pub(crate) fn n_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

pub(crate) fn check_labels(emb: &EmbeddingTable, labels: &[usize]) -> Result<()> {
    if labels.len() != emb.n() {
        return Err(Error::shape(format!("{} labels for {} embeddings", labels.len(), emb.n())));
    }
    Ok(())
}
