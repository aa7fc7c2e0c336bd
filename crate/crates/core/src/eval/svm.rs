use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::probe::Adam;
use super::{check_labels, classification_metrics, fit_standardizer, n_classes, standardize, EmbeddingTable, EvalResult};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::kfold_split;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    /// Inverse regularization strength, as in `½‖w‖² + c Σ hinge²`.
    pub c: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, epochs: 300, lr: 0.01 }
    }
}

/// One-vs-rest linear SVM with squared hinge loss. Returns `(d + 1) × C` weights, bias last.
fn train_ovr(x: &Matrix, y: &[usize], classes: usize, cfg: &SvmConfig) -> Vec<Vec<f64>> {
    let (n, d) = x.shape();
    let reg = 1.0 / (cfg.c * n as f64);
    (0..classes)
        .map(|class| {
            let target: Vec<f64> = y.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let mut w = vec![0.0f64; d + 1];
            let mut opt = Adam::new(d + 1, cfg.lr);
            let mut g = vec![0.0; d + 1];
            for _ in 0..cfg.epochs {
                g.iter_mut().for_each(|v| *v = 0.0);
                for (i, &t) in target.iter().enumerate() {
                    let row = x.row(i);
                    let score = w[d] + row.iter().zip(&w).map(|(&a, b)| a * b).sum::<f64>();
                    let margin = 1.0 - t * score;
                    if margin > 0.0 {
                        let k = -2.0 * margin * t / n as f64;
                        for (gj, &a) in g.iter_mut().zip(row) {
                            *gj += k * a;
                        }
                        g[d] += k;
                    }
                }
                for j in 0..d {
                    g[j] += reg * w[j];
                }
                opt.step(&mut w, &g);
            }
            w
        })
        .collect()
}

fn predict(models: &[Vec<f64>], x: &Matrix) -> Vec<usize> {
    let d = x.cols();
    (0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = (0, f64::NEG_INFINITY);
            for (c, w) in models.iter().enumerate() {
                let s = w[d] + row.iter().zip(w).map(|(&a, b)| a * b).sum::<f64>();
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect()
}

/// `k`-fold cross-validated accuracy (and macro-F1) of a linear SVM.
pub fn linear_svm_cv(emb: &EmbeddingTable, labels: &[usize], k: usize, cfg: &SvmConfig, seed: u64) -> Result<EvalResult> {
    check_labels(emb, labels)?;
    if k > emb.n() {
        return Err(Error::contract(format!("{k} folds for {} samples", emb.n())));
    }
    let classes = n_classes(labels);
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.iter().any(|&c| c > 0 && c < k) {
        log::warn!("some class has fewer than {k} members; folds will miss it");
    }
    let folds = kfold_split(emb.n(), k, seed)?;
    let mut scores = Vec::with_capacity(k);
    for split in &folds {
        let stats = fit_standardizer(emb.data(), &split.train);
        let xtr = standardize(emb.data(), &split.train, &stats);
        let xte = standardize(emb.data(), &split.test, &stats);
        let ytr: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
        let models = train_ovr(&xtr, &ytr, classes, cfg);
        let (acc, f1) = classification_metrics(&predict(&models, &xte), &yte)?;
        scores.push(BTreeMap::from([("accuracy".to_string(), acc), ("macro_f1".to_string(), f1)]));
    }
    Ok(EvalResult::from_folds("accuracy", &scores))
}
