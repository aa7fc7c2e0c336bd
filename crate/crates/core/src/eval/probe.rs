use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_labels, classification_metrics, fit_standardizer, n_classes, standardize, EmbeddingTable, EvalResult};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::Split;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { l2: 1e-4, epochs: 300, lr: 0.01 }
    }
}

/// Plain Adam over a flat buffer.
pub(super) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    pub(super) fn new(len: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr }
    }

    pub(super) fn step(&mut self, w: &mut [f64], g: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..w.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            w[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Multinomial logistic regression. `w` is `(d + 1) × C` with the bias in the last row.
pub(super) struct Softmax {
    pub d: usize,
    pub c: usize,
    pub w: Vec<f64>,
}

impl Softmax {
    pub(super) fn scores(&self, x: &Matrix) -> Vec<f64> {
        let (d, c) = (self.d, self.c);
        let mut out = vec![0.0; x.rows() * c];
        for i in 0..x.rows() {
            let o = &mut out[i * c..(i + 1) * c];
            o.copy_from_slice(&self.w[d * c..]);
            for (j, &xv) in x.row(i).iter().enumerate() {
                for (k, ok) in o.iter_mut().enumerate() {
                    *ok += xv * self.w[j * c + k];
                }
            }
        }
        out
    }

    pub(super) fn predict(&self, x: &Matrix) -> Vec<usize> {
        let s = self.scores(x);
        s.chunks(self.c)
            .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b }).0)
            .collect()
    }
}

fn train_softmax(x: &Matrix, y: &[usize], c: usize, cfg: &ProbeConfig, seed: u64) -> Softmax {
    let (n, d) = x.shape();
    let init = Normal::new(0.0, 0.01).unwrap();
    let mut rng = seed::rng(seed);
    let mut model = Softmax { d, c, w: (0..(d + 1) * c).map(|_| init.sample(&mut rng)).collect() };
    let mut opt = Adam::new(model.w.len(), cfg.lr);
    let mut grad = vec![0.0; model.w.len()];
    for _ in 0..cfg.epochs {
        let mut p = model.scores(x);
        for (i, row) in p.chunks_mut(c).enumerate() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            row.iter_mut().for_each(|v| *v = (*v - mx).exp() / z);
            row[y[i]] -= 1.0;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let pi = &p[i * c..(i + 1) * c];
            for (j, &xv) in x.row(i).iter().enumerate() {
                for k in 0..c {
                    grad[j * c + k] += xv * pi[k];
                }
            }
            for k in 0..c {
                grad[d * c + k] += pi[k];
            }
        }
        for (i, g) in grad.iter_mut().enumerate() {
            *g /= n as f64;
            if i < d * c {
                *g += cfg.l2 * model.w[i];
            }
        }
        opt.step(&mut model.w, &grad);
    }
    model
}

/// Trains on `split.train` and scores `split.test`. Features are standardized
/// with statistics of the training rows.
pub fn logistic_probe(emb: &EmbeddingTable, labels: &[usize], split: &Split, cfg: &ProbeConfig, seed: u64) -> Result<EvalResult> {
    check_labels(emb, labels)?;
    split.validate(emb.n())?;
    if split.test.is_empty() {
        return Err(Error::contract("probe split has no test nodes"));
    }
    let ytr: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    if ytr.iter().all(|&l| l == ytr[0]) {
        return Err(Error::contract("training split contains a single class"));
    }
    let stats = fit_standardizer(emb.data(), &split.train);
    let xtr = standardize(emb.data(), &split.train, &stats);
    let xte = standardize(emb.data(), &split.test, &stats);
    let model = train_softmax(&xtr, &ytr, n_classes(labels), cfg, seed);

    let yte: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let (acc, f1) = classification_metrics(&model.predict(&xte), &yte)?;
    let (train_acc, _) = classification_metrics(&model.predict(&xtr), &ytr)?;
    Ok(EvalResult::single(
        "accuracy",
        BTreeMap::from([("accuracy".to_string(), acc), ("macro_f1".to_string(), f1), ("train_accuracy".to_string(), train_acc)]),
    ))
}
