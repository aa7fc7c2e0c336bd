use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{check_labels, EmbeddingTable, EvalResult};
use crate::error::{Error, Result};

/// Mean precision@k of cosine nearest neighbours (self excluded, ties to the lower index).
pub fn similarity_search(emb: &EmbeddingTable, labels: &[usize], k: usize) -> Result<EvalResult> {
    check_labels(emb, labels)?;
    let n = emb.n();
    if k == 0 || k >= n {
        return Err(Error::contract(format!("precision@{k} needs 1 <= k < n = {n}")));
    }
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = emb.data().row(i);
            let norm = r.iter().map(|&v| v.powi(2)).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|&v| v / norm).collect()
        })
        .collect();
    let hits: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum(), j)).collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            sims[..k].iter().filter(|&&(_, j)| labels[j] == labels[i]).count() as f64 / k as f64
        })
        .collect();
    let p = hits.iter().sum::<f64>() / n as f64;
    Ok(EvalResult::single("precision_at_k", BTreeMap::from([("precision_at_k".to_string(), p)])))
}
