use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{check_labels, EmbeddingTable, EvalResult};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning initialization.
    pub history: Vec<f64>,
}

fn dist2(a: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(&x, &y)| (x - y).powi(2)).sum()
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let row = |i: usize| x.row(i).to_vec();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        centers.push(row(next));
        let c = centers.last().unwrap();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(x.row(i), c));
        }
    }
    centers
}

fn lloyd(x: &Matrix, mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let (n, d) = x.shape();
    let k = centers.len();
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (best, bd) =
                (0..k).map(|c| (c, dist2(x.row(i), &centers[c]))).fold((0, f64::INFINITY), |b, (c, v)| if v < b.1 { (c, v) } else { b });
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
            dists[i] = bd;
        }
        // re-seed empty clusters with the point farthest from its center
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&a| counts[a] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).filter(|&i| counts[assignment[i]] > 1).max_by(|&a, &b| dists[a].total_cmp(&dists[b]));
                if let Some(i) = far {
                    counts[assignment[i]] -= 1;
                    assignment[i] = c;
                    counts[c] = 1;
                    dists[i] = 0.0;
                    changed = true;
                }
            }
        }
        let mut sums = vec![vec![0.0f64; d]; k];
        for i in 0..n {
            for (s, &v) in sums[assignment[i]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        history.push((0..n).map(|i| dist2(x.row(i), &centers[assignment[i]])).sum());
        if !changed {
            break;
        }
    }
    let inertia = *history.last().unwrap();
    KMeansFit { assignment, centers, inertia, history }
}

/// Lloyd's algorithm with k-means++ seeding; best of `n_init` runs by inertia.
pub fn kmeans(x: &Matrix, k: usize, n_init: usize, max_iter: usize, seed: u64) -> Result<KMeansFit> {
    if k < 1 || k > x.rows() {
        return Err(Error::contract(format!("k={k} clusters for {} points", x.rows())));
    }
    let mut best: Option<KMeansFit> = None;
    for run in 0..n_init.max(1) {
        let mut rng = seed::rng(seed::derive(seed, run as u64));
        let fit = lloyd(x, plus_plus(x, k, &mut rng), max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Normalized mutual information with the geometric-mean normalization; 0 when
/// either partition has zero entropy.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("nmi needs two equal-length non-empty labelings"));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let (ha, hb) = (entropy(ca.values().copied(), n), entropy(cb.values().copied(), n));
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy / (ca[&x] as f64 / n * cb[&y] as f64 / n)).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

pub fn kmeans_nmi(emb: &EmbeddingTable, labels: &[usize], k: usize, n_init: usize, max_iter: usize, seed: u64) -> Result<EvalResult> {
    check_labels(emb, labels)?;
    if k < 2 {
        return Err(Error::contract("clustering needs k >= 2"));
    }
    let fit = kmeans(emb.data(), k, n_init, max_iter, seed)?;
    let score = nmi(&fit.assignment, labels)?;
    Ok(EvalResult::single("nmi", BTreeMap::from([("nmi".to_string(), score)])))
}
