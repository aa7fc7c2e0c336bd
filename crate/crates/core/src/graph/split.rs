use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Disjoint train/validation/test index sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Checks disjointness and range against a population of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Graph(format!("split index {i} outside 0..{n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Graph(format!("split index {i} appears twice")));
            }
        }
        Ok(())
    }
}

/// Uniform random partition into train/val/test with sizes `round(fraction·n)`
/// for train and val and the remainder for test.
pub fn split_nodes(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-6 {
        return Err(Error::config("/evaluator/split", format!("ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n_train = (a * n as f64).round() as usize;
    let n_val = (b * n as f64).round() as usize;
    if n_train + n_val >= n || n_train == 0 || n_val == 0 {
        return Err(Error::config("/evaluator/split", format!("ratios {ratios:?} leave an empty partition for n={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(Split { train: perm, val, test })
}

/// `k` folds over a shuffled `0..n`; fold sizes differ by at most one and every
/// index is tested exactly once. Validation sets are empty.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 || k > n {
        return Err(Error::config("/evaluator/k", format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut bounds = vec![0];
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..k)
        .map(|f| {
            let test = perm[bounds[f]..bounds[f + 1]].to_vec();
            let train = perm[..bounds[f]].iter().chain(&perm[bounds[f + 1]..]).copied().collect();
            Split { train, val: Vec::new(), test }
        })
        .collect())
}
