//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;

use super::optim::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::seed;

/// Something that owns parameters and can rebuild a scalar loss from them.
pub trait LossBuilder {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn loss(&self, tape: &mut Tape) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Denominator floor for the relative error `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Entries sampled per parameter matrix (all entries when the matrix is smaller).
    pub entries_per_param: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-6, floor: 1e-4, entries_per_param: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradLocation {
    pub trial: usize,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Ops recorded while building this trial's loss.
    pub ops: Vec<&'static str>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Union of ops exercised across all trials.
    pub ops: std::collections::BTreeSet<&'static str>,
    pub worst: Option<GradLocation>,
    pub checked: usize,
    /// Coordinates whose ±h probes crossed a ReLU, max or norm-floor kink.
    pub skipped_kinks: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

fn eval<B: LossBuilder>(b: &B) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let l = b.loss(&mut tape)?;
    Ok((tape.scalar(l), tape.kink_signature()))
}

/// Compares analytic gradients against central differences over `n_trials`
/// independently built problems (`make(trial_seed)`), reporting the worst entry.
pub fn grad_check<B: LossBuilder>(
    mut make: impl FnMut(u64) -> B,
    n_trials: usize,
    seed: u64,
    opts: GradCheckOptions,
) -> Result<GradReport> {
    let mut report = GradReport::default();
    for trial in 0..n_trials {
        let trial_seed = seed::derive(seed, trial as u64);
        let mut b = make(trial_seed);
        let ops;
        b.params_mut().zero_grads();
        let base_sig = {
            let mut tape = Tape::new();
            let l = b.loss(&mut tape)?;
            let sig = tape.kink_signature();
            ops = tape.ops_used();
            report.ops.extend(ops.iter().copied());
            let mut store = std::mem::take(b.params_mut());
            tape.backward(l, &mut store)?;
            *b.params_mut() = store;
            sig
        };
        let mut pick = seed::rng(seed::derive(trial_seed, 0xfd));
        let ids: Vec<_> = b.params().ids().collect();
        for id in ids {
            let len = b.params().value(id).len();
            let picked: Vec<usize> = if len <= opts.entries_per_param {
                (0..len).collect()
            } else {
                let mut v = sample(&mut pick, len, opts.entries_per_param).into_vec();
                v.sort_unstable();
                v
            };
            for idx in picked {
                let orig = b.params().value(id).data()[idx];
                let analytic = b.params().grad(id).data()[idx];
                b.params_mut().value_mut(id).data_mut()[idx] = orig + opts.h;
                let (lp, sp) = eval(&b)?;
                b.params_mut().value_mut(id).data_mut()[idx] = orig - opts.h;
                let (lm, sm) = eval(&b)?;
                b.params_mut().value_mut(id).data_mut()[idx] = orig;
                if sp != base_sig || sm != base_sig {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * opts.h);
                let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
                let rel = (analytic - numeric).abs() / denom;
                report.checked += 1;
                if report.worst.is_none() || rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = Some(GradLocation {
                        trial,
                        param: b.params().get(id).name.clone(),
                        index: idx,
                        analytic,
                        numeric,
                        ops: ops.iter().copied().collect(),
                    });
                }
            }
        }
    }
    Ok(report)
}
