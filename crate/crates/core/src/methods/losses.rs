//! Loss building blocks shared by the objectives.

use std::rc::Rc;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Binary cross-entropy on logits, `mean softplus(−x)` for positives and
/// `mean softplus(x)` for negatives.
pub fn bce_logits(tape: &mut Tape, logits: Var, positive: bool) -> Result<Var> {
    let z = if positive { tape.scale(logits, -1.0) } else { logits };
    let sp = tape.softplus(z);
    tape.mean(sp)
}

fn check_nonzero_rows(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let m = tape.value(v);
    if let Some(r) = (0..m.rows()).find(|&r| m.row(r).iter().all(|&x| x == 0.0)) {
        return Err(Error::Method(format!("{what}: row {r} has zero norm")));
    }
    Ok(())
}

/// Row-wise cosine similarity `n × 1`.
pub fn cosine_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let na = tape.row_normalize(a);
    let nb = tape.row_normalize(b);
    let prod = tape.mul(na, nb)?;
    Ok(tape.row_sum(prod))
}

/// Normalized-temperature cross entropy over two aligned views. Every one of
/// the `2n` rows is an anchor whose positive is its counterpart in the other
/// view; the other `2n − 2` rows are negatives.
pub fn nt_xent(tape: &mut Tape, z1: Var, z2: Var, tau: f64) -> Result<Var> {
    let (n, d) = tape.shape(z1);
    if tape.shape(z2) != (n, d) {
        return Err(Error::shape(format!("nt_xent views are {:?} and {:?}", (n, d), tape.shape(z2))));
    }
    if n == 0 {
        return Err(Error::contract("nt_xent needs at least one sample"));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::config("/method/tau", format!("temperature {tau} must be positive")));
    }
    check_nonzero_rows(tape, z1, "nt_xent view 1")?;
    check_nonzero_rows(tape, z2, "nt_xent view 2")?;
    let a = tape.row_normalize(z1);
    let b = tape.row_normalize(z2);
    let z = tape.concat_rows(&[a, b])?;
    let sim = tape.matmul_t(z, z)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let m = 2 * n;
    let diag: Vec<bool> = (0..m * m).map(|k| k / m == k % m).collect();
    let lse = tape.logsumexp_rows(sim, Some(Rc::new(diag)))?;
    let mut pos = Matrix::zeros(m, m);
    for i in 0..n {
        pos.set(i, i + n, 1.0);
        pos.set(i + n, i, 1.0);
    }
    let pos = tape.constant(pos);
    let pos_sim = tape.mul(sim, pos)?;
    let pos_sum = tape.sum(pos_sim);
    let lse_sum = tape.sum(lse);
    let total = tape.sub(lse_sum, pos_sum)?;
    Ok(tape.scale(total, 1.0 / m as f64))
}

/// Scaled cosine error `mean (1 − cos(x̂_i, x_i))^γ` over rows.
pub fn sce(tape: &mut Tape, x_hat: Var, x: Var, gamma: f64) -> Result<Var> {
    let cos = cosine_rows(tape, x_hat, x)?;
    let neg = tape.scale(cos, -1.0);
    let err = tape.add_scalar(neg, 1.0);
    let err = tape.pow(err, gamma)?;
    tape.mean(err)
}
