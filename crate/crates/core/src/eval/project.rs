use super::EmbeddingTable;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

const TOL: f64 = 1e-7;
const MAX_ITERS: usize = 1000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Removes the components along `prev` (orthonormal vectors).
fn orthogonalize(v: &mut [f64], prev: &[Vec<f64>]) {
    for p in prev {
        let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
    }
}

fn top_eigenvector(cov: &[Vec<f64>], prev: &[Vec<f64>]) -> Vec<f64> {
    let d = cov.len();
    // a start vector that is unlikely to be orthogonal to the leading direction
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    orthogonalize(&mut v, prev);
    if norm(&v) < 1e-12 {
        v = (0..d).map(|i| if i == d - 1 { 1.0 } else { 0.0 }).collect();
        orthogonalize(&mut v, prev);
    }
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..MAX_ITERS {
        let mut w: Vec<f64> = cov.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        orthogonalize(&mut w, prev);
        let nw = norm(&w);
        if nw < 1e-300 {
            return v;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < TOL {
            break;
        }
    }
    v
}

/// Two leading principal components of the mean-centred embeddings, found by
/// power iteration with deflation. Each component's largest-magnitude loading is positive.
pub fn project_2d(emb: &EmbeddingTable) -> Result<Matrix> {
    let (n, d) = emb.data().shape();
    if d < 2 {
        return Err(Error::contract("projection needs at least two embedding dimensions"));
    }
    let x = emb.data();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n.max(1) as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        let c: Vec<f64> = x.row(i).iter().zip(&mean).map(|(&v, m)| v - m).collect();
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += c[a] * c[b];
            }
        }
    }
    let mut comps = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut v = top_eigenvector(&cov, &comps);
        let lead = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i).unwrap();
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let cv: Vec<f64> = cov.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let lambda: f64 = cv.iter().zip(&v).map(|(a, b)| a * b).sum();
        for a in 0..d {
            for b in 0..d {
                cov[a][b] -= lambda * v[a] * v[b];
            }
        }
        comps.push(v);
    }
    let mut out = Matrix::zeros(n, 2);
    for i in 0..n {
        for (k, comp) in comps.iter().enumerate() {
            let s: f64 = x.row(i).iter().zip(&mean).zip(comp).map(|((&v, m), c)| (v - m) * c).sum();
            out.set(i, k, s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn variance(col: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = col.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn collinear_points() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = project_2d(&EmbeddingTable::from_matrix(Matrix::from_rows(&rows)).unwrap()).unwrap();
        let v1 = variance((0..20).map(|i| p.get(i, 0)));
        let v2 = variance((0..20).map(|i| p.get(i, 1)));
        assert!(v2 < 1e-6 * v1, "{v1} {v2}");
    }

    #[test]
    fn anisotropic_gaussian_aligns_with_wide_axis() {
        let mut rng = crate::seed::rng(11);
        let (wide, narrow) = (Normal::new(0.0, 5.0).unwrap(), Normal::new(0.0, 1.0).unwrap());
        let n = 2000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![narrow.sample(&mut rng), wide.sample(&mut rng), narrow.sample(&mut rng)]).collect();
        let x = Matrix::from_rows(&rows);
        let p = project_2d(&EmbeddingTable::from_matrix(x.clone()).unwrap()).unwrap();
        // correlation between the first coordinate and the wide axis
        let a: Vec<f64> = (0..n).map(|i| p.get(i, 0) as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| x.get(i, 1)).collect();
        let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let cos = cov / (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() * b.iter().map(|y| (y - mb).powi(2)).sum::<f64>()).sqrt();
        assert!(cos.abs() > 0.99, "{cos}");
        assert_eq!(p, project_2d(&EmbeddingTable::from_matrix(x).unwrap()).unwrap());
    }

    #[test]
    fn needs_two_dimensions() {
        assert!(project_2d(&EmbeddingTable::from_matrix(Matrix::zeros(3, 1)).unwrap()).is_err());
    }
}
