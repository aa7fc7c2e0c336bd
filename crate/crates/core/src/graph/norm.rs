use super::Graph;
use crate::autodiff::CsrMatrix;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
pub fn sym_norm_adj(g: &Graph) -> CsrMatrix {
    let n = g.n();
    let inv_sqrt: Vec<f64> = (0..n).map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt()).collect();
    let trip = (0..n).flat_map(|r| {
        let inv_sqrt = &inv_sqrt;
        g.neighbors(r).iter().copied().chain(std::iter::once(r)).map(move |c| (r, c, (inv_sqrt[r] * inv_sqrt[c])))
    });
    CsrMatrix::from_triplets(n, n, trip).expect("indices from a valid graph")
}
