use rayon::prelude::*;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates raw CSR arrays.
    pub fn new(n_rows: usize, n_cols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(Error::shape("row_ptr must have n_rows+1 entries starting at 0"));
        }
        if row_ptr[n_rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::shape("row_ptr end, col_idx and values lengths disagree"));
        }
        for r in 0..n_rows {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            if s > e {
                return Err(Error::shape(format!("row_ptr decreases at row {r}")));
            }
            let cols = &col_idx[s..e];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::shape(format!("row {r}: column indices not strictly increasing")));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::shape(format!("row {r}: column index out of range")));
            }
        }
        Ok(CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values })
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = t.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::shape(format!("entry ({r},{c}) outside {n_rows}x{n_cols}")));
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { n_rows: n, n_cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let trip = (0..m.rows()).flat_map(|r| (0..m.cols()).map(move |c| (r, c))).filter_map(|(r, c)| {
            let v = m.get(r, c);
            (v != 0.0).then_some((r, c, v))
        });
        CsrMatrix::from_triplets(m.rows(), m.cols(), trip).expect("in-range by construction")
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values stored in row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            m.set(r, c, v);
        }
        m
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, self.triplets().map(|(r, c, v)| (c, r, v))).expect("in-range by construction")
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.triplets().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if self.n_cols != x.rows() {
            return Err(Error::shape(format!("spmm {}x{} sparse by {}x{} dense", self.n_rows, self.n_cols, x.rows(), x.cols())));
        }
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_rows, d);
        if d == 0 {
            return Ok(out);
        }
        let kernel = |(r, orow): (usize, &mut [f64])| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &xv) in orow.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        };
        if self.n_rows >= 256 {
            out.data_mut().par_chunks_mut(d).enumerate().for_each(kernel);
        } else {
            out.data_mut().chunks_mut(d).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · g`, without materializing the transpose.
    pub fn spmm_t(&self, g: &Matrix) -> Result<Matrix> {
        if self.n_rows != g.rows() {
            return Err(Error::shape("spmm_t: row count mismatch"));
        }
        let mut out = Matrix::zeros(self.n_cols, g.cols());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let grow = g.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &gv) in out.row_mut(c).iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
        Ok(out)
    }
}
