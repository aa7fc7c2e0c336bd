//! Define-by-run reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node holding its value and the
//! context its backward rule needs. Node ids are assigned in creation order, so
//! the node list is already topologically sorted and `backward` walks it in reverse.

use std::collections::HashMap;
use std::rc::Rc;

use super::matrix::Matrix;
use super::optim::{ParamId, ParamStore};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Spmm(Rc<CsrMatrix>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Pow(Var, f64),
    RowNormalize(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    ColSum(Var),
    ColMean(Var),
    ColMax(Var, Vec<usize>),
    RowSum(Var),
    RowMean(Var),
    Gather(Var, Rc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LogSumExpRows(Var, Option<Rc<Vec<bool>>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Transpose(_) => "transpose",
            Op::Spmm(..) => "spmm",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::ScaleBy(..) => "scale_by",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Prelu(..) => "prelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Pow(..) => "pow",
            Op::RowNormalize(..) => "row_normalize",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::ColSum(_) => "col_sum",
            Op::ColMean(_) => "col_mean",
            Op::ColMax(..) => "col_max",
            Op::RowSum(_) => "row_sum",
            Op::RowMean(_) => "row_mean",
            Op::Gather(..) => "gather_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::LogSumExpRows(..) => "logsumexp_rows",
        }
    }
}

/// Every differentiable operation the tape records, by the name [`Tape::op_name`] reports.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "matmul_t",
    "transpose",
    "spmm",
    "add",
    "add_row",
    "sub",
    "mul",
    "mul_col",
    "scale_by",
    "scale",
    "add_scalar",
    "relu",
    "prelu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softplus",
    "pow",
    "row_normalize",
    "sum",
    "mean",
    "col_sum",
    "col_mean",
    "col_max",
    "row_sum",
    "row_mean",
    "gather_rows",
    "concat_cols",
    "concat_rows",
    "logsumexp_rows",
];

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Norm floor used by [`Tape::row_normalize`].
pub const NORM_EPS: f64 = 1e-8;

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    kinks: u64,
    no_grad: bool,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape for inference: parameters bind as constants, so nothing requires a gradient.
    pub fn no_grad() -> Self {
        Tape { no_grad: true, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Distinct op names recorded so far, excluding leaves and parameters.
    pub fn ops_used(&self) -> std::collections::BTreeSet<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).filter(|&n| n != "leaf" && n != "param").collect()
    }

    /// Fingerprint of which side of every non-differentiable point (ReLU/PReLU
    /// zero, max arg, pow clamp, norm floor) the forward pass landed on. Two evaluations with
    /// equal fingerprints traversed the same piecewise-smooth region.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn mix_kinks(&mut self, bits: impl Iterator<Item = u64>) {
        self.kinks = bits.fold(self.kinks, |h, b| (h ^ b).wrapping_mul(0x100_0000_01b3).rotate_left(5));
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A free leaf that does receive a gradient (read it back from [`Gradients`]).
    pub fn input(&mut self, m: Matrix) -> Var {
        let rg = !self.no_grad;
        self.push(m, Op::Leaf, rg)
    }

    /// Binds a stored parameter. Binding the same parameter twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let rg = !self.no_grad;
        let v = self.push(store.value(id).clone(), Op::Param(id), rg);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Sparse-dense product `a · x`; the sparse operand is treated as constant.
    pub fn spmm(&mut self, a: &Rc<CsrMatrix>, x: Var) -> Result<Var> {
        let out = a.spmm(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Spmm(Rc::clone(a), x), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1 × d` row to every row of an `n × d` matrix (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        if self.shape(row) != (1, d) {
            return Err(Error::shape(format!("add_row: {n}x{d} plus {:?}", self.shape(row))));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..n {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Scales row `i` of an `n × d` matrix by entry `i` of an `n × 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, _) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(Error::shape(format!("mul_col: {:?} by {:?}", self.shape(a), self.shape(col))));
        }
        let mut out = self.value(a).clone();
        for i in 0..n {
            let s = self.value(col).get(i, 0);
            out.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    /// Multiplies a matrix by a `1 × 1` node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::shape("scale_by expects a 1x1 scale"));
        }
        let k = self.scalar(s);
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let signs: Vec<u64> = self.value(a).data().iter().map(|&x| (x > 0.0) as u64).collect();
        self.mix_kinks(signs.into_iter());
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Parametric ReLU with a learned `1 × 1` negative slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(Error::shape("prelu slope must be 1x1"));
        }
        let k = self.scalar(slope);
        let out = self.value(a).map(|x| if x > 0.0 { x } else { k * x });
        let signs: Vec<u64> = self.value(a).data().iter().map(|&x| (x > 0.0) as u64).collect();
        self.mix_kinks(signs.into_iter());
        let rg = self.rg(a) || self.rg(slope);
        Ok(self.push(out, Op::Prelu(a, slope), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    /// `max(x, 0)^p` for `p ≥ 1`.
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        if p < 1.0 {
            return Err(Error::contract(format!("pow exponent {p} < 1")));
        }
        let out = self.value(a).map(|x| x.max(0.0).powf(p));
        let signs: Vec<u64> = self.value(a).data().iter().map(|&x| (x > 0.0) as u64).collect();
        self.mix_kinks(signs.into_iter());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pow(a, p), rg))
    }

    /// Divides each row by `max(‖row‖₂, NORM_EPS)`.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = x.row(i).iter().map(|&v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        // the floor is a kink: rows sitting on it are non-differentiable
        let floored: Vec<u64> = norms.iter().map(|&n| (n <= NORM_EPS) as u64).collect();
        self.mix_kinks(floored.into_iter());
        let rg = self.rg(a);
        self.push(out, Op::RowNormalize(a, norms), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let out = Matrix::scalar(self.value(a).sum() / n as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean(a), rg))
    }

    /// Sum over rows: `n × d → 1 × d`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let out = self.value(a).col_sums();
        let rg = self.rg(a);
        self.push(out, Op::ColSum(a), rg)
    }

    /// Mean over rows: `n × d → 1 × d`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).rows();
        if n == 0 {
            return Err(Error::contract("col_mean of a matrix with no rows"));
        }
        let mut out = self.value(a).col_sums();
        out.scale_assign(1.0 / n as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::ColMean(a), rg))
    }

    /// Max over rows: `n × d → 1 × d`. Ties resolve to the lowest row index.
    pub fn col_max(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::contract("col_max of a matrix with no rows"));
        }
        let mut arg = vec![0usize; x.cols()];
        let mut out = Matrix::from_vec(1, x.cols(), x.row(0).to_vec())?;
        for i in 1..x.rows() {
            for (c, &v) in x.row(i).iter().enumerate() {
                if v > out.get(0, c) {
                    out.set(0, c, v);
                    arg[c] = i;
                }
            }
        }
        self.mix_kinks(arg.iter().map(|&i| i as u64));
        let rg = self.rg(a);
        Ok(self.push(out, Op::ColMax(a, arg), rg))
    }

    /// Sum over columns: `n × d → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let out = self.value(a).row_sums();
        let rg = self.rg(a);
        self.push(out, Op::RowSum(a), rg)
    }

    /// Mean over columns: `n × d → n × 1`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let d = self.value(a).cols();
        if d == 0 {
            return Err(Error::contract("row_mean of a matrix with no columns"));
        }
        let mut out = self.value(a).row_sums();
        out.scale_assign(1.0 / d as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowMean(a), rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let n = self.value(a).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("gather_rows index {bad} out of {n} rows")));
        }
        let out = self.value(a).gather_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gather(a, idx), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::concat_cols(&mats)?;
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::concat_rows(&mats)?;
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row-wise `ln Σ_j exp(x_ij)` over entries not flagged in `exclude`
    /// (row-major, same shape as `a`). Each row must keep at least one entry.
    pub fn logsumexp_rows(&mut self, a: Var, exclude: Option<Rc<Vec<bool>>>) -> Result<Var> {
        let x = self.value(a);
        let (n, d) = x.shape();
        if let Some(mask) = &exclude {
            if mask.len() != n * d {
                return Err(Error::shape("logsumexp_rows: mask shape differs from input"));
            }
        }
        let mut out = Matrix::zeros(n, 1);
        for i in 0..n {
            let keep = |j: usize| exclude.as_ref().is_none_or(|m| !m[i * d + j]);
            let row = x.row(i);
            let mx = (0..d).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::contract(format!("logsumexp_rows: row {i} has no entries")));
            }
            let s: f64 = (0..d).filter(|&j| keep(j)).map(|j| (row[j] - mx).exp()).sum();
            out.set(i, 0, mx + s.ln());
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSumExpRows(a, exclude), rg))
    }

    /// Reverse pass from a `1 × 1` node. Parameter gradients are added into
    /// `store`; calling twice without zeroing accumulates twice.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!("backward from non-scalar node of shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(node, &g, &mut grads, store)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>], store: &mut ParamStore) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, m: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(val(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                if self.rg(*a) {
                    acc(*a, g.matmul(val(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, g.t_matmul(val(*a))?);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Spmm(s, x) => acc(*x, s.spmm_t(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                acc(*r, g.col_sums());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                acc(*b, g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::MulCol(a, c) => {
                let col = val(*c);
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    let s = col.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v *= s);
                }
                acc(*a, ga);
                acc(*c, g.zip_map(val(*a), |gv, av| gv * av).row_sums());
            }
            Op::ScaleBy(a, s) => {
                let k = val(*s).get(0, 0);
                acc(*a, g.map(|v| v * k));
                acc(*s, Matrix::scalar(g.zip_map(val(*a), |gv, av| gv * av).sum()));
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Prelu(a, s) => {
                let k = val(*s).get(0, 0);
                let x = val(*a);
                acc(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { k * gv }));
                let ds: f64 = g.data().iter().zip(x.data()).filter(|(_, &xv)| xv <= 0.0).map(|(&gv, &xv)| gv * xv).sum();
                acc(*s, Matrix::scalar(ds));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv / x)),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv * sigmoid(x))),
            Op::Pow(a, p) => {
                let p = *p;
                acc(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv * p * x.powf(p - 1.0) } else { 0.0 }));
            }
            Op::RowNormalize(a, norms) => {
                // y = x/‖x‖  ⇒  dx = (g − y·⟨y,g⟩)/‖x‖ ; below the floor y = x/eps is linear.
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for (i, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let proj: f64 = if n > NORM_EPS { yr.iter().zip(gr).map(|(a, b)| a * b).sum() } else { 0.0 };
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / n;
                    }
                }
                acc(*a, dx);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64));
            }
            Op::ColSum(a) | Op::ColMean(a) => {
                let (r, c) = self.shape(*a);
                let k = if matches!(node.op, Op::ColMean(_)) { 1.0 / r as f64 } else { 1.0 };
                let mut out = Matrix::zeros(r, c);
                for i in 0..r {
                    for (o, &gv) in out.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = gv * k;
                    }
                }
                acc(*a, out);
            }
            Op::ColMax(a, arg) => {
                let (r, c) = self.shape(*a);
                let mut out = Matrix::zeros(r, c);
                for (col, &i) in arg.iter().enumerate() {
                    out.set(i, col, g.get(0, col));
                }
                acc(*a, out);
            }
            Op::RowSum(a) | Op::RowMean(a) => {
                let (r, c) = self.shape(*a);
                let k = if matches!(node.op, Op::RowMean(_)) { 1.0 / c as f64 } else { 1.0 };
                let mut out = Matrix::zeros(r, c);
                for i in 0..r {
                    let gv = g.get(i, 0) * k;
                    out.row_mut(i).iter_mut().for_each(|o| *o = gv);
                }
                acc(*a, out);
            }
            Op::Gather(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut out = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &gv) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                acc(*a, out);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut out = Matrix::zeros(r, c);
                    for i in 0..r {
                        out.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                    }
                    off += c;
                    acc(p, out);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let out = Matrix::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())?;
                    off += r;
                    acc(p, out);
                }
            }
            Op::LogSumExpRows(a, exclude) => {
                // d lse / d x_ij = softmax_ij over kept entries
                let x = val(*a);
                let (n, d) = x.shape();
                let mut out = Matrix::zeros(n, d);
                for i in 0..n {
                    let lse = node.value.get(i, 0);
                    let gi = g.get(i, 0);
                    for j in 0..d {
                        if exclude.as_ref().is_some_and(|m| m[i * d + j]) {
                            continue;
                        }
                        out.set(i, j, gi * (x.get(i, j) - lse).exp());
                    }
                }
                acc(*a, out);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient_is_exact() {
        // loss = sum(W x) with x fixed ⇒ dW[i][j] = x[j]
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_rows(&[vec![0.3, -0.2, 0.1], vec![1.0, 2.0, -1.0]]));
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let x = t.constant(Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        let y = t.matmul(wv, x).unwrap();
        let loss = t.sum(y);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w), &Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]));
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", Matrix::filled(2, 2, 1.0));
        let unused = store.add("unused", Matrix::filled(2, 2, 1.0));
        let mut t = Tape::new();
        let u = t.param(&store, used);
        let s = t.sum(u);
        t.backward(s, &mut store).unwrap();
        assert!(store.grad(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::filled(1, 3, 2.0));
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let sq = t.mul(wv, wv).unwrap();
        let l = t.sum(sq);
        t.backward(l, &mut store).unwrap();
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[8.0, 8.0, 8.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.input(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn stable_softplus_and_sigmoid() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![-1000.0, 0.0, 1000.0]]));
        let sp = t.softplus(x);
        assert_eq!(t.value(sp).data(), &[0.0, std::f64::consts::LN_2, 1000.0]);
        let sg = t.sigmoid(x);
        assert_eq!(t.value(sg).data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn logsumexp_respects_mask() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![1.0, 5.0, 1.0]]));
        let mask = Rc::new(vec![false, true, false]);
        let l = t.logsumexp_rows(x, Some(mask)).unwrap();
        assert!((t.scalar(l) - (1.0 + 2f64.ln())).abs() < 1e-6);
        let all = Rc::new(vec![true, true, true]);
        assert!(t.logsumexp_rows(x, Some(all)).is_err());
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let x = t.input(Matrix::filled(2, 2, 3.0));
        let p = t.mul(c, x).unwrap();
        let s = t.sum(p);
        let g = t.backward(s, &mut store).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 4]);
    }
}
