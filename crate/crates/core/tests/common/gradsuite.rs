//! Finite-difference checks for every tape op and every method loss, shared by
//! the gradient tests and the acceptance run.

use std::collections::BTreeSet;
use std::rc::Rc;

use gssl::autodiff::{grad_check, GradCheckOptions, GradReport, LossBuilder, Matrix, ParamStore, Tape, Var};
use gssl::encoders::{Activation, EncoderConfig, EncoderKind, Readout};
use gssl::graph::{sym_norm_adj, Graph};
use gssl::methods::{Batch, Level, MethodConfig, MethodName, MethodState};
use gssl::seed;
use rand::Rng;

pub const TRIALS: usize = 20;
pub const FEATURES: usize = 4;

pub fn random_matrix(rows: usize, cols: usize, s: u64) -> Matrix {
    let mut rng = seed::rng(s);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random graph with a spanning path, so it is connected, and uniform features.
pub fn random_graph(n: usize, s: u64) -> Graph {
    let mut rng = seed::rng(s);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
    for u in 0..n {
        for v in u + 2..n {
            if rng.random_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges("g", n, edges, random_matrix(n, FEATURES, seed::derive(s, 1))).unwrap()
}

type OpFn = fn(&mut Tape, &Inputs) -> gssl::Result<Var>;

/// Trainable inputs for one op trial: `a`, `b` are `n × d`, `c` is `d × d`,
/// `r` a row, `k` a column, `s` a scalar.
pub struct Inputs {
    store: ParamStore,
    graph: Graph,
    n: usize,
}

impl Inputs {
    fn var(&self, t: &mut Tape, name: &str) -> Var {
        t.param(&self.store, self.store.id_of(name).unwrap())
    }
}

struct OpCase {
    inputs: Inputs,
    build: OpFn,
    weight_seed: u64,
}

impl LossBuilder for OpCase {
    fn params(&self) -> &ParamStore {
        &self.inputs.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.inputs.store
    }
    fn loss(&self, t: &mut Tape) -> gssl::Result<Var> {
        // a fixed random weighting makes every output entry matter
        let out = (self.build)(t, &self.inputs)?;
        let (r, c) = t.shape(out);
        let w = t.constant(random_matrix(r, c, self.weight_seed));
        let m = t.mul(out, w)?;
        Ok(t.sum(m))
    }
}

fn op_case(s: u64, build: OpFn) -> OpCase {
    let mut rng = seed::rng(s);
    let n = rng.random_range(6..=10);
    let d = 4;
    let mut store = ParamStore::new();
    for (i, (name, r, c)) in [("a", n, d), ("b", n, d), ("c", d, d), ("r", 1, d), ("k", n, 1), ("s", 1, 1)].into_iter().enumerate() {
        store.add(name, random_matrix(r, c, seed::derive(s, 10 + i as u64)));
    }
    OpCase { inputs: Inputs { store, graph: random_graph(n, seed::derive(s, 3)), n }, build, weight_seed: seed::derive(s, 4) }
}

macro_rules! two {
    ($t:ident, $x:ident, $f:ident) => {{
        let a = $x.var($t, "a");
        let b = $x.var($t, "b");
        $t.$f(a, b)
    }};
}

macro_rules! one {
    ($t:ident, $x:ident, $f:ident) => {{
        let a = $x.var($t, "a");
        Ok($t.$f(a))
    }};
}

pub fn op_cases() -> Vec<(&'static str, OpFn)> {
    vec![
        ("matmul", |t, x| {
            let (a, c) = (x.var(t, "a"), x.var(t, "c"));
            t.matmul(a, c)
        }),
        ("matmul_t", |t, x| two!(t, x, matmul_t)),
        ("transpose", |t, x| one!(t, x, transpose)),
        ("spmm", |t, x| {
            let a = x.var(t, "a");
            t.spmm(&Rc::new(sym_norm_adj(&x.graph)), a)
        }),
        ("add", |t, x| two!(t, x, add)),
        ("add_row", |t, x| {
            let (a, r) = (x.var(t, "a"), x.var(t, "r"));
            t.add_row(a, r)
        }),
        ("sub", |t, x| two!(t, x, sub)),
        ("mul", |t, x| two!(t, x, mul)),
        ("mul_col", |t, x| {
            let (a, k) = (x.var(t, "a"), x.var(t, "k"));
            t.mul_col(a, k)
        }),
        ("scale_by", |t, x| {
            let (a, s) = (x.var(t, "a"), x.var(t, "s"));
            t.scale_by(a, s)
        }),
        ("scale", |t, x| {
            let a = x.var(t, "a");
            Ok(t.scale(a, -1.7))
        }),
        ("add_scalar", |t, x| {
            let a = x.var(t, "a");
            let a = t.add_scalar(a, 0.3);
            t.mul(a, a)
        }),
        ("relu", |t, x| one!(t, x, relu)),
        ("prelu", |t, x| {
            let (a, s) = (x.var(t, "a"), x.var(t, "s"));
            t.prelu(a, s)
        }),
        ("sigmoid", |t, x| one!(t, x, sigmoid)),
        ("tanh", |t, x| one!(t, x, tanh)),
        ("exp", |t, x| one!(t, x, exp)),
        ("log", |t, x| {
            let a = x.var(t, "a");
            let sq = t.mul(a, a)?;
            let pos = t.add_scalar(sq, 0.5);
            Ok(t.log(pos))
        }),
        ("softplus", |t, x| {
            let a = x.var(t, "a");
            let a = t.scale(a, 4.0);
            Ok(t.softplus(a))
        }),
        ("pow", |t, x| {
            let a = x.var(t, "a");
            t.pow(a, 2.5)
        }),
        ("row_normalize", |t, x| one!(t, x, row_normalize)),
        ("sum", |t, x| one!(t, x, sum)),
        ("mean", |t, x| {
            let a = x.var(t, "a");
            t.mean(a)
        }),
        ("col_sum", |t, x| one!(t, x, col_sum)),
        ("col_mean", |t, x| {
            let a = x.var(t, "a");
            t.col_mean(a)
        }),
        ("col_max", |t, x| {
            let a = x.var(t, "a");
            t.col_max(a)
        }),
        ("row_sum", |t, x| one!(t, x, row_sum)),
        ("row_mean", |t, x| {
            let a = x.var(t, "a");
            t.row_mean(a)
        }),
        ("gather_rows", |t, x| {
            let a = x.var(t, "a");
            let idx = vec![x.n - 1, 0, 2, 0, x.n / 2];
            t.gather_rows(a, Rc::new(idx))
        }),
        ("concat_cols", |t, x| {
            let (a, b, k) = (x.var(t, "a"), x.var(t, "b"), x.var(t, "k"));
            t.concat_cols(&[a, k, b])
        }),
        ("concat_rows", |t, x| {
            let (a, b, r) = (x.var(t, "a"), x.var(t, "b"), x.var(t, "r"));
            t.concat_rows(&[a, r, b])
        }),
        ("logsumexp_rows", |t, x| {
            let (a, b) = (x.var(t, "a"), x.var(t, "b"));
            let scores = t.matmul_t(a, b)?;
            let n = x.n;
            // drop the diagonal, as contrastive losses do
            let mask: Vec<bool> = (0..n * n).map(|i| i / n == i % n).collect();
            let masked = t.logsumexp_rows(scores, Some(Rc::new(mask)))?;
            let full = t.logsumexp_rows(scores, None)?;
            t.concat_rows(&[masked, full])
        }),
    ]
}

pub struct CaseResult {
    pub label: String,
    pub report: GradReport,
}

pub fn check_ops(opts: GradCheckOptions) -> Vec<CaseResult> {
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (label, build))| {
            let report = grad_check(|s| op_case(s, build), TRIALS, 1000 + i as u64, opts).unwrap();
            CaseResult { label: label.to_string(), report }
        })
        .collect()
}

pub fn ops_covered(results: &[CaseResult]) -> BTreeSet<&'static str> {
    results.iter().flat_map(|r| r.report.ops.iter().copied()).collect()
}

struct MethodCase {
    state: MethodState,
    graphs: Vec<Graph>,
    seed: u64,
}

impl LossBuilder for MethodCase {
    fn params(&self) -> &ParamStore {
        &self.state.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.state.params
    }
    fn loss(&self, t: &mut Tape) -> gssl::Result<Var> {
        let batch = match self.state.level() {
            Level::Node => Batch::Node(&self.graphs[0]),
            Level::Graph => Batch::Graphs(self.graphs.iter().collect()),
        };
        self.state.loss(t, &batch, self.seed)
    }
}

/// Encoder family and activation used for each method's check. ReLU and PReLU
/// are split across methods so both activations are exercised.
fn method_encoder(name: MethodName, level: Level) -> EncoderConfig {
    let kind = if level == Level::Graph { EncoderKind::Gin } else { EncoderKind::Gcn };
    let activation = match name {
        MethodName::Dgi | MethodName::Mvgrl | MethodName::Bgrl => Activation::Prelu,
        _ => Activation::Relu,
    };
    EncoderConfig { kind, layers: 2, hidden_dim: 8, activation, readout: Readout::Sum }
}

fn method_case(name: MethodName, level: Level, s0: u64) -> MethodCase {
    // redraw when the base point is a hard error, such as an all-zero
    // projected row that contrastive normalization refuses
    for k in 0.. {
        let s = seed::derive(s0, k);
        let n = seed::rng(s).random_range(6..=10);
        let count = if level == Level::Graph { 3 } else { 1 };
        let graphs = (0..count).map(|i| random_graph(n + i, seed::derive(s, 100 + i as u64))).collect();
        let state = MethodState::new(MethodConfig::new(name), method_encoder(name, level), level, FEATURES, s).unwrap();
        let case = MethodCase { state, graphs, seed: s };
        if case.loss(&mut Tape::new()).is_ok() {
            return case;
        }
    }
    unreachable!()
}

pub fn method_levels() -> Vec<(MethodName, Level)> {
    let mut v: Vec<(MethodName, Level)> =
        MethodName::ALL.iter().map(|&m| (m, if m == MethodName::Infograph { Level::Graph } else { Level::Node })).collect();
    v.push((MethodName::Graphcl, Level::Graph));
    v.push((MethodName::Graphmae, Level::Graph));
    v
}

pub fn check_methods(opts: GradCheckOptions) -> Vec<CaseResult> {
    method_levels()
        .into_iter()
        .enumerate()
        .map(|(i, (name, level))| {
            let report = grad_check(|s| method_case(name, level, s), TRIALS, 2000 + i as u64, opts).unwrap();
            CaseResult { label: format!("{}/{:?}", name.as_str(), level).to_lowercase(), report }
        })
        .collect()
}
