//! Acceptance run: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria that need a dataset which is not present under `data/` report
//! FAIL (or SKIP for the stretch goal) with the missing path and do not fail
//! the run; placing the bundle there makes them run and count.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::gradsuite::{check_methods, check_ops, ops_covered};
use common::separation;
use gssl::autodiff::{GradCheckOptions, Matrix, Tape, OP_NAMES};
use gssl::config::RunConfig;
use gssl::graph::Dataset;
use gssl::methods::losses::{nt_xent, sce};
use gssl::methods::{Batch, Level, MethodConfig, MethodName, MethodState};
use gssl::pipeline::{self, load_dataset, sbm_demo_params};
use gssl::trainer::{should_stop, stale_epochs};
use gssl::{seed, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
    /// A failure caused by absent data rather than by the implementation.
    data_missing: bool,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail, data_missing: false }
    }

    fn missing(status: Status, path: &Path) -> Self {
        Outcome { status, detail: format!("dataset bundle not found at {}", path.display()), data_missing: true }
    }

    fn error(e: gssl::Error) -> Self {
        Outcome { status: Status::Fail, detail: format!("error: {e}"), data_missing: false }
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).expect("workspace root").to_path_buf()
}

fn bundled_config(name: &str) -> RunConfig {
    let mut cfg = RunConfig::load(workspace().join("configs").join(format!("{name}.json"))).unwrap();
    cfg.dataset.root = workspace().join(&cfg.dataset.root);
    cfg
}

fn bundle_dir(cfg: &RunConfig) -> PathBuf {
    cfg.dataset.root.join(&cfg.dataset.name)
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

const GRAD_TOL: f64 = 1e-3;

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    let ops = check_ops(opts);
    let methods = check_methods(opts);
    let took = start.elapsed();
    let worst = |rs: &[common::gradsuite::CaseResult]| rs.iter().map(|r| r.report.max_rel_err).fold(0.0, f64::max);
    let covered = ops_covered(&ops);
    let uncovered = OP_NAMES.iter().filter(|op| !covered.contains(*op)).count();
    let failing: Vec<&str> = ops.iter().chain(&methods).filter(|r| !r.report.passes(GRAD_TOL)).map(|r| r.label.as_str()).collect();
    let ok = failing.is_empty() && uncovered == 0 && took < Duration::from_secs(60);
    Outcome::check(
        ok,
        format!(
            "{} ops (max rel err {:.1e}, {uncovered} unchecked), {} method losses (max rel err {:.1e}), failing {failing:?}, {:.1?} (need < {GRAD_TOL:.0e}, < 60 s)",
            ops.len(),
            worst(&ops),
            methods.len(),
            worst(&methods),
            took
        ),
    )
}

/// Pretrain with a bundled graph-level config and score 10-fold SVM accuracy.
fn graph_benchmark(config: &str, lo: f64, hi: f64, budget: Duration, expect: Option<(usize, usize, usize)>) -> Outcome {
    let cfg = bundled_config(config);
    let dir = bundle_dir(&cfg);
    if !dir.join("meta.json").is_file() {
        return Outcome::missing(Status::Fail, &dir);
    }
    let run = || -> Result<Outcome> {
        let data = load_dataset(&cfg)?;
        let Dataset::Graphs(set) = &data else { return Ok(Outcome::check(false, "expected a graph collection".into())) };
        let shape = (set.len(), data.n_features(), set.n_classes());
        if let Some(want) = expect.filter(|&w| w != shape) {
            return Ok(Outcome::check(false, format!("bundle has (graphs, features, classes) = {shape:?}, expected {want:?}")));
        }
        let out = tempfile::tempdir().map_err(|e| gssl::Error::Training(e.to_string()))?;
        let start = Instant::now();
        let r = pipeline::reproduce(&cfg, out.path(), None)?;
        let took = start.elapsed();
        let acc = 100.0 * r.eval.mean;
        Ok(Outcome::check(
            within(acc, lo, hi) && took < budget,
            format!(
                "{shape:?} graphs/features/classes, {} epochs, accuracy {acc:.1} ± {:.1} (need [{lo}, {hi}]), {:.1?} (need < {:?})",
                r.epochs_run,
                100.0 * r.eval.std,
                took,
                budget
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

const SEPARATION_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MARGIN: f64 = 0.05;

fn sbm_separation() -> Outcome {
    let params = sbm_demo_params();
    let mut ok = true;
    let mut parts = Vec::new();
    for m in ["dgi", "graphcl", "mvgrl", "gca", "bgrl"] {
        let cfg = bundled_config(&format!("sbm-demo_{m}"));
        match separation::averaged(&cfg, &params, &SEPARATION_SEEDS) {
            Ok(s) => {
                ok &= s.margin() >= MARGIN;
                parts.push(format!("{m} {:.1} vs raw {:.1} / untrained {:.1}", 100.0 * s.pretrained, 100.0 * s.raw, 100.0 * s.untrained));
                if m == "dgi" {
                    ok &= s.nmi >= 0.8;
                    parts.push(format!("dgi NMI {:.3} (need >= 0.8)", s.nmi));
                }
            }
            Err(e) => return Outcome::error(e),
        }
    }
    Outcome::check(ok, format!("{}; margin need >= {:.0} points", parts.join(", "), 100.0 * MARGIN))
}

fn small_graph(n: usize, s: u64) -> gssl::graph::Graph {
    common::gradsuite::random_graph(n, s)
}

fn zeroed(name: MethodName, level: Level, param: &str, s: u64) -> Result<MethodState> {
    let enc = if level == Level::Graph {
        bundled_config("mutag_infograph").model
    } else {
        let mut m = bundled_config("sbm-demo_dgi").model;
        m.hidden_dim = 8;
        m
    };
    let mut state = MethodState::new(MethodConfig::new(name), enc, level, common::gradsuite::FEATURES, s)?;
    let id = state.params.id_of(param).expect("parameter exists");
    state.params.value_mut(id).fill(0.0);
    Ok(state)
}

fn loss_of(state: &MethodState, batch: &Batch, s: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let l = state.loss(&mut tape, batch, s)?;
    Ok(tape.scalar(l))
}

fn loss_identities() -> Outcome {
    let run = || -> Result<Outcome> {
        let ln2 = std::f64::consts::LN_2;
        let g = small_graph(9, 1);
        let graphs: Vec<_> = (0..4).map(|i| small_graph(6 + i, 10 + i as u64)).collect();
        let dgi = loss_of(&zeroed(MethodName::Dgi, Level::Node, "disc.w", 2)?, &Batch::Node(&g), 3)?;
        let mvgrl = loss_of(&zeroed(MethodName::Mvgrl, Level::Node, "disc.w", 4)?, &Batch::Node(&g), 5)?;
        let infograph =
            loss_of(&zeroed(MethodName::Infograph, Level::Graph, "graph_proj.w", 6)?, &Batch::Graphs(graphs.iter().collect()), 7)?;
        let mut tape = Tape::new();
        let mut rng = seed::rng(8);
        let row = |rng: &mut seed::Rng| {
            use rand::Rng;
            Matrix::from_vec(1, 5, (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let (a, b) = (tape.constant(row(&mut rng)), tape.constant(row(&mut rng)));
        let single = nt_xent(&mut tape, a, b, 0.5)?;
        let x = tape.constant(common::gradsuite::random_matrix(7, 5, 9));
        let recon = sce(&mut tape, x, x, 2.0)?;
        let (single, recon) = (tape.scalar(single), tape.scalar(recon));
        let ok = (dgi - ln2).abs() <= 1e-5
            && (mvgrl - ln2).abs() <= 1e-5
            && (infograph - 2.0 * ln2).abs() <= 1e-5
            && single == 0.0
            && recon.abs() <= 1e-6;
        Ok(Outcome::check(
            ok,
            format!(
                "dgi {dgi:.7}, mvgrl {mvgrl:.7} (ln 2 = {ln2:.7}), infograph {infograph:.7} (2 ln 2), nt_xent n=1 {single:e}, perfect reconstruction {recon:e}"
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn early_stopping_trace() -> Outcome {
    let history = [3.0, 2.0, 2.0, 2.0, 2.0];
    let stale: Vec<usize> = (1..=history.len()).map(|e| stale_epochs(&history[..e], 0.0)).collect();
    let stops: Vec<bool> = (1..=history.len()).map(|e| should_stop(&history[..e], 2, 0.0)).collect();
    let ok = stale == [0, 0, 1, 2, 3] && stops == [false, false, false, false, true];
    Outcome::check(ok, format!("stale counts {stale:?}, stop flags {stops:?} (expected [0, 0, 1, 2, 3], stop at epoch 5)"))
}

fn determinism() -> Outcome {
    let run = || -> Result<Outcome> {
        let cfg = bundled_config("sbm-demo_dgi");
        let strip = |r: pipeline::RunResult| {
            let mut v = serde_json::to_value(&r).unwrap();
            v.as_object_mut().unwrap().remove("wall_time");
            v
        };
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let a = strip(pipeline::reproduce(&cfg, dirs[0].path(), None)?);
        let b = strip(pipeline::reproduce(&cfg, dirs[1].path(), None)?);
        let same_json = serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
        let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
        let same_files = ["model.ckpt", "embeddings.bin", "train.log"].iter().all(|f| read(&dirs[0], f) == read(&dirs[1], f));
        Ok(Outcome::check(
            same_json && same_files,
            format!("sbm-demo/dgi twice: result JSON identical {same_json}, checkpoint/embeddings/log identical {same_files}"),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn wikics_stretch() -> Outcome {
    let cfg = bundled_config("wikics_dgi");
    let dir = bundle_dir(&cfg);
    if !dir.join("meta.json").is_file() {
        return Outcome::missing(Status::Skip, &dir);
    }
    let run = || -> Result<Outcome> {
        let out = tempfile::tempdir().map_err(|e| gssl::Error::Training(e.to_string()))?;
        let r = pipeline::reproduce(&cfg, out.path(), None)?;
        let acc = 100.0 * r.eval.mean;
        Ok(Outcome::check(
            within(acc, 72.3, 78.3),
            format!("accuracy {acc:.1} ± {:.1} over {} splits (need [72.3, 78.3])", 100.0 * r.eval.std, r.eval.per_fold.len()),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

/// Name, whether it must pass, and the check.
type Criterion = (&'static str, bool, Box<dyn Fn() -> Outcome>);

#[test]
fn acceptance() {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: Vec<Criterion> = vec![
        ("1 gradient suite", true, Box::new(gradient_suite)),
        ("2 mutag infograph", true, Box::new(move || graph_benchmark("mutag_infograph", 83.8, 93.8, minutes(10), Some((188, 7, 2))))),
        ("3 mutag graphcl", true, Box::new(move || graph_benchmark("mutag_graphcl", 82.1, 91.3, minutes(10), Some((188, 7, 2))))),
        ("4a imdb-b infograph", true, Box::new(move || graph_benchmark("imdb-b_infograph", 70.1, 74.3, minutes(30), None))),
        ("4b imdb-b graphmae", true, Box::new(move || graph_benchmark("imdb-b_graphmae", 69.5, 75.7, minutes(30), None))),
        ("5 imdb-m infograph", true, Box::new(move || graph_benchmark("imdb-m_infograph", 46.8, 52.2, minutes(30), None))),
        ("6 sbm separation", true, Box::new(sbm_separation)),
        ("7 loss identities", true, Box::new(loss_identities)),
        ("8 early-stopping trace", true, Box::new(early_stopping_trace)),
        ("9 reproduce determinism", true, Box::new(determinism)),
        ("10 wikics dgi (stretch)", false, Box::new(wikics_stretch)),
    ];
    let mut blocking = Vec::new();
    for (name, required, eval) in &criteria {
        let start = Instant::now();
        let o = eval();
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("[{tag}] {name}: {} [{:.1?}]", o.detail, start.elapsed());
        if *required && o.status != Status::Pass && !o.data_missing {
            blocking.push(*name);
        }
    }
    assert!(blocking.is_empty(), "failing criteria: {blocking:?}");
}
