//! C interface to the gssl toolkit.
//!
//! Every fallible function returns a status code (`GSSL_OK` on success) and
//! writes results through out-pointers. After a failure,
//! `gssl_last_error_message` describes it; the message belongs to the calling
//! thread and stays valid until that thread's next failing call. Objects are
//! opaque handles released with their `_free` function; strings returned by
//! the library are released with `gssl_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gssl::config::RunConfig;
use gssl::eval::EmbeddingTable;
use gssl::graph::Dataset;
use gssl::io::{export_embeddings, import_embeddings, EmbeddingFormat};
use gssl::methods::MethodState;
use gssl::pipeline::{self, Task};
use gssl::trainer::pretrain;

pub const GSSL_OK: i32 = 0;
/// Invalid configuration: bad JSON, unknown key, out-of-range value.
pub const GSSL_ERR_CONFIG: i32 = 1;
/// Missing, unreadable or malformed data files.
pub const GSSL_ERR_DATA: i32 = 2;
/// Failures during training or evaluation, including non-finite losses.
pub const GSSL_ERR_RUNTIME: i32 = 3;
/// A null pointer, invalid UTF-8 or an unknown enumeration value.
pub const GSSL_ERR_ARGUMENT: i32 = 4;
/// An internal panic was caught at the boundary.
pub const GSSL_ERR_PANIC: i32 = 5;

pub const GSSL_TASK_DEFAULT: i32 = -1;
pub const GSSL_TASK_NODE_CLF: i32 = 0;
pub const GSSL_TASK_GRAPH_CLF: i32 = 1;
pub const GSSL_TASK_CLUSTER: i32 = 2;
pub const GSSL_TASK_SEARCH: i32 = 3;

pub const GSSL_FORMAT_BINARY: i32 = 0;
pub const GSSL_FORMAT_CSV: i32 = 1;

/// A parsed and validated run configuration.
pub struct GsslConfig(RunConfig);

/// A loaded node graph or graph collection.
pub struct GsslDataset(Dataset);

/// A model built from a configuration, trained or restored from a checkpoint.
pub struct GsslModel(MethodState);

/// A table of embeddings with one row per node or graph.
pub struct GsslEmbeddings(EmbeddingTable);

/// Summary of a training run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GsslTrainSummary {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
}

/// Headline numbers of an evaluation; the full result is available as JSON.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GsslEvalSummary {
    pub mean: f64,
    pub std: f64,
    pub n_folds: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(i32, String);

impl From<gssl::Error> for Failure {
    fn from(e: gssl::Error) -> Self {
        Failure(e.exit_code(), e.to_string())
    }
}

fn arg_error(msg: impl Into<String>) -> Failure {
    Failure(GSSL_ERR_ARGUMENT, msg.into())
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GSSL_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            GSSL_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(arg_error(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg_error(format!("{what} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| arg_error(format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(arg_error(format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nul removed").into_raw()
}

/// `None` for `GSSL_TASK_DEFAULT`, which picks the task matching the data.
fn task_of(code: i32) -> Result<Option<Task>, Failure> {
    Ok(Some(match code {
        GSSL_TASK_DEFAULT => return Ok(None),
        GSSL_TASK_NODE_CLF => Task::NodeClf,
        GSSL_TASK_GRAPH_CLF => Task::GraphClf,
        GSSL_TASK_CLUSTER => Task::Cluster,
        GSSL_TASK_SEARCH => Task::Search,
        _ => return Err(arg_error(format!("unknown task code {code}"))),
    }))
}

fn format_of(code: i32) -> Result<EmbeddingFormat, Failure> {
    match code {
        GSSL_FORMAT_BINARY => Ok(EmbeddingFormat::Binary),
        GSSL_FORMAT_CSV => Ok(EmbeddingFormat::Csv),
        _ => Err(arg_error(format!("unknown embedding format code {code}"))),
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn gssl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failure, or null if none occurred.
#[no_mangle]
pub extern "C" fn gssl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gssl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses configuration JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_config_parse(json: *const c_char, out: *mut *mut GsslConfig) -> i32 {
    guard(|| {
        let cfg = RunConfig::parse(str_arg(json, "json")?)?;
        put(out, boxed(GsslConfig(cfg)), "out")
    })
}

/// Reads and parses a configuration file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_config_load(path: *const c_char, out: *mut *mut GsslConfig) -> i32 {
    guard(|| {
        let cfg = RunConfig::load(str_arg(path, "path")?)?;
        put(out, boxed(GsslConfig(cfg)), "out")
    })
}

/// Canonical JSON of a configuration, with every default filled in.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable. Free the string with `gssl_string_free`.
#[no_mangle]
pub unsafe extern "C" fn gssl_config_to_json(cfg: *const GsslConfig, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let cfg = obj(cfg, "cfg")?;
        put(out, c_string(cfg.0.to_json()), "out")
    })
}

/// Replaces the configuration's seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gssl_config_set_seed(cfg: *mut GsslConfig, seed: u64) -> i32 {
    guard(|| {
        cfg.as_mut().ok_or_else(|| arg_error("cfg is null"))?.0.seed = seed;
        Ok(())
    })
}

/// Replaces the directory datasets are looked up in.
///
/// # Safety
/// `cfg` must be a live handle; `root` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gssl_config_set_data_root(cfg: *mut GsslConfig, root: *const c_char) -> i32 {
    guard(|| {
        let root = PathBuf::from(str_arg(root, "root")?);
        cfg.as_mut().ok_or_else(|| arg_error("cfg is null"))?.0.dataset.root = root;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gssl_config_free(cfg: *mut GsslConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Loads the configured dataset, or generates it for the built-in demo name.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_dataset_load(cfg: *const GsslConfig, out: *mut *mut GsslDataset) -> i32 {
    guard(|| {
        let data = pipeline::load_dataset(&obj(cfg, "cfg")?.0)?;
        put(out, boxed(GsslDataset(data)), "out")
    })
}

/// Number of items embedded for the dataset: nodes of a graph, or graphs of a collection.
///
/// # Safety
/// `data` must be a live handle; `n_items` and `n_features` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_dataset_shape(data: *const GsslDataset, n_items: *mut usize, n_features: *mut usize) -> i32 {
    guard(|| {
        let data = &obj(data, "data")?.0;
        let n = match data {
            Dataset::Nodes { graph, .. } => graph.n(),
            Dataset::Graphs(set) => set.len(),
        };
        put(n_items, n, "n_items")?;
        put(n_features, data.n_features(), "n_features")
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gssl_dataset_free(data: *mut GsslDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Pretrains the configured method on `data`. `summary` may be null.
///
/// # Safety
/// `cfg` and `data` must be live handles; `out` must be writable; `summary` null or writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_pretrain(
    cfg: *const GsslConfig,
    data: *const GsslDataset,
    out: *mut *mut GsslModel,
    summary: *mut GsslTrainSummary,
) -> i32 {
    guard(|| {
        let cfg = &obj(cfg, "cfg")?.0;
        let data = &obj(data, "data")?.0;
        if out.is_null() {
            return Err(arg_error("out is null"));
        }
        let tc = cfg.train_config(pipeline::level_of(data), None);
        let (state, report) = pretrain(data.into(), cfg.method.clone(), cfg.model, &tc)?;
        if !summary.is_null() {
            summary.write(GsslTrainSummary {
                epochs_run: report.epochs_run,
                best_epoch: report.best_epoch,
                best_loss: report.loss_history[report.best_epoch - 1],
                stopped_early: report.stopped_early,
            });
        }
        put(out, boxed(GsslModel(state)), "out")
    })
}

/// Rebuilds the configured model for `data` and loads a checkpoint into it.
///
/// # Safety
/// `cfg` and `data` must be live handles; `path` a nul-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_model_load(
    cfg: *const GsslConfig,
    data: *const GsslDataset,
    path: *const c_char,
    out: *mut *mut GsslModel,
) -> i32 {
    guard(|| {
        let state = pipeline::load_model(&obj(cfg, "cfg")?.0, &obj(data, "data")?.0, str_arg(path, "path")?.as_ref())?;
        put(out, boxed(GsslModel(state)), "out")
    })
}

/// Writes the model's parameters as a checkpoint file.
///
/// # Safety
/// `model` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gssl_model_save(model: *const GsslModel, path: *const c_char) -> i32 {
    guard(|| Ok(pipeline::save_model(&obj(model, "model")?.0, str_arg(path, "path")?.as_ref())?))
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gssl_model_free(model: *mut GsslModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embeds every node (or graph) of `data` with the model.
///
/// # Safety
/// `model` and `data` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_embed(model: *const GsslModel, data: *const GsslDataset, out: *mut *mut GsslEmbeddings) -> i32 {
    guard(|| {
        let emb = pipeline::embed(&obj(model, "model")?.0, &obj(data, "data")?.0)?;
        put(out, boxed(GsslEmbeddings(emb)), "out")
    })
}

/// Reads an embedding file in the given `GSSL_FORMAT_*` format.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_embeddings_import(path: *const c_char, format: i32, out: *mut *mut GsslEmbeddings) -> i32 {
    guard(|| {
        let emb = import_embeddings(str_arg(path, "path")?, format_of(format)?)?;
        put(out, boxed(GsslEmbeddings(emb)), "out")
    })
}

/// Writes embeddings in the given `GSSL_FORMAT_*` format.
///
/// # Safety
/// `emb` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gssl_embeddings_export(emb: *const GsslEmbeddings, path: *const c_char, format: i32) -> i32 {
    guard(|| Ok(export_embeddings(&obj(emb, "emb")?.0, str_arg(path, "path")?, format_of(format)?)?))
}

/// Rows and columns of the table.
///
/// # Safety
/// `emb` must be a live handle; `n` and `d` writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_embeddings_shape(emb: *const GsslEmbeddings, n: *mut usize, d: *mut usize) -> i32 {
    guard(|| {
        let emb = &obj(emb, "emb")?.0;
        put(n, emb.n(), "n")?;
        put(d, emb.d(), "d")
    })
}

/// Copies the values row-major into `values` (capacity `len`, at least n·d)
/// and, when `ids` is not null, the row ids into `ids` (at least n).
///
/// # Safety
/// `emb` must be a live handle; `values` must hold `len` floats; `ids` null or holding n entries.
#[no_mangle]
pub unsafe extern "C" fn gssl_embeddings_copy(emb: *const GsslEmbeddings, values: *mut f32, len: usize, ids: *mut u64) -> i32 {
    guard(|| {
        let emb = &obj(emb, "emb")?.0;
        let (n, d) = (emb.n(), emb.d());
        if values.is_null() {
            return Err(arg_error("values is null"));
        }
        if len < n * d {
            return Err(arg_error(format!("buffer of {len} floats for a {n}x{d} table")));
        }
        let out = std::slice::from_raw_parts_mut(values, n * d);
        for i in 0..n {
            for (j, v) in out[i * d..(i + 1) * d].iter_mut().enumerate() {
                *v = emb.data().get(i, j) as f32;
            }
        }
        if !ids.is_null() {
            let out = std::slice::from_raw_parts_mut(ids, n);
            for (o, &id) in out.iter_mut().zip(emb.ids()) {
                *o = id as u64;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `emb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gssl_embeddings_free(emb: *mut GsslEmbeddings) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Scores embeddings on a `GSSL_TASK_*` task with the configured evaluator.
/// `summary` and `json` may each be null; a returned JSON string is freed with `gssl_string_free`.
///
/// # Safety
/// `cfg`, `data` and `emb` must be live handles; `summary` and `json` null or writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_evaluate(
    cfg: *const GsslConfig,
    data: *const GsslDataset,
    emb: *const GsslEmbeddings,
    task: i32,
    summary: *mut GsslEvalSummary,
    json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let data = &obj(data, "data")?.0;
        let task = task_of(task)?.unwrap_or_else(|| Task::default_for(data));
        let r = pipeline::evaluate(&obj(cfg, "cfg")?.0, data, &obj(emb, "emb")?.0, task)?;
        if !summary.is_null() {
            summary.write(GsslEvalSummary { mean: r.mean, std: r.std, n_folds: r.per_fold.len() });
        }
        if !json.is_null() {
            json.write(c_string(r.to_json()));
        }
        Ok(())
    })
}

/// Pretrains, embeds and evaluates in one call, writing all artifacts into
/// `out_dir`. `json` receives the result document when not null.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` a nul-terminated string; `json` null or writable.
#[no_mangle]
pub unsafe extern "C" fn gssl_reproduce(cfg: *const GsslConfig, out_dir: *const c_char, task: i32, json: *mut *mut c_char) -> i32 {
    guard(|| {
        let cfg = &obj(cfg, "cfg")?.0;
        let out_dir = str_arg(out_dir, "out_dir")?;
        let r = pipeline::reproduce(cfg, out_dir.as_ref(), task_of(task)?)?;
        if !json.is_null() {
            json.write(c_string(r.to_json()));
        }
        Ok(())
    })
}
