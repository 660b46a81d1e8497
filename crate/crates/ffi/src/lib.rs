//! C ABI over the gsnop library.
//!
//! Objects cross the boundary as opaque pointers created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`GsnopStatus`]; on failure the message is kept per thread and
//! can be read with [`gsnop_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gsnop::autodiff::Checkpoint;
use gsnop::config::RunConfig;
use gsnop::ctdg::{density_score, generate_synthetic, ingest_csv, CsvSchema, CtdgStore, SyntheticSpec, TemporalEvent};
use gsnop::eval::{average_precision, mrr, RankedQuery};
use gsnop::model::{eval_context, EvalSettings, Model};
use gsnop::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsnopStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Config = 5,
    Numerical = 6,
    Panic = 7,
}

/// Event log with its temporal adjacency index.
pub struct GsnopStore {
    inner: CtdgStore,
}

/// Trained model together with the evaluation settings of its config.
pub struct GsnopModel {
    model: Model,
    eval: EvalSettings,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GsnopStatus {
    match e {
        Error::Io { .. } => GsnopStatus::Io,
        Error::Csv { .. } | Error::Data(_) | Error::Serde(_) => GsnopStatus::Data,
        Error::Config(_) | Error::Usage(_) => GsnopStatus::Config,
        Error::Domain(_)
        | Error::Integration { .. }
        | Error::Divergence { .. }
        | Error::NonFiniteGradient { .. }
        | Error::NonFiniteLoss(_) => GsnopStatus::Numerical,
    }
}

enum Failure {
    Status(GsnopStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(GsnopStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(GsnopStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GsnopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GsnopStatus::Ok
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GsnopStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length, or 0
/// when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gsnop_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gsnop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Reads a `src,dst,t[,features...]` CSV file. Files without feature columns
/// get `fallback_edge_dim` seeded random features.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_store_from_csv(
    path: *const c_char,
    fallback_edge_dim: usize,
    feature_seed: u64,
    out: *mut *mut GsnopStore,
) -> GsnopStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let schema = CsvSchema {
            fallback_edge_dim,
            feature_seed,
        };
        let store = ingest_csv(&path, &schema)?.store;
        write_out(out, Box::into_raw(Box::new(GsnopStore { inner: store })), "out")
    })
}

/// Generates a community-structured synthetic stream with unit-rate arrivals.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_store_synthetic(
    nodes: usize,
    communities: usize,
    events: usize,
    edge_dim: usize,
    seed: u64,
    out: *mut *mut GsnopStore,
) -> GsnopStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = SyntheticSpec {
            nodes,
            communities,
            events,
            edge_dim,
            ..SyntheticSpec::default()
        };
        let store = generate_synthetic(&spec, seed)?;
        write_out(out, Box::into_raw(Box::new(GsnopStore { inner: store })), "out")
    })
}

/// # Safety
/// `store` must be null or a pointer returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsnop_store_free(store: *mut GsnopStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live store handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_store_counts(
    store: *const GsnopStore,
    events: *mut usize,
    nodes: *mut usize,
    edge_dim: *mut usize,
) -> GsnopStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        write_out(events, s.inner.len(), "events")?;
        write_out(nodes, s.inner.node_count(), "nodes")?;
        write_out(edge_dim, s.inner.edge_dim(), "edge_dim")
    })
}

/// Interactions per node per unit time.
///
/// # Safety
/// `store` must be a live store handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_store_density(store: *const GsnopStore, out: *mut f64) -> GsnopStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        write_out(out, density_score(&s.inner)?, "out")
    })
}

/// Loads a checkpoint written by `gsnop train` together with the config file
/// that produced it (`config.resolved`).
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_model_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut GsnopModel,
) -> GsnopStatus {
    guard(|| {
        let cfg = RunConfig::load(&path_arg(config_path, "config_path")?)?;
        let ckpt = Checkpoint::load(&path_arg(checkpoint_path, "checkpoint_path")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = Model::from_checkpoint(cfg.model_config(cfg.variant), &ckpt)?;
        let handle = GsnopModel {
            model,
            eval: cfg.train_config().eval,
        };
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `model` must be null or a pointer returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsnop_model_free(model: *mut GsnopModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Link probabilities for `n` candidate links `(src[i], dst[i], t[i])`.
/// The latent context is the most recent stored interactions strictly before
/// the earliest candidate; node states use the store strictly before each
/// candidate's time. One latent draw seeded by `seed`.
///
/// # Safety
/// `src`, `dst` and `t` must hold `n` values and `out` must have room for `n`.
#[no_mangle]
pub unsafe extern "C" fn gsnop_model_predict(
    model: *const GsnopModel,
    store: *const GsnopStore,
    src: *const u32,
    dst: *const u32,
    t: *const f64,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> GsnopStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        let (src, dst, t) = (slice(src, n, "src")?, slice(dst, n, "dst")?, slice(t, n, "t")?);
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let nodes = s.inner.node_count();
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (src[i] as usize, dst[i] as usize);
            if a >= nodes || b >= nodes || !t[i].is_finite() {
                return Err(invalid(format!("candidate {i} ({a}, {b}, {}) is outside the store", t[i])));
            }
            targets.push(TemporalEvent::new(a, b, t[i], vec![0.0; s.inner.edge_dim()]));
        }
        let first = t.iter().copied().fold(f64::INFINITY, f64::min);
        let history = s.inner.events();
        let cut = history.partition_point(|e| e.t < first);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let context = eval_context(&history[..cut], m.eval.context, nodes, m.eval.context_negatives, &mut rng)?;
        let probs = m.model.forward(&s.inner, &context, &targets, &mut rng)?;
        if n > 0 {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&probs);
        }
        Ok(())
    })
}

/// Average precision of `n` scored items.
///
/// # Safety
/// `labels` and `scores` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_average_precision(
    labels: *const u8,
    scores: *const f64,
    n: usize,
    out: *mut f64,
) -> GsnopStatus {
    guard(|| {
        let labels: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
        let scores = slice(scores, n, "scores")?;
        write_out(out, average_precision(&labels, scores)?, "out")
    })
}

/// Mean reciprocal rank of `queries` positives, each against
/// `negatives_per_query` scores laid out row by row in `negative_scores`.
///
/// # Safety
/// `positive_scores` must hold `queries` values, `negative_scores`
/// `queries * negatives_per_query`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnop_mrr(
    positive_scores: *const f64,
    negative_scores: *const f64,
    queries: usize,
    negatives_per_query: usize,
    out: *mut f64,
) -> GsnopStatus {
    guard(|| {
        let total = queries
            .checked_mul(negatives_per_query)
            .ok_or_else(|| invalid("query count overflows"))?;
        let pos = slice(positive_scores, queries, "positive_scores")?;
        let neg = slice(negative_scores, total, "negative_scores")?;
        let ranked: Vec<RankedQuery> = (0..queries)
            .map(|q| RankedQuery {
                positive: pos[q],
                negatives: neg[q * negatives_per_query..(q + 1) * negatives_per_query].to_vec(),
            })
            .collect();
        write_out(out, mrr(&ranked)?, "out")
    })
}
