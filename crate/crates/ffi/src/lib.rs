//! C ABI over the `carp` crate: build run configurations, train, load
//! checkpointed models, embed samples, and score k-NN accuracy from C or
//! anything else that can call the C ABI. The matching header lives at
//! `include/carp.h` and is generated by cbindgen (see tests/header_sync.rs).
//!
//! Conventions:
//! - `CarpConfig` and `CarpModel` are opaque handles. Create and destroy
//!   them only through this API; every `*_free` tolerates null.
//! - Fallible calls return a [`CarpStatus`]; on failure a human-readable
//!   message for the calling thread is available via [`carp_last_error`].
//! - Nothing unwinds across the boundary: panics are caught and surfaced as
//!   `CARP_STATUS_PANIC`.

use std::any::Any;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use carp::cli::{self, checkpoint, config};
use carp::error::CarpError;
use carp::eval::{embed, knn_accuracy_loo, EmbeddingBank};
use carp::model::ModelParams;
use carp::numerics::Matrix;

/// Result code for every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarpStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A configuration key or value was rejected; see `carp_last_error`.
    InvalidConfig = 3,
    /// A non-config argument was out of range or mis-shaped.
    InvalidArgument = 4,
    /// Training, evaluation, or file I/O failed; see `carp_last_error`.
    RunFailed = 5,
    /// An internal invariant broke. The message from `carp_last_error`
    /// is the panic payload.
    Panic = 6,
}

/// Opaque run-configuration builder. Starts from the library defaults;
/// `carp_config_set` overrides one key at a time, keeping the same
/// key=value vocabulary as the CLI's config files.
pub struct CarpConfig {
    /// Accumulated key=value lines, validated as a whole after every edit.
    text: String,
}

/// Opaque trained model loaded from a checkpoint.
pub struct CarpModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    // Interior NULs cannot survive in a C string; the byte is blanked.
    let sanitized: String =
        msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    let msg = CString::new(sanitized).expect("NUL bytes were just blanked");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn panic_text(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        String::from("panic: unknown payload")
    }
}

/// Run a status-returning body with panics contained at the boundary.
fn ffi_status<F: FnOnce() -> Result<(), CarpStatus>>(body: F) -> CarpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CarpStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            set_last_error(&panic_text(payload.as_ref()));
            CarpStatus::Panic
        }
    }
}

/// Like `ffi_status` for handle constructors; failure becomes null.
fn ffi_ptr<T, F: FnOnce() -> Result<*mut T, CarpStatus>>(body: F) -> *mut T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(ptr)) => ptr,
        Ok(Err(_)) => std::ptr::null_mut(),
        Err(payload) => {
            set_last_error(&panic_text(payload.as_ref()));
            std::ptr::null_mut()
        }
    }
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, CarpStatus> {
    match ptr.as_ref() {
        Some(r) => Ok(r),
        None => {
            set_last_error(&format!("{what} is null"));
            Err(CarpStatus::NullArgument)
        }
    }
}

unsafe fn deref_mut<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, CarpStatus> {
    match ptr.as_mut() {
        Some(r) => Ok(r),
        None => {
            set_last_error(&format!("{what} is null"));
            Err(CarpStatus::NullArgument)
        }
    }
}

unsafe fn utf8<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CarpStatus> {
    if ptr.is_null() {
        set_last_error(&format!("{what} is null"));
        return Err(CarpStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error(&format!("{what} is not valid UTF-8"));
        CarpStatus::InvalidUtf8
    })
}

/// Config-file context: bad keys and values are configuration mistakes.
fn config_err(e: CarpError) -> CarpStatus {
    set_last_error(&e.to_string());
    match e {
        CarpError::Config(_) | CarpError::UnknownKey(_) => CarpStatus::InvalidConfig,
        _ => CarpStatus::RunFailed,
    }
}

/// Run context: validation failures point at this call's arguments.
fn run_err(e: CarpError) -> CarpStatus {
    set_last_error(&e.to_string());
    match e {
        CarpError::Config(_) => CarpStatus::InvalidArgument,
        _ => CarpStatus::RunFailed,
    }
}

/// Version of this library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn carp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread, UTF-8 and
/// NUL-terminated. Never null; empty when nothing has failed yet. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn carp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Allocate a configuration holding the library defaults. Returns null
/// only when allocation itself fails. Free with `carp_config_free`.
#[no_mangle]
pub extern "C" fn carp_config_new() -> *mut CarpConfig {
    ffi_ptr(|| Ok(Box::into_raw(Box::new(CarpConfig { text: String::new() }))))
}

/// Free a configuration. Null is a no-op.
///
/// # Safety
/// `cfg` must be null or a live pointer from `carp_config_new`, and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carp_config_free(cfg: *mut CarpConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Set one configuration key, e.g. ("epochs", "300"). The pair is
/// validated together with everything set so far; on failure the
/// configuration is left unchanged. Later sets of the same key win.
///
/// # Safety
/// `cfg` must be a live pointer from `carp_config_new`; `key` and `value`
/// must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn carp_config_set(
    cfg: *mut CarpConfig,
    key: *const c_char,
    value: *const c_char,
) -> CarpStatus {
    ffi_status(|| {
        let cfg = unsafe { deref_mut(cfg, "cfg") }?;
        let key = unsafe { utf8(key, "key") }?;
        let value = unsafe { utf8(value, "value") }?;
        // One logical line per set call: embedded separators would smuggle
        // in extra lines, and a '#' key would parse as a comment and be
        // silently dropped.
        if key.is_empty() || key.contains(['=', '\n']) || key.starts_with('#') {
            set_last_error(&format!("malformed config key {key:?}"));
            return Err(CarpStatus::InvalidConfig);
        }
        if value.contains('\n') {
            set_last_error(&format!("config value for {key:?} contains a newline"));
            return Err(CarpStatus::InvalidConfig);
        }
        let candidate = format!("{}{key}={value}\n", cfg.text);
        config::parse_config(&candidate).map_err(config_err)?;
        cfg.text = candidate;
        Ok(())
    })
}

/// Replace the configuration with the contents of a config file (the same
/// format the CLI reads). On failure the configuration is left unchanged.
///
/// # Safety
/// `cfg` must be a live pointer from `carp_config_new`; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn carp_config_load_file(
    cfg: *mut CarpConfig,
    path: *const c_char,
) -> CarpStatus {
    ffi_status(|| {
        let cfg = unsafe { deref_mut(cfg, "cfg") }?;
        let path = unsafe { utf8(path, "path") }?;
        let mut text = std::fs::read_to_string(path).map_err(|e| {
            set_last_error(&format!("cannot read {path}: {e}"));
            CarpStatus::RunFailed
        })?;
        config::parse_config(&text).map_err(config_err)?;
        // Later carp_config_set calls append lines; a trailing newline keeps
        // them from gluing onto the file's last line.
        if !text.ends_with('\n') && !text.is_empty() {
            text.push('\n');
        }
        cfg.text = text;
        Ok(())
    })
}

/// Render the fully resolved configuration (defaults plus every override)
/// as the same key=value text the CLI writes to resolved-config.txt.
/// Returns a heap string to release with `carp_string_free`, or null on
/// failure.
///
/// # Safety
/// `cfg` must be a live pointer from `carp_config_new`.
#[no_mangle]
pub unsafe extern "C" fn carp_config_render(cfg: *const CarpConfig) -> *mut c_char {
    ffi_ptr(|| {
        let cfg = unsafe { deref(cfg, "cfg") }?;
        let run = config::parse_config(&cfg.text).map_err(config_err)?;
        let rendered = config::render_config(&run);
        let c = CString::new(rendered).map_err(|_| {
            set_last_error("rendered config contains a NUL byte");
            CarpStatus::Panic
        })?;
        Ok(c.into_raw())
    })
}

/// Free a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer returned by a `carp_*` call that
/// documents `carp_string_free`, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Train with the given configuration and write the artifact set into
/// `out_dir` (created if needed): metrics.jsonl, student.ckpt,
/// teacher.ckpt, resolved-config.txt, plus eval.jsonl when eval_every > 0.
/// Identical configurations produce byte-identical artifacts.
///
/// # Safety
/// `cfg` must be a live pointer from `carp_config_new`; `out_dir` must be
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn carp_train(
    cfg: *const CarpConfig,
    out_dir: *const c_char,
) -> CarpStatus {
    ffi_status(|| {
        let cfg = unsafe { deref(cfg, "cfg") }?;
        let out_dir = unsafe { utf8(out_dir, "out_dir") }?;
        let run = config::parse_config(&cfg.text).map_err(config_err)?;
        run.validate().map_err(config_err)?;
        let dataset = cli::build_dataset(&run).map_err(config_err)?;
        cli::run_training(&run, &dataset, Path::new(out_dir)).map_err(run_err)?;
        Ok(())
    })
}

/// Load a model from a checkpoint written by `carp_train` or the CLI
/// (student.ckpt / teacher.ckpt). Returns null on failure; see
/// `carp_last_error`. Free with `carp_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn carp_model_load(path: *const c_char) -> *mut CarpModel {
    ffi_ptr(|| {
        let path = unsafe { utf8(path, "path") }?;
        let params = checkpoint::load_model(Path::new(path)).map_err(run_err)?;
        Ok(Box::into_raw(Box::new(CarpModel { params })))
    })
}

/// Free a model. Null is a no-op.
///
/// # Safety
/// `model` must be null or a live pointer from `carp_model_load`, and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carp_model_free(model: *mut CarpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension the model expects, or 0 when `model` is null.
///
/// # Safety
/// `model` must be null or a live pointer from `carp_model_load`.
#[no_mangle]
pub unsafe extern "C" fn carp_model_input_dim(model: *const CarpModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.input_dim())
}

/// Dimension of the embeddings the model produces, or 0 when `model` is
/// null.
///
/// # Safety
/// `model` must be null or a live pointer from `carp_model_load`.
#[no_mangle]
pub unsafe extern "C" fn carp_model_embedding_dim(model: *const CarpModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.embedding_dim())
}

/// Embed `rows` samples of `cols` features each (row-major doubles) and
/// write `rows * carp_model_embedding_dim(model)` doubles to `out`,
/// row-major. Rows are l2-normalized, so dot products of outputs are
/// cosine similarities. `cols` must equal `carp_model_input_dim(model)`.
///
/// # Safety
/// `model` must be a live pointer from `carp_model_load`. Unless
/// `rows == 0`, `samples` must point at `rows * cols` readable doubles and
/// `out` at `rows * carp_model_embedding_dim(model)` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn carp_model_embed(
    model: *const CarpModel,
    samples: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> CarpStatus {
    ffi_status(|| {
        let model = unsafe { deref(model, "model") }?;
        if rows == 0 {
            return Ok(());
        }
        if cols != model.params.input_dim() {
            set_last_error(&format!(
                "model expects {}-dimensional inputs but cols is {cols}",
                model.params.input_dim()
            ));
            return Err(CarpStatus::InvalidArgument);
        }
        let in_len = rows.checked_mul(cols).ok_or_else(|| {
            set_last_error("rows * cols overflows");
            CarpStatus::InvalidArgument
        })?;
        if samples.is_null() || out.is_null() {
            set_last_error("samples or out is null");
            return Err(CarpStatus::NullArgument);
        }
        let data = unsafe { std::slice::from_raw_parts(samples, in_len) }.to_vec();
        let features = embed(&model.params, &Matrix::from_vec(rows, cols, data));
        let out_len = rows * model.params.embedding_dim();
        unsafe { std::slice::from_raw_parts_mut(out, out_len) }
            .copy_from_slice(features.data());
        Ok(())
    })
}

/// Leave-one-out k-NN accuracy of the model's embeddings on a labeled
/// sample set: each sample is classified by its k nearest neighbors
/// (cosine similarity, exp(sim/tau) vote weights) among the other rows,
/// and the fraction classified correctly is written to `out_accuracy`.
///
/// # Safety
/// `model` must be a live pointer from `carp_model_load`; `samples` must
/// point at `rows * cols` readable doubles, `labels` at `rows` readable
/// 32-bit labels, and `out_accuracy` at one writable double.
#[no_mangle]
pub unsafe extern "C" fn carp_knn_accuracy(
    model: *const CarpModel,
    samples: *const f64,
    labels: *const u32,
    rows: usize,
    cols: usize,
    k: usize,
    tau: f64,
    out_accuracy: *mut f64,
) -> CarpStatus {
    ffi_status(|| {
        let model = unsafe { deref(model, "model") }?;
        if cols != model.params.input_dim() {
            set_last_error(&format!(
                "model expects {}-dimensional inputs but cols is {cols}",
                model.params.input_dim()
            ));
            return Err(CarpStatus::InvalidArgument);
        }
        let in_len = rows.checked_mul(cols).ok_or_else(|| {
            set_last_error("rows * cols overflows");
            CarpStatus::InvalidArgument
        })?;
        if samples.is_null() || labels.is_null() || out_accuracy.is_null() {
            set_last_error("samples, labels, or out_accuracy is null");
            return Err(CarpStatus::NullArgument);
        }
        let data = unsafe { std::slice::from_raw_parts(samples, in_len) }.to_vec();
        let labels = unsafe { std::slice::from_raw_parts(labels, rows) }
            .iter()
            .map(|&l| l as usize)
            .collect();
        let features = embed(&model.params, &Matrix::from_vec(rows, cols, data));
        let bank = EmbeddingBank::new(features, labels).map_err(run_err)?;
        let accuracy = knn_accuracy_loo(&bank, k, tau).map_err(run_err)?;
        unsafe { out_accuracy.write(accuracy) };
        Ok(())
    })
}
