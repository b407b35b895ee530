//! C ABI over the genifer core: the adaptive distillation coefficient, task
//! partitioning, the scalar losses and metrics, and run records.
//!
//! Every function returns a `GeniferStatus`. On failure the message is kept
//! per thread and read with `genifer_last_error`. Handles are opaque and
//! released with their `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use genifer::adaptive_coeff::{AdaptiveCoefState, AdaptiveConfig};
use genifer::autograd::{Array, Tensor};
use genifer::losses;
use genifer::metrics;
use genifer::task_stream::{build_task_sequence, TaskSequence};
use genifer::trainer::RunRecord;
use genifer::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeniferStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Shape = 3,
    Range = 4,
    Numeric = 5,
    Contract = 6,
    State = 7,
    Io = 8,
    Format = 9,
    InvalidUtf8 = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for GeniferStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => GeniferStatus::Config,
            Error::Shape(_) => GeniferStatus::Shape,
            Error::Range(_) => GeniferStatus::Range,
            Error::Numeric(_) => GeniferStatus::Numeric,
            Error::Contract(_) => GeniferStatus::Contract,
            Error::State(_) => GeniferStatus::State,
            Error::Io { .. } => GeniferStatus::Io,
            Error::Format(_) => GeniferStatus::Format,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(GeniferStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(GeniferStatus::from(&e), e.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> GeniferStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GeniferStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GeniferStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(GeniferStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Array, Fail> {
    Array::from_shape_vec(vec![rows, cols], data.to_vec())
        .map_err(|e| Fail(GeniferStatus::Shape, e.to_string()))
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Fail> {
    rows.checked_mul(cols)
        .ok_or_else(|| Fail(GeniferStatus::Range, "matrix size overflows".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn genifer_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn genifer_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Adaptive distillation-coefficient controller.
pub struct GeniferCoef {
    inner: AdaptiveCoefState,
}

/// Configuration of the coefficient controller, mirrored for C.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GeniferCoefConfig {
    pub enabled: bool,
    pub rho_target: f64,
    pub interval: usize,
    pub scale: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
}

impl From<GeniferCoefConfig> for AdaptiveConfig {
    fn from(c: GeniferCoefConfig) -> Self {
        AdaptiveConfig {
            enabled: c.enabled,
            rho_target: c.rho_target,
            interval: c.interval,
            scale: c.scale,
            lambda_init: c.lambda_init,
            lambda_max: c.lambda_max,
        }
    }
}

/// Fills `config` with the defaults.
///
/// # Safety
/// `config` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_coef_config_default(config: *mut GeniferCoefConfig) -> GeniferStatus {
    guard(|| {
        let d = AdaptiveConfig::default();
        *out(config, "config")? = GeniferCoefConfig {
            enabled: d.enabled,
            rho_target: d.rho_target,
            interval: d.interval,
            scale: d.scale,
            lambda_init: d.lambda_init,
            lambda_max: d.lambda_max,
        };
        Ok(())
    })
}

/// # Safety
/// `out_handle` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_coef_new(config: GeniferCoefConfig, out_handle: *mut *mut GeniferCoef) -> GeniferStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let inner = AdaptiveCoefState::new(config.into())?;
        *slot = Box::into_raw(Box::new(GeniferCoef { inner }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a pointer from `genifer_coef_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn genifer_coef_free(handle: *mut GeniferCoef) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Records one batch and applies an update when the interval completes.
/// `updated` (optional) receives whether an update step ran.
///
/// # Safety
/// `handle` must be a live handle; `updated` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_coef_record_batch(
    handle: *mut GeniferCoef,
    loss_curr: f64,
    loss_od: f64,
    updated: *mut bool,
) -> GeniferStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        if !loss_curr.is_finite() || !loss_od.is_finite() {
            return Err(Fail(GeniferStatus::Numeric, "losses must be finite".into()));
        }
        h.inner.record_batch(loss_curr, loss_od);
        let u = h.inner.maybe_update().is_some();
        if let Some(flag) = updated.as_mut() {
            *flag = u;
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must be a live handle; `lambda` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_coef_lambda(handle: *const GeniferCoef, lambda: *mut f64) -> GeniferStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(lambda, "lambda")? = h.inner.lambda();
        Ok(())
    })
}

/// Clears the ratio window and batch counter, keeping the coefficient.
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genifer_coef_start_task(handle: *mut GeniferCoef) -> GeniferStatus {
    guard(|| {
        out(handle, "handle")?.inner.start_task();
        Ok(())
    })
}

/// Task partition of a class set.
pub struct GeniferTasks {
    inner: TaskSequence,
}

/// # Safety
/// `out_handle` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_tasks_new(
    class_count: usize,
    first_task_size: usize,
    classes_per_task: usize,
    seed: u64,
    out_handle: *mut *mut GeniferTasks,
) -> GeniferStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let inner = build_task_sequence(class_count, first_task_size, classes_per_task, seed)?;
        *slot = Box::into_raw(Box::new(GeniferTasks { inner }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a pointer from `genifer_tasks_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn genifer_tasks_free(handle: *mut GeniferTasks) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live handle; `count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_tasks_count(handle: *const GeniferTasks, count: *mut usize) -> GeniferStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(count, "count")? = h.inner.num_tasks();
        Ok(())
    })
}

/// Copies the classes of 1-based task `task` into `buf`. `len` receives the
/// class count; with a null `buf` only the count is written.
///
/// # Safety
/// `handle` must be a live handle; `buf` null or valid for `cap` writes;
/// `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_tasks_classes(
    handle: *const GeniferTasks,
    task: usize,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> GeniferStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let len = out(len, "len")?;
        let classes = h.inner.classes(task)?;
        *len = classes.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < classes.len() {
            return Err(Fail(
                GeniferStatus::BufferTooSmall,
                format!("task {task} has {} classes, buffer holds {cap}", classes.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, classes.len()).copy_from_slice(classes);
        Ok(())
    })
}

/// Output-distillation loss between row-major `old_logits` (`batch × k`)
/// and `new_logits` (`batch × (k + l)`).
///
/// # Safety
/// The logit pointers must be valid for the given sizes; `loss` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_output_distillation_loss(
    old_logits: *const f64,
    new_logits: *const f64,
    batch: usize,
    k: usize,
    l: usize,
    loss: *mut f64,
) -> GeniferStatus {
    guard(|| {
        let loss = out(loss, "loss")?;
        let kl = k.checked_add(l).ok_or_else(|| Fail(GeniferStatus::Range, "k + l overflows".into()))?;
        let old = matrix(slice(old_logits, checked_len(batch, k)?, "old_logits")?, batch, k)?;
        let new = matrix(slice(new_logits, checked_len(batch, kl)?, "new_logits")?, batch, kl)?;
        *loss = losses::output_distillation_loss(&Tensor::constant(old), &Tensor::constant(new))?.item();
        Ok(())
    })
}

/// Mean cross-entropy of row-major `logits` (`batch × k`) against logit
/// indices `labels`.
///
/// # Safety
/// `logits` valid for `batch × k` reads, `labels` for `batch` reads; `loss`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_current_task_loss(
    logits: *const f64,
    labels: *const usize,
    batch: usize,
    k: usize,
    loss: *mut f64,
) -> GeniferStatus {
    guard(|| {
        let loss = out(loss, "loss")?;
        let x = matrix(slice(logits, checked_len(batch, k)?, "logits")?, batch, k)?;
        let y = slice(labels, batch, "labels")?;
        *loss = losses::current_task_loss(&Tensor::constant(x), y)?.item();
        Ok(())
    })
}

/// Row-wise softmax of `logits` (`batch × k`) into `probs`.
///
/// # Safety
/// `logits` valid for `batch × k` reads, `probs` for as many writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_softmax(logits: *const f64, batch: usize, k: usize, probs: *mut f64) -> GeniferStatus {
    guard(|| {
        let n = checked_len(batch, k)?;
        let x = matrix(slice(logits, n, "logits")?, batch, k)?;
        let p = losses::softmax_probs(&x)?;
        if n > 0 {
            if probs.is_null() {
                return Err(null("probs"));
            }
            let dst = std::slice::from_raw_parts_mut(probs, n);
            for (d, s) in dst.iter_mut().zip(p.iter()) {
                *d = *s;
            }
        }
        Ok(())
    })
}

/// Mean of `trace[1..]`, the overall accuracies after tasks 2..T.
///
/// # Safety
/// `trace` valid for `len` reads; `alpha` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_average_incremental_accuracy(
    trace: *const f64,
    len: usize,
    alpha: *mut f64,
) -> GeniferStatus {
    guard(|| {
        let alpha = out(alpha, "alpha")?;
        *alpha = metrics::average_incremental_accuracy(slice(trace, len, "trace")?)?;
        Ok(())
    })
}

/// A run record read from a `run.json` file.
pub struct GeniferRunRecord {
    inner: RunRecord,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out_handle` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_run_record_load(path: *const c_char, out_handle: *mut *mut GeniferRunRecord) -> GeniferStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Fail(GeniferStatus::InvalidUtf8, e.to_string()))?;
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(Path::new(p), e))?;
        let inner: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        *slot = Box::into_raw(Box::new(GeniferRunRecord { inner }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a pointer from `genifer_run_record_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn genifer_run_record_free(handle: *mut GeniferRunRecord) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of completed tasks in the record.
///
/// # Safety
/// `handle` must be a live handle; `count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_run_record_task_count(handle: *const GeniferRunRecord, count: *mut usize) -> GeniferStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(count, "count")? = h.inner.tasks.len();
        Ok(())
    })
}

/// Overall accuracy after 1-based task `task`.
///
/// # Safety
/// `handle` must be a live handle; `alpha` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_run_record_alpha_t(
    handle: *const GeniferRunRecord,
    task: usize,
    alpha: *mut f64,
) -> GeniferStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let alpha = out(alpha, "alpha")?;
        let t = task
            .checked_sub(1)
            .and_then(|i| h.inner.tasks.get(i))
            .ok_or_else(|| Fail(GeniferStatus::Range, format!("task {task} not in record of {}", h.inner.tasks.len())))?;
        *alpha = t.alpha_all_t;
        Ok(())
    })
}

/// Average incremental accuracy of a finished run.
///
/// # Safety
/// `handle` must be a live handle; `alpha` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn genifer_run_record_alpha_all(handle: *const GeniferRunRecord, alpha: *mut f64) -> GeniferStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let alpha = out(alpha, "alpha")?;
        *alpha = h
            .inner
            .alpha_all
            .ok_or_else(|| Fail(GeniferStatus::State, "run is unfinished or has a single task".into()))?;
        Ok(())
    })
}
