//! C ABI over the `dualstudent` crate.
//!
//! Every fallible call returns a [`DsStatus`]; on failure the message is
//! available from [`ds_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `*_free`.
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with [`ds_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dualstudent::cli::{apply_override, fmt_f64, ExperimentFile};
use dualstudent::ssl;
use dualstudent::trainers::RunResult;
use dualstudent::Error;

/// Status codes. Values are stable across releases.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    Config = 1,
    Numeric = 2,
    Io = 3,
    Shape = 4,
    Input = 5,
    State = 6,
    NullPointer = 7,
    Utf8 = 8,
    Panic = 9,
}

/// An experiment description (data, model, train and analysis sections).
pub struct DsConfig(ExperimentFile);

/// The result of one training run.
pub struct DsRun(RunResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::Shape(_) => DsStatus::Shape,
        Error::Input(_) => DsStatus::Input,
        Error::Config(_) => DsStatus::Config,
        Error::State(_) => DsStatus::State,
        Error::Numeric { .. } | Error::Gradcheck(_) => DsStatus::Numeric,
        Error::Io { .. } => DsStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DsStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            DsStatus::NullPointer
        }
        Ok(Err(Fail::Utf8(what))) => {
            set_error(&format!("{what} is not valid UTF-8"));
            DsStatus::Utf8
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            DsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn read_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(what))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `ds_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A configuration with every key at its default.
#[no_mangle]
pub extern "C" fn ds_config_default() -> *mut DsConfig {
    Box::into_raw(Box::new(DsConfig(ExperimentFile::default())))
}

/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_config_from_toml(toml: *const c_char, out: *mut *mut DsConfig) -> DsStatus {
    guard(|| {
        let text = read_str(toml, "toml")?;
        let file = ExperimentFile::from_toml(text)?;
        write_out(out, Box::into_raw(Box::new(DsConfig(file))), "out")
    })
}

/// Applies one `section.key=value` override. On failure the configuration
/// is left unchanged.
///
/// # Safety
/// `cfg` must be a live handle and `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ds_config_set(cfg: *mut DsConfig, assignment: *const c_char) -> DsStatus {
    guard(|| {
        let cfg = borrow_mut(cfg, "cfg")?;
        let set = read_str(assignment, "assignment")?;
        let mut table: toml::Table =
            toml::from_str(&cfg.0.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        apply_override(&mut table, set)?;
        let file: ExperimentFile = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().into()))?;
        cfg.0 = file;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_config_to_toml(cfg: *const DsConfig, out: *mut *mut c_char) -> DsStatus {
    guard(|| {
        let cfg = borrow(cfg, "cfg")?;
        write_out(out, to_c_string(cfg.0.to_toml()), "out")
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_config_free(cfg: *mut DsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generates the datasets described by `cfg` and trains to completion.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_train(cfg: *const DsConfig, out: *mut *mut DsRun) -> DsStatus {
    guard(|| {
        let cfg = borrow(cfg, "cfg")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let (result, _) = cfg.0.run(None)?;
        write_out(out, Box::into_raw(Box::new(DsRun(result))), "out")
    })
}

/// Headline test accuracy after the last epoch.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_run_final_accuracy(run: *const DsRun, out: *mut f64) -> DsStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        write_out(out, run.0.final_accuracy(), "out")
    })
}

/// Number of metric rows recorded by the run.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_run_metric_count(run: *const DsRun, out: *mut usize) -> DsStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        write_out(out, run.0.metrics.len(), "out")
    })
}

/// All metric rows as CSV with header `run_id,method,seed,epoch,metric,value`.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_run_metrics_csv(run: *const DsRun, out: *mut *mut c_char) -> DsStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        let mut s = String::from("run_id,method,seed,epoch,metric,value\n");
        for m in &run.0.metrics {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.run_id,
                m.method,
                m.seed,
                m.epoch,
                m.metric,
                fmt_f64(m.value)
            ));
        }
        write_out(out, to_c_string(s), "out")
    })
}

/// # Safety
/// `run` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_run_free(run: *mut DsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

unsafe fn prob_rows<'a>(px: *const f64, pxb: *const f64, n: usize) -> Result<(&'a [f64], &'a [f64]), Fail> {
    if px.is_null() {
        return Err(Fail::Null("probs_x"));
    }
    if pxb.is_null() {
        return Err(Fail::Null("probs_xbar"));
    }
    if n == 0 {
        return Err(Error::Input("probability rows must be non-empty".into()).into());
    }
    Ok((std::slice::from_raw_parts(px, n), std::slice::from_raw_parts(pxb, n)))
}

/// Whether one sample is stable for a student: the same class is predicted
/// on both views and at least one view is more confident than `xi`.
///
/// # Safety
/// `probs_x` and `probs_xbar` must each point to `n_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_stable_flag(
    probs_x: *const f64,
    probs_xbar: *const f64,
    n_classes: usize,
    xi: f64,
    out: *mut bool,
) -> DsStatus {
    guard(|| {
        let (a, b) = prob_rows(probs_x, probs_xbar, n_classes)?;
        write_out(out, ssl::stable_flag(a, b, xi), "out")
    })
}

/// Squared distance between the two views' predictions.
///
/// # Safety
/// `probs_x` and `probs_xbar` must each point to `n_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_stability_score(
    probs_x: *const f64,
    probs_xbar: *const f64,
    n_classes: usize,
    out: *mut f64,
) -> DsStatus {
    guard(|| {
        let (a, b) = prob_rows(probs_x, probs_xbar, n_classes)?;
        write_out(out, ssl::stability_score(a, b), "out")
    })
}
