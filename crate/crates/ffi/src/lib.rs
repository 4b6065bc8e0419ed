//! C ABI over the simulator.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free` function. Every fallible call returns a
//! [`FedaaStatus`] and records a message readable through
//! [`fedaa_last_error`] on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fedaa::config::parse_config;
use fedaa::nn::{ArchSpec, OutputHead};
use fedaa::output::{emit_results, Format};
use fedaa::{run_experiment, run_fedavg_baseline, ExperimentConfig, FedError, RoundRecord};

/// Result code of every fallible call. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedaaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Parse = 4,
    Numeric = 5,
    Ingest = 6,
    Simulation = 7,
    Io = 8,
    OutOfRange = 9,
    Internal = 10,
    Panic = 11,
}

/// Per-round scalar exposed by [`fedaa_run_metric`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedaaMetric {
    Reward = 0,
    MeanBenignAcc = 1,
    AccStd = 2,
    AccVar = 3,
    LossStd = 4,
    GlobalAccMean = 5,
    MaliciousSelected = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedaaFormat {
    Csv = 0,
    Json = 1,
}

/// Parsed experiment configuration.
pub struct FedaaConfig {
    inner: ExperimentConfig,
}

/// Completed run: one record per round.
pub struct FedaaRun {
    records: Vec<RoundRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &FedError) -> FedaaStatus {
    match err.kind() {
        "config" => FedaaStatus::Config,
        "parse" => FedaaStatus::Parse,
        "numeric" => FedaaStatus::Numeric,
        "ingest" => FedaaStatus::Ingest,
        "simulation" => FedaaStatus::Simulation,
        "io" => FedaaStatus::Io,
        _ => FedaaStatus::Internal,
    }
}

struct Fail(FedaaStatus, String);

impl From<FedError> for Fail {
    fn from(e: FedError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FedaaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FedaaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {msg}"));
            FedaaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(FedaaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FedaaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(FedaaStatus::NullPointer, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(FedaaStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn record_at(run: &FedaaRun, round: usize) -> Result<&RoundRecord, Fail> {
    run.records.get(round).ok_or_else(|| {
        Fail(
            FedaaStatus::OutOfRange,
            format!("round {round} out of range ({} rounds)", run.records.len()),
        )
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fedaa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_config_parse_str(text: *const c_char, out: *mut *mut FedaaConfig) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let inner = ExperimentConfig::from_text(text)?;
        *out = Box::into_raw(Box::new(FedaaConfig { inner }));
        Ok(())
    })
}

/// Parses a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_config_parse_file(path: *const c_char, out: *mut *mut FedaaConfig) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = parse_config(Path::new(path))?;
        *out = Box::into_raw(Box::new(FedaaConfig { inner }));
        Ok(())
    })
}

/// Overrides one key. On failure the configuration is left unchanged.
///
/// # Safety
/// `config` must come from a parse call; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fedaa_config_set(
    config: *mut FedaaConfig,
    key: *const c_char,
    value: *const c_char,
) -> FedaaStatus {
    guard(|| {
        let cfg = config
            .as_mut()
            .ok_or_else(|| Fail(FedaaStatus::NullPointer, "config is null".into()))?;
        let pair = (str_arg(key, "key")?.to_string(), str_arg(value, "value")?.to_string());
        cfg.inner = cfg.inner.with_overrides(&[pair])?;
        Ok(())
    })
}

/// Canonical text of the configuration. Free the result with [`fedaa_string_free`].
///
/// # Safety
/// `config` must come from a parse call; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_config_to_text(config: *const FedaaConfig, out: *mut *mut c_char) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = ref_arg(config, "config")?;
        let text = CString::new(cfg.inner.to_text()).map_err(|e| Fail(FedaaStatus::Internal, e.to_string()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `config` must come from a parse call or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedaa_config_free(config: *mut FedaaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fedaa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the experiment with the configured aggregator.
///
/// # Safety
/// `config` must come from a parse call; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run(config: *const FedaaConfig, out: *mut *mut FedaaRun) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let records = run_experiment(&ref_arg(config, "config")?.inner)?;
        *out = Box::into_raw(Box::new(FedaaRun { records }));
        Ok(())
    })
}

/// Runs the size-weighted averaging baseline on the same configuration.
///
/// # Safety
/// `config` must come from a parse call; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run_fedavg(config: *const FedaaConfig, out: *mut *mut FedaaRun) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let records = run_fedavg_baseline(&ref_arg(config, "config")?.inner)?;
        *out = Box::into_raw(Box::new(FedaaRun { records }));
        Ok(())
    })
}

/// Number of rounds in the run; zero for null.
///
/// # Safety
/// `run` must come from a run call or be null.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run_rounds(run: *const FedaaRun) -> usize {
    run.as_ref().map_or(0, |r| r.records.len())
}

/// # Safety
/// `run` must come from a run call; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run_metric(
    run: *const FedaaRun,
    round: usize,
    metric: FedaaMetric,
    out: *mut f64,
) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let r = record_at(ref_arg(run, "run")?, round)?;
        *out = match metric {
            FedaaMetric::Reward => r.reward,
            FedaaMetric::MeanBenignAcc => r.mean_benign_acc,
            FedaaMetric::AccStd => r.acc_std,
            FedaaMetric::AccVar => r.acc_var,
            FedaaMetric::LossStd => r.loss_std,
            FedaaMetric::GlobalAccMean => r.global_acc_mean,
            FedaaMetric::MaliciousSelected => r.malicious_selected as f64,
        };
        Ok(())
    })
}

/// Copies up to `capacity` selected ids and their weights of `round`.
/// `len` receives the full count; either buffer may be null to query it.
///
/// # Safety
/// Non-null `ids` and `weights` must hold `capacity` elements; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run_selection(
    run: *const FedaaRun,
    round: usize,
    ids: *mut usize,
    weights: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> FedaaStatus {
    guard(|| {
        out_arg(len, "len")?;
        let r = record_at(ref_arg(run, "run")?, round)?;
        *len = r.selected_ids.len();
        let n = capacity.min(r.selected_ids.len());
        if !ids.is_null() {
            ptr::copy_nonoverlapping(r.selected_ids.as_ptr(), ids, n);
        }
        if !weights.is_null() {
            ptr::copy_nonoverlapping(r.action.as_ptr(), weights, n);
        }
        Ok(())
    })
}

/// Writes the per-round records.
///
/// # Safety
/// `run` must come from a run call; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run_write(run: *const FedaaRun, path: *const c_char, format: FedaaFormat) -> FedaaStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let path = str_arg(path, "path")?;
        let format = match format {
            FedaaFormat::Csv => Format::Csv,
            FedaaFormat::Json => Format::Json,
        };
        emit_results(&run.records, Path::new(path), format)?;
        Ok(())
    })
}

/// # Safety
/// `run` must come from a run call or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedaa_run_free(run: *mut FedaaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Parameter count of a fully connected network with the given widths.
///
/// # Safety
/// `hidden` must hold `num_hidden` elements (may be null when zero); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedaa_param_count(
    input: usize,
    hidden: *const usize,
    num_hidden: usize,
    output: usize,
    out: *mut usize,
) -> FedaaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let hidden = match (hidden.is_null(), num_hidden) {
            (_, 0) => Vec::new(),
            (true, _) => return Err(Fail(FedaaStatus::NullPointer, "hidden is null".into())),
            (false, n) => std::slice::from_raw_parts(hidden, n).to_vec(),
        };
        *out = ArchSpec::new(input, hidden, output, OutputHead::Logits)?.param_count();
        Ok(())
    })
}
