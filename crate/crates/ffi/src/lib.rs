//! C ABI over the mrcap harness.
//!
//! Every fallible call returns an [`MrcapStatus`]. On failure the message is
//! kept per thread and can be read with [`mrcap_last_error`]. Objects are
//! opaque handles owned by the caller and released with their `_free`
//! function. Strings handed out by the library are released with
//! [`mrcap_string_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mrcap::dataset::DatasetSpec;
use mrcap::experiment::results::read_results_file;
use mrcap::experiment::summary::{render_table, summarize};
use mrcap::experiment::{run_matrix, ExperimentConfig};
use mrcap::miniapps::{run_app, AppRun, MiniApp};
use mrcap::power::rapl::wrap_delta;
use mrcap::power::sim::{PerStage, SimPowerModel, Stage};
use mrcap::power::{integrate_energy, PowerDomain, PowerLimit, PowerTrace};
use mrcap::runtime::{fnv1a64, partition};
use mrcap::Error;

pub const MRCAP_APP_MAP_SHUFFLE: u32 = 0;
pub const MRCAP_APP_GROUP_BY_KEY: u32 = 1;
pub const MRCAP_APP_REDUCE_BY_KEY: u32 = 2;

pub const MRCAP_DOMAIN_PROCESSOR: u32 = 0;
pub const MRCAP_DOMAIN_DRAM: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrcapStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Usage = 3,
    Capability = 4,
    Io = 5,
    Internal = 6,
    NullPointer = 7,
}

/// Counters and stage times of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MrcapMetrics {
    pub map_ms: f64,
    pub shuffle_ms: f64,
    pub reduce_ms: f64,
    pub map_kv_count: u64,
    pub shuffle_kv_count: u64,
    pub shuffle_bytes: u64,
    pub flush_count: u64,
    pub avg_buffer_fill_ratio: f64,
    pub reduce_kv_count: u64,
    pub delivered_kvs: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MrcapEnergy {
    pub processor_j: f64,
    pub dram_j: f64,
    pub total_j: f64,
    pub runtime_ms: f64,
    pub dram_fraction: f64,
}

/// Result of [`mrcap_run_app`].
pub struct MrcapRunResult {
    run: AppRun,
}

/// A power trace being assembled sample by sample.
pub struct MrcapTrace {
    trace: PowerTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MrcapStatus, message: impl Into<String>) -> MrcapStatus {
    set_last_error(message.into());
    status
}

fn status_of(err: &Error) -> MrcapStatus {
    match err {
        Error::Config(_) => MrcapStatus::Config,
        Error::Usage(_) => MrcapStatus::Usage,
        Error::Capability { .. } => MrcapStatus::Capability,
        Error::Io { .. } | Error::Csv(_) | Error::Parse(_) => MrcapStatus::Io,
        Error::Invariant(_) => MrcapStatus::Internal,
    }
}

/// Runs `body`, turning errors and panics into a status plus message.
fn guard(body: impl FnOnce() -> Result<(), MrcapStatus>) -> MrcapStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MrcapStatus::Ok,
        Ok(Err(status)) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(MrcapStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

fn lib(err: Error) -> MrcapStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), MrcapStatus> {
    if p.is_null() {
        Err(fail(MrcapStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, MrcapStatus> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MrcapStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, name: &str) -> Result<&'a [u8], MrcapStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn app_arg(app: u32) -> Result<MiniApp, MrcapStatus> {
    match app {
        MRCAP_APP_MAP_SHUFFLE => Ok(MiniApp::MapShuffle),
        MRCAP_APP_GROUP_BY_KEY => Ok(MiniApp::GroupByKey),
        MRCAP_APP_REDUCE_BY_KEY => Ok(MiniApp::ReduceByKey),
        other => Err(fail(
            MrcapStatus::InvalidArgument,
            format!("unknown app {other}"),
        )),
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, MrcapStatus> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(MrcapStatus::Internal, "string contains NUL"))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next mrcap call on the same thread.
#[no_mangle]
pub extern "C" fn mrcap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrcap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mrcap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `key` must point to `len` readable bytes (or be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn mrcap_fnv1a64(key: *const u8, len: usize) -> u64 {
    match bytes_arg(key, len, "key") {
        Ok(bytes) => fnv1a64(bytes),
        Err(_) => 0,
    }
}

/// Destination rank of `key` among `num_ranks` ranks.
///
/// # Safety
/// `key` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcap_partition(
    key: *const u8,
    len: usize,
    num_ranks: u32,
    out: *mut u32,
) -> MrcapStatus {
    guard(|| {
        let key = bytes_arg(key, len, "key")?;
        non_null(out, "out")?;
        if num_ranks == 0 {
            return Err(fail(
                MrcapStatus::InvalidArgument,
                "num_ranks must be at least 1",
            ));
        }
        *out = partition(key, num_ranks as usize) as u32;
        Ok(())
    })
}

/// Generates the dataset and runs one mini-app on it.
///
/// # Safety
/// `out` must be writable. On success `*out` owns a result that must be
/// released with [`mrcap_run_result_free`].
#[no_mangle]
pub unsafe extern "C" fn mrcap_run_app(
    app: u32,
    total_words: u64,
    unique_words: u64,
    seed: u64,
    num_ranks: u32,
    buffer_kvs: u32,
    out: *mut *mut MrcapRunResult,
) -> MrcapStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let app = app_arg(app)?;
        let spec = DatasetSpec::new(total_words, unique_words, seed);
        let run = run_app(app, &spec, num_ranks as usize, buffer_kvs as usize).map_err(lib)?;
        *out = Box::into_raw(Box::new(MrcapRunResult { run }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcap_run_result_metrics(
    result: *const MrcapRunResult,
    out: *mut MrcapMetrics,
) -> MrcapStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let run = &(*result).run;
        let m = &run.metrics;
        *out = MrcapMetrics {
            map_ms: m.map_ms,
            shuffle_ms: m.shuffle_ms,
            reduce_ms: m.reduce_ms,
            map_kv_count: m.map_kv_count,
            shuffle_kv_count: m.shuffle_kv_count,
            shuffle_bytes: m.shuffle_bytes,
            flush_count: m.flush_count,
            avg_buffer_fill_ratio: m.avg_buffer_fill_ratio,
            reduce_kv_count: m.reduce_kv_count,
            delivered_kvs: run.delivered_kvs,
        };
        Ok(())
    })
}

fn counts(result: &MrcapRunResult) -> Result<&HashMap<Vec<u8>, u64>, MrcapStatus> {
    result.run.counts.as_ref().ok_or_else(|| {
        fail(
            MrcapStatus::InvalidArgument,
            "map_shuffle runs have no counts",
        )
    })
}

/// Number of distinct words in the result.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcap_run_result_distinct(
    result: *const MrcapRunResult,
    out: *mut u64,
) -> MrcapStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        *out = counts(&*result)?.len() as u64;
        Ok(())
    })
}

/// Count of `word`, zero if it never occurred.
///
/// # Safety
/// `result` must be a live handle, `word` must point to `len` readable
/// bytes, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcap_run_result_count(
    result: *const MrcapRunResult,
    word: *const u8,
    len: usize,
    out: *mut u64,
) -> MrcapStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let word = bytes_arg(word, len, "word")?;
        *out = counts(&*result)?.get(word).copied().unwrap_or(0);
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle from [`mrcap_run_app`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrcap_run_result_free(result: *mut MrcapRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// New empty trace sampled every `interval_ms`. Returns NULL if the interval is 0.
#[no_mangle]
pub extern "C" fn mrcap_trace_new(interval_ms: u64) -> *mut MrcapTrace {
    if interval_ms == 0 {
        set_last_error("interval_ms must be positive".into());
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(MrcapTrace {
        trace: PowerTrace::new(interval_ms),
    }))
}

/// Appends one sample. Times must increase per domain.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mrcap_trace_push(
    trace: *mut MrcapTrace,
    t_ms: u64,
    domain: u32,
    watts: f64,
) -> MrcapStatus {
    guard(|| {
        non_null(trace, "trace")?;
        let domain = match domain {
            MRCAP_DOMAIN_PROCESSOR => PowerDomain::Processor,
            MRCAP_DOMAIN_DRAM => PowerDomain::Dram,
            other => {
                return Err(fail(
                    MrcapStatus::InvalidArgument,
                    format!("unknown domain {other}"),
                ))
            }
        };
        if !(watts.is_finite() && watts >= 0.0) {
            return Err(fail(
                MrcapStatus::InvalidArgument,
                format!("invalid power {watts}"),
            ));
        }
        let t = &mut (*trace).trace;
        if t.domain(domain).last().is_some_and(|s| s.t_ms >= t_ms) {
            return Err(fail(
                MrcapStatus::InvalidArgument,
                format!("{domain} sample at {t_ms} ms is out of order"),
            ));
        }
        t.push(t_ms, domain, watts);
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcap_trace_integrate(
    trace: *const MrcapTrace,
    out: *mut MrcapEnergy,
) -> MrcapStatus {
    guard(|| {
        non_null(trace, "trace")?;
        non_null(out, "out")?;
        let e = integrate_energy(&(*trace).trace);
        *out = MrcapEnergy {
            processor_j: e.processor_j,
            dram_j: e.dram_j,
            total_j: e.total_j,
            runtime_ms: e.runtime_ms,
            dram_fraction: e.dram_fraction,
        };
        Ok(())
    })
}

/// # Safety
/// `trace` must be NULL or a handle from [`mrcap_trace_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrcap_trace_free(trace: *mut MrcapTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Energy between two counter readings, allowing one wrap at `max_range_uj`.
#[no_mangle]
pub extern "C" fn mrcap_rapl_wrap_delta(prev_uj: u64, curr_uj: u64, max_range_uj: u64) -> u64 {
    wrap_delta(prev_uj, curr_uj, max_range_uj)
}

/// Runtime stretch of a stage drawing `nominal_w` under a cap of `cap_w`.
/// A `cap_w` of 0 means no cap.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcap_sim_dilation(
    nominal_w: f64,
    cap_w: f64,
    out: *mut f64,
) -> MrcapStatus {
    guard(|| {
        non_null(out, "out")?;
        let limit = if cap_w == 0.0 {
            PowerLimit::Unlimited
        } else {
            PowerLimit::watts(cap_w).map_err(lib)?
        };
        let model = SimPowerModel {
            watts: PerStage {
                map: nominal_w,
                shuffle: nominal_w,
                reduce: nominal_w,
                idle: nominal_w,
            },
            ..SimPowerModel::default()
        };
        model.validate().map_err(lib)?;
        *out = model.dilation(Stage::Map, limit);
        Ok(())
    })
}

/// Reads a result CSV and renders the comparison table.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. On success
/// `*out` must be released with [`mrcap_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mrcap_summarize_csv(
    path: *const c_char,
    out: *mut *mut c_char,
) -> MrcapStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let rows = read_results_file(Path::new(path)).map_err(lib)?;
        *out = into_c_string(render_table(&summarize(&rows)))?;
        Ok(())
    })
}

/// Runs the matrix described by a TOML experiment config.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string. `rows_out` and
/// `failures_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mrcap_run_matrix_toml(
    config_toml: *const c_char,
    rows_out: *mut u64,
    failures_out: *mut u64,
) -> MrcapStatus {
    guard(|| {
        let text = str_arg(config_toml, "config_toml")?;
        let cfg = ExperimentConfig::from_toml_str(text).map_err(lib)?;
        let report = run_matrix(&cfg).map_err(lib)?;
        if !rows_out.is_null() {
            *rows_out = report.rows.len() as u64;
        }
        if !failures_out.is_null() {
            *failures_out = report.failures.len() as u64;
        }
        Ok(())
    })
}
