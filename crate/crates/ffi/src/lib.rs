//! C interface to `aecs-core`.
//!
//! Devices and search results are opaque handles owned by the caller and
//! released with `aecs_device_free` / `aecs_result_free`. Every fallible
//! function returns an [`AecsStatus`]; on failure a description is kept
//! per thread and can be read with `aecs_last_error_message`.
//!
//! Selections cross the boundary as per-cluster core counts. On thread-count
//! devices a selection is a single count.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aecs_core::aecs::Aggregation;
use aecs_core::{
    exhaustive_search, load_preset, power_heuristic, search_device, stream_from, CoreSelection,
    Error, HeuristicParams, NoiseModel, Ranking, SearchConfig, SearchResult, SelectionMode,
    SimulatedDevice, SimulatedProvider,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AecsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownPreset = 3,
    ParseError = 4,
    IoError = 5,
    SearchFailed = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque simulated device.
pub struct AecsDevice {
    inner: SimulatedDevice,
}

/// Opaque search result.
pub struct AecsResult {
    inner: SearchResult,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AecsSearchConfig {
    pub epsilon: f64,
    pub tokens_per_measurement: u32,
    pub repeats: u32,
    pub stage1_min_speedup: f64,
    pub include_efficient: bool,
    pub max_tree_depth: u32,
    /// Aggregate repeats by median instead of mean.
    pub use_median: bool,
}

impl From<SearchConfig> for AecsSearchConfig {
    fn from(c: SearchConfig) -> Self {
        Self {
            epsilon: c.epsilon,
            tokens_per_measurement: c.tokens_per_measurement,
            repeats: c.repeats,
            stage1_min_speedup: c.stage1_min_speedup,
            include_efficient: c.include_efficient,
            max_tree_depth: c.max_tree_depth,
            use_median: c.aggregation == Aggregation::Median,
        }
    }
}

impl From<AecsSearchConfig> for SearchConfig {
    fn from(c: AecsSearchConfig) -> Self {
        Self {
            epsilon: c.epsilon,
            tokens_per_measurement: c.tokens_per_measurement,
            repeats: c.repeats,
            stage1_min_speedup: c.stage1_min_speedup,
            include_efficient: c.include_efficient,
            max_tree_depth: c.max_tree_depth,
            aggregation: if c.use_median {
                Aggregation::Median
            } else {
                Aggregation::Mean
            },
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AecsHeuristicParams {
    pub a_efficient: f64,
    pub a_performance: f64,
    pub a_prime: f64,
    pub b: f64,
    pub static_power: f64,
    pub alpha: f64,
    pub thread_alpha: f64,
}

impl From<HeuristicParams> for AecsHeuristicParams {
    fn from(p: HeuristicParams) -> Self {
        Self {
            a_efficient: p.a_efficient,
            a_performance: p.a_performance,
            a_prime: p.a_prime,
            b: p.b,
            static_power: p.static_power,
            alpha: p.alpha,
            thread_alpha: p.thread_alpha,
        }
    }
}

impl From<AecsHeuristicParams> for HeuristicParams {
    fn from(p: AecsHeuristicParams) -> Self {
        Self {
            a_efficient: p.a_efficient,
            a_performance: p.a_performance,
            a_prime: p.a_prime,
            b: p.b,
            static_power: p.static_power,
            alpha: p.alpha,
            thread_alpha: p.thread_alpha,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AecsNoise {
    pub rel_sigma: f64,
    pub counter_update_s: f64,
    pub poll_interval_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: AecsStatus, msg: impl Into<String>) -> AecsStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> AecsStatus {
    let status = match &err {
        Error::Parse(_) => AecsStatus::ParseError,
        Error::UnknownPreset { .. } => AecsStatus::UnknownPreset,
        Error::Io { .. } => AecsStatus::IoError,
        Error::Invalid(_) | Error::EmptySelection | Error::ClusterIndex { .. } => {
            AecsStatus::InvalidArgument
        }
        _ => AecsStatus::SearchFailed,
    };
    fail(status, err.to_string())
}

/// Runs `f`, converting panics into `Panic` and clearing the last error on
/// success.
fn guard(f: impl FnOnce() -> AecsStatus) -> AecsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(AecsStatus::Ok) => {
            set_error("");
            AecsStatus::Ok
        }
        Ok(status) => status,
        Err(_) => fail(AecsStatus::Panic, "internal panic"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(AecsStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, AecsStatus> {
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AecsStatus::InvalidArgument, "string is not valid UTF-8"))
}

fn selection_counts(sel: &CoreSelection) -> Vec<u32> {
    match sel {
        CoreSelection::Affinity(c) => c.clone(),
        CoreSelection::Threads(t) => vec![*t],
    }
}

unsafe fn write_counts(
    sel: &CoreSelection,
    out: *mut u32,
    cap: usize,
    len: *mut usize,
) -> AecsStatus {
    let counts = selection_counts(sel);
    *len = counts.len();
    if cap < counts.len() {
        return fail(
            AecsStatus::BufferTooSmall,
            format!("need room for {} counts, got {cap}", counts.len()),
        );
    }
    std::ptr::copy_nonoverlapping(counts.as_ptr(), out, counts.len());
    AecsStatus::Ok
}

/// Fills `out` with the default search configuration.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aecs_search_config_default(out: *mut AecsSearchConfig) -> AecsStatus {
    non_null!(out);
    *out = SearchConfig::default().into();
    AecsStatus::Ok
}

/// Fills `out` with the default heuristic parameters.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aecs_heuristic_params_default(
    out: *mut AecsHeuristicParams,
) -> AecsStatus {
    non_null!(out);
    *out = HeuristicParams::default().into();
    AecsStatus::Ok
}

/// Loads a bundled preset by name.
///
/// # Safety
/// `name` must be null or a NUL-terminated string; `out` must be null or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aecs_device_load_preset(
    name: *const c_char,
    out: *mut *mut AecsDevice,
) -> AecsStatus {
    non_null!(name, out);
    guard(|| {
        let name = match c_str(name) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match load_preset(name) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(AecsDevice { inner: d }));
                AecsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Loads a preset file from `path`.
///
/// # Safety
/// As for [`aecs_device_load_preset`].
#[no_mangle]
pub unsafe extern "C" fn aecs_device_load_file(
    path: *const c_char,
    out: *mut *mut AecsDevice,
) -> AecsStatus {
    non_null!(path, out);
    guard(|| {
        let path = match c_str(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match SimulatedDevice::load_file(Path::new(path)) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(AecsDevice { inner: d }));
                AecsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `device` must be null or a handle from this library that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn aecs_device_free(device: *mut AecsDevice) {
    if !device.is_null() {
        drop(Box::from_raw(device));
    }
}

/// # Safety
/// `device` must be a live handle; `noise` must be null or readable.
#[no_mangle]
pub unsafe extern "C" fn aecs_device_set_noise(
    device: *mut AecsDevice,
    noise: *const AecsNoise,
) -> AecsStatus {
    non_null!(device, noise);
    let n = &*noise;
    let model = NoiseModel {
        rel_sigma: n.rel_sigma,
        counter_update_s: n.counter_update_s,
        poll_interval_s: n.poll_interval_s,
    };
    if let Err(e) = model.validate() {
        return from_core(e);
    }
    (*device).inner.noise = model;
    AecsStatus::Ok
}

/// # Safety
/// `device` must be a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_device_get_noise(
    device: *const AecsDevice,
    out: *mut AecsNoise,
) -> AecsStatus {
    non_null!(device, out);
    let n = (*device).inner.noise;
    *out = AecsNoise {
        rel_sigma: n.rel_sigma,
        counter_update_s: n.counter_update_s,
        poll_interval_s: n.poll_interval_s,
    };
    AecsStatus::Ok
}

/// Number of entries in a selection for this device: the cluster count, or
/// 1 on thread-count devices.
///
/// # Safety
/// `device` must be a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_device_selection_len(
    device: *const AecsDevice,
    out: *mut usize,
) -> AecsStatus {
    non_null!(device, out);
    let t = &(*device).inner.topology;
    *out = match t.selection_mode() {
        SelectionMode::Affinity => t.cluster_count(),
        SelectionMode::ThreadCount => 1,
    };
    AecsStatus::Ok
}

/// # Safety
/// `device` must be a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_device_search_space_size(
    device: *const AecsDevice,
    out: *mut usize,
) -> AecsStatus {
    non_null!(device, out);
    *out = (*device).inner.topology.search_space_size();
    AecsStatus::Ok
}

unsafe fn selection_from(
    device: &SimulatedDevice,
    counts: *const u32,
    len: usize,
) -> Result<CoreSelection, AecsStatus> {
    let counts = std::slice::from_raw_parts(counts, len);
    let sel = match device.topology.selection_mode() {
        SelectionMode::Affinity => CoreSelection::Affinity(counts.to_vec()),
        SelectionMode::ThreadCount => match counts {
            [t] => CoreSelection::Threads(*t),
            _ => {
                return Err(fail(
                    AecsStatus::InvalidArgument,
                    "thread-count devices take a single count",
                ))
            }
        },
    };
    sel.validate(&device.topology).map_err(from_core)?;
    Ok(sel)
}

/// Power heuristic `h(I)` of the selection given by `counts`.
///
/// # Safety
/// `device` must be a live handle, `counts` readable for `len` entries,
/// `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_power_heuristic(
    device: *const AecsDevice,
    counts: *const u32,
    len: usize,
    params: *const AecsHeuristicParams,
    out: *mut f64,
) -> AecsStatus {
    non_null!(device, counts, params, out);
    guard(|| {
        let device = &(*device).inner;
        let sel = match selection_from(device, counts, len) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let params: HeuristicParams = (*params).into();
        if let Err(e) = params.validate() {
            return from_core(e);
        }
        match power_heuristic(&sel, &device.topology, &params) {
            Ok(h) => {
                *out = h;
                AecsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Two-stage search on `device` using measurement stream `seed`.
///
/// # Safety
/// `device` must be a live handle, `config` and `params` readable and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_search(
    device: *const AecsDevice,
    config: *const AecsSearchConfig,
    params: *const AecsHeuristicParams,
    seed: u64,
    out: *mut *mut AecsResult,
) -> AecsStatus {
    non_null!(device, config, params, out);
    guard(|| {
        let device = &(*device).inner;
        let config: SearchConfig = (*config).into();
        let params: HeuristicParams = (*params).into();
        match search_device(device, &config, &params, stream_from(seed, 0)) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(AecsResult { inner: r }));
                AecsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Exhaustive search ranked by measured energy.
///
/// # Safety
/// As for [`aecs_search`].
#[no_mangle]
pub unsafe extern "C" fn aecs_exhaustive_search(
    device: *const AecsDevice,
    config: *const AecsSearchConfig,
    seed: u64,
    out: *mut *mut AecsResult,
) -> AecsStatus {
    non_null!(device, config, out);
    guard(|| {
        let device = &(*device).inner;
        let config: SearchConfig = (*config).into();
        let provider = SimulatedProvider::new(device, stream_from(seed, 0));
        match exhaustive_search(provider, &device.topology, &config, Ranking::MeasuredEnergy) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(AecsResult { inner: r }));
                AecsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `result` must be null or a handle from this library that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn aecs_result_free(result: *mut AecsResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Copies the chosen selection into `counts` (capacity `cap`) and stores its
/// length in `len`. Returns `BufferTooSmall` with `len` set when `cap` is
/// not enough.
///
/// # Safety
/// `result` must be a live handle, `counts` writable for `cap` entries and
/// `len` writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_result_chosen(
    result: *const AecsResult,
    counts: *mut u32,
    cap: usize,
    len: *mut usize,
) -> AecsStatus {
    non_null!(result, counts, len);
    write_counts(&(*result).inner.chosen, counts, cap, len)
}

/// Stage-1 result (the fastest measured selection for exhaustive search).
///
/// # Safety
/// As for [`aecs_result_chosen`].
#[no_mangle]
pub unsafe extern "C" fn aecs_result_stage1(
    result: *const AecsResult,
    counts: *mut u32,
    cap: usize,
    len: *mut usize,
) -> AecsStatus {
    non_null!(result, counts, len);
    write_counts(&(*result).inner.stage1, counts, cap, len)
}

/// Measured mean speed (tokens/s) and energy (mJ/token) of the chosen
/// selection. Either output may be null.
///
/// # Safety
/// `result` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_result_chosen_metrics(
    result: *const AecsResult,
    speed_tps: *mut f64,
    energy_mj_per_tok: *mut f64,
) -> AecsStatus {
    non_null!(result);
    let rec = (*result).inner.chosen_record();
    if !speed_tps.is_null() {
        *speed_tps = rec.mean.speed_tps;
    }
    if !energy_mj_per_tok.is_null() {
        *energy_mj_per_tok = rec.mean.energy_mj_per_tok;
    }
    AecsStatus::Ok
}

/// Candidate count, distinct selections profiled and individual decode runs.
/// Any output may be null.
///
/// # Safety
/// `result` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn aecs_result_counts(
    result: *const AecsResult,
    candidates: *mut usize,
    plans_measured: *mut usize,
    measurements: *mut usize,
) -> AecsStatus {
    non_null!(result);
    let r = &(*result).inner;
    if !candidates.is_null() {
        *candidates = r.candidates.len();
    }
    if !plans_measured.is_null() {
        *plans_measured = r.plans_measured;
    }
    if !measurements.is_null() {
        *measurements = r.measurement_count;
    }
    AecsStatus::Ok
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator. `buf` may be null to
/// query the length.
///
/// # Safety
/// `buf` must be null or writable for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn aecs_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
