//! C ABI over the sdflow solver.
//!
//! Every entry point returns an [`SdfStatus`]. On failure the message is kept
//! per thread and can be copied out with [`sdf_last_error`]. Handles are
//! opaque; each `*_new`/`*_parse` has a matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sdflow::cli::{dispatch, Subcommand};
use sdflow::config::{parse_config, ExperimentConfig};
use sdflow::flow::{step, FlowConfig, FlowState, Shape};
use sdflow::stability::{analyze, Classification};
use sdflow::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Guard = 4,
    Degenerate = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

/// Stability classification as an integer.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdfClassification {
    StrictlyStable = 0,
    Stable = 1,
    Unstable = 2,
}

/// Parsed experiment configuration.
pub struct SdfConfig {
    inner: ExperimentConfig,
}

/// An evolving surface or curve together with its step settings.
pub struct SdfFlow {
    state: FlowState,
    config: FlowConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: SdfStatus, msg: impl Into<String>) -> SdfStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> SdfStatus {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::TooLarge { .. } | Error::InsufficientSamples(_) => {
            SdfStatus::Config
        }
        Error::Guard(_) => SdfStatus::Guard,
        Error::Degenerate(_) | Error::NonFinite(_) => SdfStatus::Degenerate,
        Error::Io(_) => SdfStatus::Io,
        Error::GridMismatch => SdfStatus::Internal,
    }
}

/// Runs `body`, mapping errors and panics to status codes.
fn guarded(body: impl FnOnce() -> Result<(), SdfStatus>) -> SdfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SdfStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(SdfStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: sdflow::Result<T>) -> Result<T, SdfStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, SdfStatus> {
    if p.is_null() {
        return Err(fail(SdfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SdfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, SdfStatus> {
    p.as_ref().ok_or_else(|| fail(SdfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SdfStatus> {
    p.as_mut().ok_or_else(|| fail(SdfStatus::NullPointer, format!("{what} is null")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated)
/// and stores its byte length, without the terminator, in `len_out`.
///
/// Passing a null `buf` only queries the length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes; `len_out` must be
/// null or point to a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn sdf_last_error(buf: *mut c_char, cap: usize, len_out: *mut usize) -> SdfStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    if !len_out.is_null() {
        *len_out = msg.len();
    }
    if buf.is_null() {
        return SdfStatus::Ok;
    }
    if cap < msg.len() + 1 {
        return SdfStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
    *buf.add(msg.len()) = 0;
    SdfStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses configuration text in the `key = value` format of the command line tool.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sdf_config_parse(text: *const c_char, out: *mut *mut SdfConfig) -> SdfStatus {
    guarded(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let inner = lift(parse_config(c_str(text, "text")?))?;
        *out = Box::into_raw(Box::new(SdfConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from [`sdf_config_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdf_config_free(config: *mut SdfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds the initial state described by `config`.
///
/// # Safety
/// `config` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sdf_flow_new(config: *const SdfConfig, out: *mut *mut SdfFlow) -> SdfStatus {
    guarded(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &non_null(config, "config")?.inner;
        let shape = lift(cfg.initial_shape())?;
        let (Some(shape), Some(flow)) = (shape, cfg.flow.clone()) else {
            return Err(fail(SdfStatus::Config, "this surface kind cannot be evolved"));
        };
        *out = Box::into_raw(Box::new(SdfFlow { state: FlowState::new(shape), config: flow }));
        Ok(())
    })
}

/// # Safety
/// `flow` must be null or a handle from [`sdf_flow_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdf_flow_free(flow: *mut SdfFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Advances up to `steps` time steps. On a guard violation the state is left
/// at the last admissible step and [`SdfStatus::Guard`] is returned.
///
/// # Safety
/// `flow` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdf_flow_step(flow: *mut SdfFlow, steps: u64) -> SdfStatus {
    guarded(|| {
        let flow = non_null_mut(flow, "flow")?;
        for _ in 0..steps {
            flow.state = lift(step(&flow.state, &flow.config))?.0;
        }
        Ok(())
    })
}

/// Time and completed step count of the current state. Either output may be null.
///
/// # Safety
/// `flow` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdf_flow_time(flow: *const SdfFlow, t: *mut f64, steps: *mut u64) -> SdfStatus {
    guarded(|| {
        let flow = non_null(flow, "flow")?;
        if !t.is_null() {
            *t = flow.state.t;
        }
        if !steps.is_null() {
            *steps = flow.state.step as u64;
        }
        Ok(())
    })
}

/// Enclosed volume (area for curves) and surface area (length for curves).
///
/// # Safety
/// `flow` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdf_flow_measures(flow: *const SdfFlow, volume: *mut f64, area: *mut f64) -> SdfStatus {
    guarded(|| {
        let flow = non_null(flow, "flow")?;
        if !volume.is_null() {
            *volume = lift(flow.state.shape.volume())?;
        }
        if !area.is_null() {
            *area = lift(flow.state.geometry())?.area();
        }
        Ok(())
    })
}

/// Copies the node values: heights for graphs, all `x` then all `y` for
/// curves. `len_out` receives the number of values; a null `values` only
/// queries it.
///
/// # Safety
/// `flow` must be a live handle; `values` must be null or hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdf_flow_values(
    flow: *const SdfFlow,
    values: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> SdfStatus {
    guarded(|| {
        let flow = non_null(flow, "flow")?;
        let data: Vec<f64> = match &flow.state.shape {
            Shape::Graph(s) => s.heights().values().to_vec(),
            Shape::Curve(c) => c.x().iter().chain(c.y()).copied().collect(),
        };
        if !len_out.is_null() {
            *len_out = data.len();
        }
        if values.is_null() {
            return Ok(());
        }
        if cap < data.len() {
            return Err(fail(SdfStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", data.len())));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), values, data.len());
        Ok(())
    })
}

/// Smallest Jacobi eigenvalue on the complement of translations, and the
/// classification, for the stability reference of `config`.
///
/// # Safety
/// `config` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdf_stability(
    config: *const SdfConfig,
    sigma_min: *mut f64,
    classification: *mut SdfClassification,
) -> SdfStatus {
    guarded(|| {
        let cfg = &non_null(config, "config")?.inner;
        let report = lift(analyze(&lift(cfg.stability_reference())?))?;
        if !sigma_min.is_null() {
            *sigma_min = report.sigma_min;
        }
        if !classification.is_null() {
            *classification = match report.classification {
                Classification::StrictlyStable => SdfClassification::StrictlyStable,
                Classification::Stable => SdfClassification::Stable,
                Classification::Unstable => SdfClassification::Unstable,
            };
        }
        Ok(())
    })
}

/// Runs a full experiment into `out_dir`, exactly as the command line `run`
/// subcommand does. `exit_code` receives the tool's exit code (0, or 2 on a
/// guard halt).
///
/// # Safety
/// `config` must be a live handle, `out_dir` a NUL-terminated path, and
/// `exit_code` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sdf_run(config: *const SdfConfig, out_dir: *const c_char, exit_code: *mut c_int) -> SdfStatus {
    guarded(|| {
        let cfg = &non_null(config, "config")?.inner;
        let dir = c_str(out_dir, "out_dir")?;
        let summary = lift(dispatch(Subcommand::Run, cfg, Path::new(dir)))?;
        if !exit_code.is_null() {
            *exit_code = summary.exit_code;
        }
        Ok(())
    })
}
