//! C ABI over `layered_align`.
//!
//! Every fallible call returns an [`LaStatus`]; on failure the message is
//! available from [`la_last_error`] on the same thread until the next call.
//! Objects are opaque handles released with their matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use layered_align::alignment::{design_directions_2xk, verify_alignment_kx2, verify_directions_2xk, DirectionSetKx2};
use layered_align::constellation::{unique_decomposition_check, EncodingPair};
use layered_align::diophantine::{min_form_distance, FormMode, LinearFormsPoint, DEFAULT_FORM_BUDGET};
use layered_align::harness::{self, ExperimentConfig, RunOutput};
use layered_align::xchannel::{sample_topology, ScalarField, TopologyKind, XTopology};
use layered_align::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaStatus {
    Ok = 0,
    InvalidInput = 1,
    Config = 2,
    Budget = 3,
    Infeasible = 4,
    Singular = 5,
    Io = 6,
    NullPointer = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaTopologyKind {
    Kx2 = 0,
    TwoByK = 1,
    Mac = 2,
}

pub struct LaConfig(ExperimentConfig);
pub struct LaRunResult {
    csv: CString,
    summary: CString,
}
pub struct LaTopology(XTopology);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LaStatus {
    match e {
        Error::InvalidInput(_) => LaStatus::InvalidInput,
        Error::Config(_) => LaStatus::Config,
        Error::Budget(_) => LaStatus::Budget,
        Error::Infeasible(_) => LaStatus::Infeasible,
        Error::Singular(_) => LaStatus::Singular,
        Error::Io(_) => LaStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (LaStatus, String)>) -> LaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LaStatus::Panic
        }
    }
}

fn lift<T>(r: layered_align::Result<T>) -> Result<T, (LaStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LaStatus, String) {
    (LaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (LaStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

fn owned(s: String) -> CString {
    CString::new(s.replace('\0', " ")).unwrap_or_default()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn la_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn la_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a JSON experiment config.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_config_from_json(json: *const c_char, out: *mut *mut LaConfig) -> LaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = lift(ExperimentConfig::from_json(text(json, "json")?))?;
        *out = Box::into_raw(Box::new(LaConfig(cfg)));
        Ok(())
    })
}

/// Overrides the seed and, when `threads > 0`, the worker count.
///
/// # Safety
/// `config` must come from [`la_config_from_json`].
#[no_mangle]
pub unsafe extern "C" fn la_config_set_seed(config: *mut LaConfig, seed: u64, threads: u32) -> LaStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.seed = seed;
        if threads > 0 {
            cfg.0.threads = Some(threads as usize);
        }
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`la_config_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn la_config_free(config: *mut LaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured experiment.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_run(config: *const LaConfig, out: *mut *mut LaRunResult) -> LaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let RunOutput { csv, summary, .. } = lift(harness::run(&cfg.0))?;
        let summary = serde_json::to_string_pretty(&summary).expect("summary serializes");
        *out = Box::into_raw(Box::new(LaRunResult { csv: owned(csv), summary: owned(summary) }));
        Ok(())
    })
}

/// CSV text owned by `result`.
///
/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn la_result_csv(result: *const LaRunResult) -> *const c_char {
    result.as_ref().map_or(ptr::null(), |r| r.csv.as_ptr())
}

/// Summary JSON owned by `result`.
///
/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn la_result_summary_json(result: *const LaRunResult) -> *const c_char {
    result.as_ref().map_or(ptr::null(), |r| r.summary.as_ptr())
}

/// # Safety
/// `result` must come from [`la_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn la_result_free(result: *mut LaRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Samples a channel realization. `k` and `m` are ignored for the MAC.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_topology_sample(
    kind: LaTopologyKind,
    k: u32,
    m: u32,
    complex: bool,
    seed: u64,
    cond_ceiling: f64,
    out: *mut *mut LaTopology,
) -> LaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let kind = match kind {
            LaTopologyKind::Kx2 => TopologyKind::KbyTwo,
            LaTopologyKind::TwoByK => TopologyKind::TwoByK,
            LaTopologyKind::Mac => TopologyKind::SimoMac,
        };
        let field = if complex { ScalarField::Complex } else { ScalarField::Real };
        let t = lift(sample_topology(kind, k as usize, m as usize, field, seed, cond_ceiling))?;
        *out = Box::into_raw(Box::new(LaTopology(t)));
        Ok(())
    })
}

/// Rebuilds a topology from its JSON document.
///
/// # Safety
/// `json` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_topology_from_json(json: *const c_char, out: *mut *mut LaTopology) -> LaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let t = lift(XTopology::from_json(text(json, "json")?))?;
        *out = Box::into_raw(Box::new(LaTopology(t)));
        Ok(())
    })
}

/// JSON document of the topology; release with [`la_string_free`].
///
/// # Safety
/// `topology` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_topology_to_json(topology: *const LaTopology, out: *mut *mut c_char) -> LaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let t = topology.as_ref().ok_or_else(|| null("topology"))?;
        *out = owned(t.0.to_json()).into_raw();
        Ok(())
    })
}

/// # Safety
/// `topology` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn la_topology_free(topology: *mut LaTopology) {
    if !topology.is_null() {
        drop(Box::from_raw(topology));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn la_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Alignment check with identity interference bases (K×2) or the designed
/// ρ/ζ directions (2×K). Writes the largest constraint residual.
///
/// # Safety
/// `topology` must be a live handle and `max_residual` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_alignment_residual(topology: *const LaTopology, tol: f64, max_residual: *mut f64) -> LaStatus {
    guard(|| {
        let t = &topology.as_ref().ok_or_else(|| null("topology"))?.0;
        let out = max_residual.as_mut().ok_or_else(|| null("max_residual"))?;
        let report = match t.kind() {
            TopologyKind::KbyTwo => lift(verify_alignment_kx2(t, &DirectionSetKx2::identity(t.m())))?,
            TopologyKind::TwoByK => {
                let d = lift(design_directions_2xk(t, tol))?;
                lift(verify_directions_2xk(t, &d))?
            }
            TopologyKind::SimoMac => return Err((LaStatus::InvalidInput, "the MAC has no alignment step".into())),
        };
        *out = report.max_residual;
        Ok(())
    })
}

/// Whether the `(2Q+1)²` values `a·u + b·v` are pairwise more than `tol` apart.
///
/// # Safety
/// `distinct` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_unique_decomposition(a: f64, b: f64, q: u32, tol: f64, distinct: *mut bool) -> LaStatus {
    guard(|| {
        let out = distinct.as_mut().ok_or_else(|| null("distinct"))?;
        let pair = lift(EncodingPair::new(a, b))?;
        *out = lift(unique_decomposition_check(pair, q, tol))?;
        Ok(())
    })
}

/// Smallest distance to the integers of the real `m×n` linear forms
/// (`entries` row-major) over nonzero `q` with `|q|∞ ≤ big_n`. `hybrid`
/// selects a common integer shift `p` for all forms.
///
/// # Safety
/// `entries` must point to `m*n` doubles and `error` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_min_form_distance(
    entries: *const f64,
    m: u32,
    n: u32,
    big_n: u32,
    hybrid: bool,
    error: *mut f64,
) -> LaStatus {
    guard(|| {
        if entries.is_null() {
            return Err(null("entries"));
        }
        let out = error.as_mut().ok_or_else(|| null("error"))?;
        let slice = std::slice::from_raw_parts(entries, m as usize * n as usize);
        let x = lift(LinearFormsPoint::real(m as usize, n as usize, slice))?;
        let mode = if hybrid { FormMode::Hybrid } else { FormMode::Classical };
        *out = lift(min_form_distance(&x, big_n as usize, mode, DEFAULT_FORM_BUDGET))?.error;
        Ok(())
    })
}
