//! C ABI over the ovalflow core.
//!
//! Every fallible function returns an `i32` status (`OF_OK` or one of the
//! negative `OF_ERR_*` codes) and writes results through out-pointers.
//! Handles are opaque and must be released with their `*_free` function.
//! The message of the last failure on the calling thread is available from
//! `of_last_error_message`. Panics never cross the boundary; they surface
//! as `OF_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ovalflow::diagnostics::{run_diagnostics, DiagnosticsConfig};
use ovalflow::flow::run::{default_ansatz, run};
use ovalflow::flow::rhs_rescaled;
use ovalflow::geometry::RescaledState;
use ovalflow::io::parse_config_str;
use ovalflow::suite::{run_suite, SuiteName};
use ovalflow::Error;

pub const OF_OK: i32 = 0;
pub const OF_ERR_NULL_POINTER: i32 = -1;
pub const OF_ERR_INVALID_PARAMETER: i32 = -2;
pub const OF_ERR_PARSE: i32 = -3;
pub const OF_ERR_SCHEMA: i32 = -4;
pub const OF_ERR_IO: i32 = -5;
pub const OF_ERR_BUFFER_TOO_SMALL: i32 = -6;
pub const OF_ERR_OUT_OF_RANGE: i32 = -7;
/// Geometric precondition failed: degenerate profile, tip in range, Y <= 0,
/// non-monotone data, empty region, region violation.
pub const OF_ERR_GEOMETRY: i32 = -8;
/// Numerical failure: CFL violation, blow-up, step failure, no convergence,
/// under-resolution, symmetry violation, short window, not a solution.
pub const OF_ERR_NUMERICAL: i32 = -9;
pub const OF_ERR_PANIC: i32 = -10;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::InvalidTime(_) => OF_ERR_INVALID_PARAMETER,
        Error::ParseError { .. } => OF_ERR_PARSE,
        Error::SchemaError(_) => OF_ERR_SCHEMA,
        Error::Io(_) => OF_ERR_IO,
        Error::OutOfWindow { .. } => OF_ERR_OUT_OF_RANGE,
        Error::DegenerateProfile { .. }
        | Error::TipInRange(_)
        | Error::NonMonotone(_)
        | Error::EmptyRegion(_)
        | Error::DegenerateY(_)
        | Error::RegionViolation(_) => OF_ERR_GEOMETRY,
        Error::CflViolation { .. }
        | Error::BlowUpDetected { .. }
        | Error::StepFailure(_)
        | Error::UnderResolved(_)
        | Error::SymmetryViolation(_)
        | Error::WindowTooShort(_)
        | Error::NotASolution { .. }
        | Error::NoConvergence(_) => OF_ERR_NUMERICAL,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OF_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            OF_ERR_PANIC
        }
    }
}

fn lib(e: Error) -> (i32, String) {
    (code_of(&e), e.to_string())
}

fn null(name: &str) -> (i32, String) {
    (OF_ERR_NULL_POINTER, format!("{name} is null"))
}

fn invalid(msg: &str) -> (i32, String) {
    (OF_ERR_INVALID_PARAMETER, msg.into())
}

/// Copy `text` plus a NUL into `buf` when it fits; `needed` always receives
/// the required size including the NUL.
unsafe fn write_text(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), (i32, String)> {
    let n = text.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || cap < n {
        return Err((OF_ERR_BUFFER_TOO_SMALL, format!("buffer of {cap} bytes, {n} needed")));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

unsafe fn read_str<'a>(s: *const c_char, name: &str) -> Result<&'a str, (i32, String)> {
    if s.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

/// A rescaled profile u(sigma) at time tau.
pub struct OfState {
    inner: RescaledState,
}

/// Snapshots of one solver run.
pub struct OfRun {
    states: Vec<RescaledState>,
    completed: bool,
}

/// Copy the message of the last failure on this thread into `buf`. This
/// call never replaces the stored message.
///
/// # Safety
/// `buf` must be null or valid for `cap` writable bytes; `needed` must be
/// null or valid for one `usize` write.
#[no_mangle]
pub unsafe extern "C" fn of_last_error_message(buf: *mut c_char, cap: usize, needed: *mut usize) -> i32 {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match write_text(&msg, buf, cap, needed) {
        Ok(()) => OF_OK,
        Err((code, _)) => code,
    }
}

/// Build a state from `n` samples.
///
/// # Safety
/// `sigma` and `u` must be valid for `n` reads; `out` must be valid for one
/// pointer write. Infinite tips are passed as `-INFINITY` / `INFINITY`.
#[no_mangle]
pub unsafe extern "C" fn of_state_new(
    sigma: *const f64,
    u: *const f64,
    n: usize,
    tau: f64,
    sigma_minus: f64,
    sigma_plus: f64,
    out: *mut *mut OfState,
) -> i32 {
    guard(|| {
        if sigma.is_null() || u.is_null() || out.is_null() {
            return Err(null("sigma, u or out"));
        }
        if n < 2 {
            return Err(invalid("need at least two nodes"));
        }
        let inner = RescaledState {
            sigma: std::slice::from_raw_parts(sigma, n).to_vec(),
            u: std::slice::from_raw_parts(u, n).to_vec(),
            tau,
            sigma_plus,
            sigma_minus,
        };
        if inner.sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sigma must be strictly increasing"));
        }
        *out = Box::into_raw(Box::new(OfState { inner }));
        Ok(())
    })
}

/// The default oval ansatz at `tau` on its default grid.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn of_state_oval_ansatz(tau: f64, out: *mut *mut OfState) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = default_ansatz(tau).map_err(lib)?;
        *out = Box::into_raw(Box::new(OfState { inner: a.state(a.default_nodes()) }));
        Ok(())
    })
}

/// Release a state. Null is ignored.
///
/// # Safety
/// `state` must be null or a pointer returned by this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn of_state_free(state: *mut OfState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Node count and rescaled time of a state.
///
/// # Safety
/// `state` must be a live handle; `n` and `tau` must be null or valid for
/// one write each.
#[no_mangle]
pub unsafe extern "C" fn of_state_info(state: *const OfState, n: *mut usize, tau: *mut f64) -> i32 {
    guard(|| {
        let s = state.as_ref().ok_or_else(|| null("state"))?;
        if !n.is_null() {
            *n = s.inner.u.len();
        }
        if !tau.is_null() {
            *tau = s.inner.tau;
        }
        Ok(())
    })
}

/// Copy sigma and u into caller buffers of capacity `cap`.
///
/// # Safety
/// `state` must be a live handle; `sigma` and `u` must be null or valid for
/// `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn of_state_copy(state: *const OfState, sigma: *mut f64, u: *mut f64, cap: usize) -> i32 {
    guard(|| {
        let s = state.as_ref().ok_or_else(|| null("state"))?;
        let n = s.inner.u.len();
        if cap < n {
            return Err((OF_ERR_BUFFER_TOO_SMALL, format!("capacity {cap}, {n} needed")));
        }
        if !sigma.is_null() {
            ptr::copy_nonoverlapping(s.inner.sigma.as_ptr(), sigma, n);
        }
        if !u.is_null() {
            ptr::copy_nonoverlapping(s.inner.u.as_ptr(), u, n);
        }
        Ok(())
    })
}

/// u_tau of the rescaled flow on the contiguous block u >= u_min around
/// sigma = 0. The block starts at input node `*start` and has `*len` nodes.
///
/// # Safety
/// `state` must be a live handle; `rates` must be valid for `cap` writes;
/// `start` and `len` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn of_rhs_rescaled(
    state: *const OfState,
    u_min: f64,
    rates: *mut f64,
    cap: usize,
    start: *mut usize,
    len: *mut usize,
) -> i32 {
    guard(|| {
        let s = state.as_ref().ok_or_else(|| null("state"))?;
        if rates.is_null() || start.is_null() || len.is_null() {
            return Err(null("rates, start or len"));
        }
        let r = rhs_rescaled(&s.inner, u_min).map_err(lib)?;
        *start = r.start;
        *len = r.rates.len();
        if cap < r.rates.len() {
            return Err((OF_ERR_BUFFER_TOO_SMALL, format!("capacity {cap}, {} needed", r.rates.len())));
        }
        ptr::copy_nonoverlapping(r.rates.as_ptr(), rates, r.rates.len());
        Ok(())
    })
}

/// Run the solver on a JSON experiment config (same schema as the CLI).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be valid for
/// one pointer write.
#[no_mangle]
pub unsafe extern "C" fn of_run_new(config_json: *const c_char, out: *mut *mut OfRun) -> i32 {
    guard(|| {
        let text = read_str(config_json, "config_json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = parse_config_str(text).map_err(lib)?;
        let r = run(&cfg.solver()).map_err(lib)?;
        let states = if r.physical.is_empty() {
            r.rescaled
        } else {
            r.physical.iter().map(ovalflow::geometry::to_rescaled).collect::<Result<_, _>>().map_err(lib)?
        };
        let completed = matches!(r.outcome, ovalflow::flow::RunOutcome::Completed);
        *out = Box::into_raw(Box::new(OfRun { states, completed }));
        Ok(())
    })
}

/// Release a run. Null is ignored.
///
/// # Safety
/// `run` must be null or a live handle from `of_run_new`.
#[no_mangle]
pub unsafe extern "C" fn of_run_free(run: *mut OfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of stored snapshots and whether the run reached its end time
/// (1) or stopped at a detected blow-up (0).
///
/// # Safety
/// `run` must be a live handle; `count` and `completed` must be null or
/// valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn of_run_info(run: *const OfRun, count: *mut usize, completed: *mut i32) -> i32 {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if !count.is_null() {
            *count = r.states.len();
        }
        if !completed.is_null() {
            *completed = r.completed as i32;
        }
        Ok(())
    })
}

/// Copy snapshot `k` into a new state handle.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn of_run_snapshot(run: *const OfRun, k: usize, out: *mut *mut OfState) -> i32 {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = r
            .states
            .get(k)
            .ok_or_else(|| (OF_ERR_OUT_OF_RANGE, format!("snapshot {k} of {}", r.states.len())))?;
        *out = Box::into_raw(Box::new(OfState { inner: s.clone() }));
        Ok(())
    })
}

/// A-priori diagnostics of a state as JSON. `config_json` may be null for
/// the defaults; otherwise it holds diagnostics keys only.
///
/// # Safety
/// `state` must be a live handle; `config_json` null or NUL-terminated;
/// `buf` null or valid for `cap` writes; `needed` null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn of_diagnostics_json(
    state: *const OfState,
    config_json: *const c_char,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let s = state.as_ref().ok_or_else(|| null("state"))?;
        let cfg: DiagnosticsConfig = if config_json.is_null() {
            DiagnosticsConfig::default()
        } else {
            let text = read_str(config_json, "config_json")?;
            serde_json::from_str(text).map_err(|e| (OF_ERR_SCHEMA, e.to_string()))?
        };
        let rep = run_diagnostics(&s.inner, &cfg).map_err(lib)?;
        let text = serde_json::to_string(&rep).map_err(|e| (OF_ERR_IO, e.to_string()))?;
        write_text(&text, buf, cap, needed)
    })
}

/// Run the quick (`quick != 0`) or full acceptance battery. The JSON
/// summary goes to `buf`; `all_pass` receives 1 when every criterion passed.
/// The summary is cached per battery, so a second call with a larger buffer
/// does not rerun it.
///
/// # Safety
/// `buf` null or valid for `cap` writes; `needed` and `all_pass` null or
/// valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn of_suite_json(quick: i32, buf: *mut c_char, cap: usize, needed: *mut usize, all_pass: *mut i32) -> i32 {
    use std::sync::OnceLock;
    static QUICK: OnceLock<(String, bool)> = OnceLock::new();
    static FULL: OnceLock<(String, bool)> = OnceLock::new();
    guard(|| {
        let (cell, name) = if quick != 0 { (&QUICK, SuiteName::Quick) } else { (&FULL, SuiteName::Acceptance) };
        let (text, pass) = cell.get_or_init(|| {
            let r = run_suite(name);
            (r.summary.to_json(), r.summary.pass)
        });
        if !all_pass.is_null() {
            *all_pass = *pass as i32;
        }
        write_text(text, buf, cap, needed)
    })
}

/// Bryant profile Z0 and Z0' at `rho` (tip scalar curvature normalized to 1).
///
/// # Safety
/// `z` and `dz` must be null or valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn of_bryant_eval(rho: f64, z: *mut f64, dz: *mut f64) -> i32 {
    guard(|| {
        if !(rho >= 0.0) {
            return Err(invalid("rho must be nonnegative"));
        }
        let (v, d) = ovalflow::bryant::default_table().eval(rho);
        if !z.is_null() {
            *z = v;
        }
        if !dz.is_null() {
            *dz = d;
        }
        Ok(())
    })
}

/// Gaussian-weight Hermite eigenfunction psi_n(sigma) (psi_0 = 1, psi_2 = sigma^2 - 2).
#[no_mangle]
pub extern "C" fn of_psi_n(n: u32, sigma: f64) -> f64 {
    ovalflow::spectral::psi_n(n as usize, sigma)
}
