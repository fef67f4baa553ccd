//! C interface to `lpvjump`.
//!
//! Objects are opaque handles created by `*_parse` or by a computation and released with
//! the matching `*_free`. Every fallible call returns an `LpvjStatus`; on failure the
//! message is available from `lpvj_last_error` on the same thread. Strings returned by
//! the library are freed with `lpvj_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lpvjump::analysis::{analyze, AnalysisCertificate, Condition, LmiOptions};
use lpvjump::cli::Description;
use lpvjump::error::Error;
use lpvjump::model::InitialHistory;
use lpvjump::polymat::Point;
use lpvjump::sdp::SolverSettings;
use lpvjump::sim::{mc_mean_square, SimConfig};
use lpvjump::synthesis::{recover_controller, synthesize, Controller, DEFAULT_CONDITION_CAP};

/// Result of every fallible call. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpvjStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// Parse or model validation error.
    Validation = 2,
    Infeasible = 3,
    /// The solver or controller recovery failed numerically.
    Solver = 4,
    /// Internal panic caught at the boundary.
    Panic = 5,
}

/// Parsed and validated system description.
pub struct LpvjSystem(Description);

pub struct LpvjCertificate(AnalysisCertificate);

pub struct LpvjController(Controller);

/// Degrees, grid and margins of the gridded programs.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LpvjOptions {
    pub degree: u32,
    /// Points per parameter axis.
    pub grid: usize,
    pub strict_margin: f64,
    pub pd_margin: f64,
}

impl From<LpvjOptions> for LmiOptions {
    fn from(o: LpvjOptions) -> Self {
        LmiOptions {
            deg_p: o.degree,
            deg_z_theta: o.degree,
            deg_z_rho: o.degree,
            deg_aux: o.degree,
            grid_rho: o.grid,
            grid_theta: o.grid,
            strict_margin: o.strict_margin,
            pd_margin: o.pd_margin,
            ..LmiOptions::default()
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

struct Failure(LpvjStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => LpvjStatus::Infeasible,
            4 => LpvjStatus::Solver,
            _ => LpvjStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

fn bad_arg(msg: &str) -> Failure {
    Failure(LpvjStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, records any error message and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LpvjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LpvjStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            LpvjStatus::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(bad_arg("null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| bad_arg("string is not UTF-8"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| bad_arg(&format!("null {what}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(bad_arg("null output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

unsafe fn options(p: *const LpvjOptions) -> LmiOptions {
    p.as_ref().map_or_else(LmiOptions::default, |o| (*o).into())
}

/// NaN selects the default.
fn optional(x: f64) -> Option<f64> {
    (!x.is_nan()).then_some(x)
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn lpvj_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lpvj_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library defaults: degree 1, 50 grid points, margins 1e-7 and 1e-6.
#[no_mangle]
pub extern "C" fn lpvj_options_default() -> LpvjOptions {
    let d = LmiOptions::default();
    LpvjOptions { degree: d.deg_p, grid: d.grid_rho, strict_margin: d.strict_margin, pd_margin: d.pd_margin }
}

/// Parses a TOML system description.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpvj_system_parse(toml: *const c_char, out: *mut *mut LpvjSystem) -> LpvjStatus {
    guard(|| {
        let d = Description::parse(text(toml)?)?;
        put(out, LpvjSystem(d))
    })
}

/// # Safety
/// `sys` must come from `lpvj_system_parse` and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lpvj_system_free(sys: *mut LpvjSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State, disturbance, input and output dimensions. Any output pointer may be NULL.
///
/// # Safety
/// `sys` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpvj_system_dims(
    sys: *const LpvjSystem,
    n: *mut usize,
    n_w: *mut usize,
    n_u: *mut usize,
    n_z: *mut usize,
) -> LpvjStatus {
    guard(|| {
        let s = &deref(sys, "system")?.0.system;
        for (p, v) in [(n, s.n), (n_w, s.n_w), (n_u, s.n_u), (n_z, s.n_z)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Minimizes the gain bound of condition `theorem` (1 or 2) at delay bound `h`.
/// `h` and `lambda_hat` may be NaN for the description's value and the default;
/// `opts` may be NULL.
///
/// # Safety
/// `sys` must be a live handle, `opts` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpvj_analyze(
    sys: *const LpvjSystem,
    theorem: u32,
    h: f64,
    lambda_hat: f64,
    opts: *const LpvjOptions,
    out: *mut *mut LpvjCertificate,
) -> LpvjStatus {
    guard(|| {
        let d = &deref(sys, "system")?.0;
        let condition = match theorem {
            1 => Condition::Thm1,
            2 => Condition::Thm2,
            _ => return Err(bad_arg("analysis theorem must be 1 or 2")),
        };
        let d = match optional(h) {
            Some(h) => d.with_h(h)?,
            None => d.clone(),
        };
        let cert = analyze(
            &d.system,
            &d.kernel,
            condition,
            d.system.h,
            optional(lambda_hat),
            &options(opts),
            &SolverSettings::default(),
        )?;
        put(out, LpvjCertificate(cert))
    })
}

/// # Safety
/// `cert` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpvj_certificate_gamma(cert: *const LpvjCertificate) -> f64 {
    cert.as_ref().map_or(f64::NAN, |c| c.0.gamma)
}

/// Text form of the certificate; free with `lpvj_string_free`. NULL on a null handle.
///
/// # Safety
/// `cert` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpvj_certificate_to_text(cert: *const LpvjCertificate) -> *mut c_char {
    cert.as_ref().map_or(ptr::null_mut(), |c| into_c_string(c.0.to_text()))
}

/// # Safety
/// `cert` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lpvj_certificate_free(cert: *mut LpvjCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// Synthesizes a memory state feedback from condition `theorem` (3 or 4).
///
/// # Safety
/// As for `lpvj_analyze`.
#[no_mangle]
pub unsafe extern "C" fn lpvj_synthesize(
    sys: *const LpvjSystem,
    theorem: u32,
    h: f64,
    lambda_hat: f64,
    opts: *const LpvjOptions,
    out: *mut *mut LpvjController,
) -> LpvjStatus {
    guard(|| {
        let d = &deref(sys, "system")?.0;
        let condition = match theorem {
            3 => Condition::Thm3,
            4 => Condition::Thm4,
            _ => return Err(bad_arg("synthesis theorem must be 3 or 4")),
        };
        let d = match optional(h) {
            Some(h) => d.with_h(h)?,
            None => d.clone(),
        };
        let cert = synthesize(
            &d.system,
            &d.kernel,
            condition,
            d.system.h,
            optional(lambda_hat),
            &options(opts),
            &SolverSettings::default(),
        )?;
        put(out, LpvjController(recover_controller(&cert, DEFAULT_CONDITION_CAP)?))
    })
}

/// Reads a controller file's contents.
///
/// # Safety
/// `toml` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpvj_controller_parse(toml: *const c_char, out: *mut *mut LpvjController) -> LpvjStatus {
    guard(|| {
        let c = Controller::from_text(text(toml)?)?;
        put(out, LpvjController(c))
    })
}

/// # Safety
/// `ctrl` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpvj_controller_gamma(ctrl: *const LpvjController) -> f64 {
    ctrl.as_ref().map_or(f64::NAN, |c| c.0.gamma)
}

/// # Safety
/// `ctrl` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpvj_controller_to_text(ctrl: *const LpvjController) -> *mut c_char {
    ctrl.as_ref().map_or(ptr::null_mut(), |c| into_c_string(c.0.to_text()))
}

/// Evaluates `K(rho)` and `Kd(rho)` into row-major buffers of `len >= n_u * n` entries.
///
/// # Safety
/// `ctrl` must be a live handle; `k` and `k_d` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lpvj_controller_gains(
    ctrl: *const LpvjController,
    rho: f64,
    k: *mut f64,
    k_d: *mut f64,
    len: usize,
) -> LpvjStatus {
    guard(|| {
        let c = &deref(ctrl, "controller")?.0;
        if k.is_null() || k_d.is_null() {
            return Err(bad_arg("null gain buffer"));
        }
        let (rows, cols) = c.k.shape();
        if len < rows * cols {
            return Err(bad_arg(&format!("gain buffers need {} entries, got {len}", rows * cols)));
        }
        let p = Point::rho(rho);
        for (src, dst) in [(&c.k, k), (&c.k_d, k_d)] {
            let m = src.eval(&p)?;
            let buf = std::slice::from_raw_parts_mut(dst, rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    buf[i * cols + j] = m[(i, j)];
                }
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ctrl` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lpvj_controller_free(ctrl: *mut LpvjController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Monte-Carlo mean square with zero disturbance, from the description's initial history
/// (zero if none). `ctrl` may be NULL for the open loop. Writes the final-to-initial
/// mean-square ratio and the number of divergent runs.
///
/// # Safety
/// Handles must be live; outputs writable or NULL.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lpvj_simulate_mean_square(
    sys: *const LpvjSystem,
    ctrl: *const LpvjController,
    runs: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    ratio: *mut f64,
    diverged_runs: *mut usize,
) -> LpvjStatus {
    guard(|| {
        let d = &deref(sys, "system")?.0;
        let ctrl = ctrl.as_ref().map(|c| &c.0);
        let phi = d.history.clone().unwrap_or_else(|| InitialHistory::zero(d.system.n));
        let cfg = SimConfig::new(dt, horizon, seed, runs);
        let ms = mc_mean_square(&d.system, ctrl, &d.delay, &phi, &d.kernel, &cfg)?;
        if !ratio.is_null() {
            *ratio = ms.ratio();
        }
        if !diverged_runs.is_null() {
            *diverged_runs = ms.diverged_runs;
        }
        Ok(())
    })
}
