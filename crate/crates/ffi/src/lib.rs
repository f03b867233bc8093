//! C interface to the solver.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Every fallible call returns an [`ErgoStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`ergo_last_error`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ergoselect::config::RunConfig;
use ergoselect::grid::PeriodicGrid;
use ergoselect::solver::{solve, ProblemSpec, SolveOptions, SolveReport};
use ergoselect::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErgoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    NonConvergence = 4,
    Certificate = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A discretized problem: Hamiltonian, diffusion, discount, potential, grid.
pub struct ErgoProblem(ProblemSpec);

/// Result of one solve.
pub struct ErgoSolution(SolveReport);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ErgoSolveOptions {
    /// Sup-norm residual at which Newton stops.
    pub tol: f64,
    pub max_iter: usize,
    pub lambda_ceiling: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> ErgoStatus {
    match err {
        Error::NonConvergence { .. } | Error::SingularSystem(_) | Error::SweepFailed { .. } => ErgoStatus::NonConvergence,
        Error::Certificate(_)
        | Error::MonotonicityViolation { .. }
        | Error::NegativityViolation(_)
        | Error::Unnormalizable(_)
        | Error::EmptyClass(_) => ErgoStatus::Certificate,
        Error::Config { .. } | Error::Json(_) | Error::Io(_) => ErgoStatus::Config,
        _ => ErgoStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (ErgoStatus, String)>) -> ErgoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ErgoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ErgoStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (ErgoStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (ErgoStatus, String) {
    (ErgoStatus::NullPointer, format!("{name} is null"))
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, (ErgoStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ergo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ergo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ergo_solve_options_default() -> ErgoSolveOptions {
    let d = SolveOptions::default();
    ErgoSolveOptions {
        tol: d.tol,
        max_iter: d.max_iter,
        lambda_ceiling: d.lambda_ceiling,
    }
}

/// `H = ½|p|² + cos 4πx` on a one-dimensional grid of `n` nodes.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_problem_cos4pi(n: usize, out: *mut *mut ErgoProblem) -> ErgoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = PeriodicGrid::one_d(n).map_err(core_err)?;
        put(out, ErgoProblem(ProblemSpec::cos4pi(grid)));
        Ok(())
    })
}

/// Build a problem from a run config in the command-line JSON format. Only
/// `model` and `grid` are used, but the whole document is validated. A
/// missing `c_h` is resolved as the command line does, which for viscous
/// models means several solves.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_problem_from_json(json: *const c_char, out: *mut *mut ErgoProblem) -> ErgoStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (ErgoStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_json(text).map_err(core_err)?;
        let (c_h, _) = cfg.resolve_c_h().map_err(core_err)?;
        let problem = cfg.problem(c_h).map_err(core_err)?;
        put(out, ErgoProblem(problem));
        Ok(())
    })
}

/// Number of grid nodes.
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ergo_problem_len(problem: *const ErgoProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.grid.len())
}

/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ergo_problem_free(problem: *mut ErgoProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solve the discounted equation with discount `lambda` and viscosity
/// `eta`. `options` may be null for the defaults.
///
/// # Safety
/// `problem` must be a live handle, `options` null or valid, `out` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_solve(
    problem: *const ErgoProblem,
    lambda: f64,
    eta: f64,
    options: *const ErgoSolveOptions,
    out: *mut *mut ErgoSolution,
) -> ErgoStatus {
    guard(|| {
        let p = get(problem, "problem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| ergo_solve_options_default());
        let opts = SolveOptions {
            tol: o.tol,
            max_iter: o.max_iter,
            lambda_ceiling: o.lambda_ceiling,
            initial: None,
        };
        let report = solve(&p.0, lambda, eta, &opts).map_err(core_err)?;
        put(out, ErgoSolution(report));
        Ok(())
    })
}

/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ergo_solution_len(solution: *const ErgoSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.u.len())
}

/// Copy the nodal values (axis 0 fastest) into `buf`, which must hold at
/// least `ergo_solution_len` doubles.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_solution_values(solution: *const ErgoSolution, buf: *mut f64, len: usize) -> ErgoStatus {
    guard(|| {
        let s = get(solution, "solution")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = s.0.u.values();
        if len < v.len() {
            return Err((ErgoStatus::BufferTooSmall, format!("buffer holds {len}, need {}", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Sup norm of the final residual, NaN for a null handle.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ergo_solution_residual(solution: *const ErgoSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.residual_sup)
}

/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ergo_solution_iterations(solution: *const ErgoSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.iterations)
}

/// # Safety
/// `solution` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ergo_solution_free(solution: *mut ErgoSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}
