//! C ABI for the dopcbf toolkit.
//!
//! Every fallible call returns a [`DopcbfStatus`]; on failure the message is
//! kept per thread and can be copied out with [`dopcbf_last_error`]. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};

use dopcbf::acc::ControllerKind;
use dopcbf::experiment::{run_batch, run_single, ExperimentConfig, RunOutput};
use dopcbf::observer::grade_from_estimate;
use dopcbf::qp::{solve_qp, QpProblem};
use dopcbf::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DopcbfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    IllConditioned = 5,
    RunFailed = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DopcbfController {
    Cbf = 0,
    Docbf = 1,
    Dopcbf = 2,
}

impl From<DopcbfController> for ControllerKind {
    fn from(c: DopcbfController) -> Self {
        match c {
            DopcbfController::Cbf => ControllerKind::Cbf,
            DopcbfController::Docbf => ControllerKind::Docbf,
            DopcbfController::Dopcbf => ControllerKind::Dopcbf,
        }
    }
}

/// Trajectory columns, in the order of `trajectory.csv`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DopcbfColumn {
    Time = 0,
    Gap = 1,
    Speed = 2,
    Input = 3,
    Slack = 4,
    Grade = 5,
    GradeEstimate = 6,
    Disturbance = 7,
    DisturbanceEstimate = 8,
    Barrier = 9,
    RobustBarrier = 10,
}

/// Summary of one run. Absent times are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DopcbfReport {
    pub rms_du: f64,
    pub min_h: f64,
    pub min_h_time: f64,
    pub min_hde: f64,
    pub violation: bool,
    pub violation_time: f64,
    pub qp_failures: size_t,
    pub samples: size_t,
}

/// Paired smoothness comparison of a random-road batch.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DopcbfBatchSummary {
    pub pairs: size_t,
    pub mean_improvement: f64,
    pub min_improvement: f64,
    pub max_improvement: f64,
    pub win_rate: f64,
    pub docbf_violations: size_t,
    pub dopcbf_violations: size_t,
    pub aborted: size_t,
}

/// Experiment configuration handle.
pub struct DopcbfExperiment {
    config: ExperimentConfig,
}

/// Completed run handle.
pub struct DopcbfRun {
    run: RunOutput,
    g: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: DopcbfStatus, msg: impl Into<String>) -> DopcbfStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DopcbfStatus {
    match e {
        Error::Config { .. } => DopcbfStatus::Config,
        Error::Infeasible => DopcbfStatus::Infeasible,
        Error::IllConditioned => DopcbfStatus::IllConditioned,
        Error::DimensionMismatch { .. } | Error::InvalidProblem(_) => DopcbfStatus::InvalidArgument,
        _ => DopcbfStatus::RunFailed,
    }
}

fn guard(f: impl FnOnce() -> DopcbfStatus) -> DopcbfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == DopcbfStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(DopcbfStatus::Panic, "internal panic"),
    }
}

fn from_error(e: Error) -> DopcbfStatus {
    fail(status_of(&e), e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dopcbf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// Returns the buffer size needed including the terminating NUL; nothing is
/// written when `buf` is NULL or `len` is too small.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let needed = msg.len() + 1;
        if !buf.is_null() && len >= needed {
            // SAFETY: the caller provides `len >= needed` writable bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
                *buf.add(msg.len()) = 0;
            }
        }
        needed
    })
}

/// Solves `min ½zᵀHz + fᵀz` subject to `Gz ≤ e`.
///
/// `h` is `n×n` and `g` is `m×n`, both row-major. `g` and `e` may be NULL
/// when `m == 0`. On success `z_out` receives `n` values and `objective_out`
/// (optional) the optimal objective.
///
/// # Safety
/// Every non-NULL pointer must reference an array of the stated length.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_qp_solve(
    n: size_t,
    m: size_t,
    h: *const f64,
    f: *const f64,
    g: *const f64,
    e: *const f64,
    z_out: *mut f64,
    objective_out: *mut f64,
) -> DopcbfStatus {
    guard(|| {
        if h.is_null() || f.is_null() || z_out.is_null() || (m > 0 && (g.is_null() || e.is_null())) {
            return fail(DopcbfStatus::NullPointer, "required array is NULL");
        }
        if n == 0 {
            return fail(DopcbfStatus::InvalidArgument, "n must be positive");
        }
        // SAFETY: lengths are guaranteed by the caller.
        let (hs, fs, gs, es) = unsafe {
            (
                std::slice::from_raw_parts(h, n * n),
                std::slice::from_raw_parts(f, n),
                if m > 0 { std::slice::from_raw_parts(g, m * n) } else { &[][..] },
                if m > 0 { std::slice::from_raw_parts(e, m) } else { &[][..] },
            )
        };
        let problem = match QpProblem::new(
            DMatrix::from_row_slice(n, n, hs),
            DVector::from_column_slice(fs),
            DMatrix::from_row_slice(m, n, gs),
            DVector::from_column_slice(es),
        ) {
            Ok(p) => p,
            Err(e) => return from_error(e),
        };
        match solve_qp(&problem) {
            Ok(sol) => {
                // SAFETY: `z_out` holds `n` values; `objective_out` is optional.
                unsafe {
                    ptr::copy_nonoverlapping(sol.z.as_ptr(), z_out, n);
                    if !objective_out.is_null() {
                        *objective_out = sol.objective;
                    }
                }
                DopcbfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Creates an experiment with default parameters.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_experiment_new(out: *mut *mut DopcbfExperiment) -> DopcbfStatus {
    guard(|| {
        if out.is_null() {
            return fail(DopcbfStatus::NullPointer, "out is NULL");
        }
        let handle = Box::new(DopcbfExperiment {
            config: ExperimentConfig::default(),
        });
        // SAFETY: checked non-NULL above.
        unsafe { *out = Box::into_raw(handle) };
        DopcbfStatus::Ok
    })
}

/// Parses and validates a TOML experiment description.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_experiment_from_toml(
    toml: *const c_char,
    out: *mut *mut DopcbfExperiment,
) -> DopcbfStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(DopcbfStatus::NullPointer, "argument is NULL");
        }
        // SAFETY: the caller passes a NUL-terminated string.
        let text = match unsafe { CStr::from_ptr(toml) }.to_str() {
            Ok(t) => t,
            Err(_) => return fail(DopcbfStatus::InvalidArgument, "config is not valid UTF-8"),
        };
        match ExperimentConfig::from_toml(text) {
            Ok(config) => {
                // SAFETY: checked non-NULL above.
                unsafe { *out = Box::into_raw(Box::new(DopcbfExperiment { config })) };
                DopcbfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Selects the controller used by [`dopcbf_run`].
///
/// # Safety
/// `exp` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_experiment_set_controller(
    exp: *mut DopcbfExperiment,
    controller: DopcbfController,
) -> DopcbfStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or NULL.
        let Some(exp) = (unsafe { exp.as_mut() }) else {
            return fail(DopcbfStatus::NullPointer, "experiment is NULL");
        };
        exp.config.controller = controller.into();
        DopcbfStatus::Ok
    })
}

/// Sets the observer-error weight σ; rejected values leave the experiment unchanged.
///
/// # Safety
/// `exp` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_experiment_set_sigma(exp: *mut DopcbfExperiment, sigma: f64) -> DopcbfStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or NULL.
        let Some(exp) = (unsafe { exp.as_mut() }) else {
            return fail(DopcbfStatus::NullPointer, "experiment is NULL");
        };
        let mut next = exp.config.clone();
        next.filter.sigma = sigma;
        match next.validate() {
            Ok(()) => {
                exp.config = next;
                DopcbfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `exp` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_experiment_free(exp: *mut DopcbfExperiment) {
    if !exp.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(exp) });
    }
}

/// Runs one closed loop on the configured road.
///
/// # Safety
/// `exp` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_run(exp: *const DopcbfExperiment, out: *mut *mut DopcbfRun) -> DopcbfStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or NULL.
        let Some(exp) = (unsafe { exp.as_ref() }) else {
            return fail(DopcbfStatus::NullPointer, "experiment is NULL");
        };
        if out.is_null() {
            return fail(DopcbfStatus::NullPointer, "out is NULL");
        }
        let cfg = &exp.config;
        let road = match cfg.road.build(cfg.seed, 0, cfg.sim.t_end) {
            Ok(r) => r,
            Err(e) => return from_error(e),
        };
        match run_single(cfg, cfg.controller, &road) {
            Ok(run) => {
                let handle = Box::new(DopcbfRun { run, g: cfg.acc.g });
                // SAFETY: checked non-NULL above.
                unsafe { *out = Box::into_raw(handle) };
                DopcbfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_run_report(run: *const DopcbfRun, out: *mut DopcbfReport) -> DopcbfStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or NULL.
        let (Some(run), false) = (unsafe { run.as_ref() }, out.is_null()) else {
            return fail(DopcbfStatus::NullPointer, "argument is NULL");
        };
        let r = &run.run.report;
        let report = DopcbfReport {
            rms_du: r.rms_du,
            min_h: r.min_h,
            min_h_time: r.min_h_time,
            min_hde: r.min_hde,
            violation: r.violation,
            violation_time: r.violation_time.unwrap_or(f64::NAN),
            qp_failures: r.qp_failures,
            samples: run.run.trajectory.len(),
        };
        // SAFETY: checked non-NULL above.
        unsafe { *out = report };
        DopcbfStatus::Ok
    })
}

/// Number of recorded samples, or 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_run_len(run: *const DopcbfRun) -> size_t {
    // SAFETY: the caller passes a live handle or NULL.
    unsafe { run.as_ref() }.map_or(0, |r| r.run.trajectory.len())
}

/// Copies one trajectory column into `buf`, which must hold at least
/// [`dopcbf_run_len`] values.
///
/// # Safety
/// `run` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_run_column(
    run: *const DopcbfRun,
    column: DopcbfColumn,
    buf: *mut f64,
    len: size_t,
) -> DopcbfStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or NULL.
        let (Some(handle), false) = (unsafe { run.as_ref() }, buf.is_null()) else {
            return fail(DopcbfStatus::NullPointer, "argument is NULL");
        };
        let t = &handle.run.trajectory;
        if len < t.len() {
            return fail(
                DopcbfStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", t.len()),
            );
        }
        let road = &handle.run.road;
        let value = |i: usize| match column {
            DopcbfColumn::Time => t.times[i],
            DopcbfColumn::Gap => t.states[i][0],
            DopcbfColumn::Speed => t.states[i][1],
            DopcbfColumn::Input => t.controls[i].u[0],
            DopcbfColumn::Slack => t.controls[i].slack,
            DopcbfColumn::Grade => road.eval(t.times[i]),
            DopcbfColumn::GradeEstimate => grade_from_estimate(t.estimates[i][0], handle.g),
            DopcbfColumn::Disturbance => t.disturbances[i][0],
            DopcbfColumn::DisturbanceEstimate => t.estimates[i][0],
            DopcbfColumn::Barrier => t.barrier_values[i].h,
            DopcbfColumn::RobustBarrier => t.barrier_values[i].h_de,
        };
        // SAFETY: `buf` holds at least `t.len()` values.
        let out = unsafe { std::slice::from_raw_parts_mut(buf, t.len()) };
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = value(i);
        }
        DopcbfStatus::Ok
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_run_free(run: *mut DopcbfRun) {
    if !run.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Runs the worst-case and grade-parameterized controllers on `n` seeded random roads.
///
/// # Safety
/// `exp` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dopcbf_batch(
    exp: *const DopcbfExperiment,
    n: u64,
    seed: u64,
    out: *mut DopcbfBatchSummary,
) -> DopcbfStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or NULL.
        let (Some(exp), false) = (unsafe { exp.as_ref() }, out.is_null()) else {
            return fail(DopcbfStatus::NullPointer, "argument is NULL");
        };
        let batch = match run_batch(&exp.config, n, seed) {
            Ok(b) => b,
            Err(e) => return from_error(e),
        };
        let s = &batch.summary;
        let mut summary = DopcbfBatchSummary {
            docbf_violations: s.docbf.violations,
            dopcbf_violations: s.dopcbf.violations,
            aborted: s.docbf.aborted + s.dopcbf.aborted,
            mean_improvement: f64::NAN,
            min_improvement: f64::NAN,
            max_improvement: f64::NAN,
            win_rate: f64::NAN,
            pairs: 0,
        };
        if let Some(c) = &s.comparison {
            summary.pairs = c.n_pairs;
            summary.mean_improvement = c.mean_improvement;
            summary.min_improvement = c.min_improvement;
            summary.max_improvement = c.max_improvement;
            summary.win_rate = c.win_rate;
        }
        // SAFETY: checked non-NULL above.
        unsafe { *out = summary };
        DopcbfStatus::Ok
    })
}
