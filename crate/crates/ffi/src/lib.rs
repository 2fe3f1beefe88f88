//! C ABI over the acflow solver.
//!
//! Every fallible call returns an [`AcflowStatus`]. On failure the message
//! is kept per thread and can be copied out with [`acflow_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::Arc;

use acflow::cli::write_outputs;
use acflow::func::{BatchFunction, Times};
use acflow::nets::Network;
use acflow::problems::{grad_u_hamiltonian, ControlProblem, SolutionFn, SolutionPart};
use acflow::trainer::{train_on, TrainConfig, TrainOutcome};
use acflow::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    Numerical = 5,
    Diverged = 6,
    NoReference = 7,
    Io = 8,
    Panic = 9,
}

/// Selects the value, its spatial gradient or the control.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcflowPart {
    Value = 0,
    Gradient = 1,
    Control = 2,
}

/// One evaluation row of a training run. `critic_loss` and the critic
/// errors are NaN where they were not computed.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcflowMetrics {
    pub iter: u64,
    pub tau: f64,
    pub critic_loss: f64,
    pub err_v0: f64,
    pub err_g: f64,
    pub err_u: f64,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub wall_ms: u64,
}

/// A control problem.
pub struct AcflowProblem {
    inner: Arc<dyn ControlProblem>,
}

/// A finished training run with its networks.
pub struct AcflowRun {
    outcome: TrainOutcome,
    nets: Vec<Network>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AcflowStatus {
    match e {
        Error::InvalidParameter { .. } | Error::StaleTargets => AcflowStatus::InvalidArgument,
        Error::DimensionMismatch(_) => AcflowStatus::DimensionMismatch,
        Error::NonFiniteState { .. }
        | Error::NonFiniteOutput { .. }
        | Error::NonFiniteGradient { .. }
        | Error::ControlDomain(_)
        | Error::ZeroReferenceNorm => AcflowStatus::Numerical,
        Error::Diverged { .. } => AcflowStatus::Diverged,
        Error::MissingReference(_) => AcflowStatus::NoReference,
        Error::Config(_) | Error::Json(_) => AcflowStatus::Config,
        Error::Checkpoint(_) | Error::Io(_) => AcflowStatus::Io,
    }
}

struct Fail(AcflowStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F>(f: F) -> AcflowStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AcflowStatus::Ok
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
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AcflowStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AcflowStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AcflowStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated
/// and NUL-terminated when `cap > 0`). Returns the full message length in
/// bytes, excluding the terminator; 0 after a successful call.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn acflow_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds the problem described by a JSON run configuration (the same
/// format the command-line tool reads; `{}` gives the 1d LQ problem).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acflow_problem_from_config(
    config_json: *const c_char,
    out: *mut *mut AcflowProblem,
) -> AcflowStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = TrainConfig::from_json_str(str_arg(config_json, "config_json")?)?;
        let inner = cfg.build_problem()?;
        *out = Box::into_raw(Box::new(AcflowProblem { inner }));
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle from [`acflow_problem_from_config`]
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn acflow_problem_free(problem: *mut AcflowProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// State, control and noise dimensions and the horizon. Any output
/// pointer may be null.
///
/// # Safety
/// `problem` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn acflow_problem_dims(
    problem: *const AcflowProblem,
    state_dim: *mut usize,
    control_dim: *mut usize,
    noise_dim: *mut usize,
    horizon: *mut f64,
) -> AcflowStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.inner;
        if let Some(v) = state_dim.as_mut() {
            *v = p.state_dim();
        }
        if let Some(v) = control_dim.as_mut() {
            *v = p.control_dim();
        }
        if let Some(v) = noise_dim.as_mut() {
            *v = p.noise_dim();
        }
        if let Some(v) = horizon.as_mut() {
            *v = p.horizon();
        }
        Ok(())
    })
}

/// `∇ᵤG(x, u, p)` at one point. `x` and `costate` have `state_dim`
/// entries, `u` and `out` have `control_dim`.
///
/// # Safety
/// The arrays must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn acflow_problem_grad_u_hamiltonian(
    problem: *const AcflowProblem,
    x: *const f64,
    u: *const f64,
    costate: *const f64,
    out: *mut f64,
) -> AcflowStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.inner;
        let (n, nc) = (p.state_dim(), p.control_dim());
        let x = in_slice(x, n, "x")?;
        let u = in_slice(u, nc, "u")?;
        let costate = in_slice(costate, n, "costate")?;
        let out = out_slice(out, nc, "out")?;
        grad_u_hamiltonian(&**p, x, u, costate, out)?;
        Ok(())
    })
}

fn part_arg(part: i32) -> Result<AcflowPart, Fail> {
    match part {
        0 => Ok(AcflowPart::Value),
        1 => Ok(AcflowPart::Gradient),
        2 => Ok(AcflowPart::Control),
        other => Err(Fail(AcflowStatus::InvalidArgument, format!("unknown part {other}"))),
    }
}

fn part_width(part: AcflowPart, n: usize, nc: usize) -> usize {
    match part {
        AcflowPart::Value => 1,
        AcflowPart::Gradient => n,
        AcflowPart::Control => nc,
    }
}

/// Evaluates the reference solution at `rows` states (row-major,
/// `rows × state_dim`) at time `t`. `part` is an [`AcflowPart`] value.
/// `out` receives `rows × 1`,
/// `rows × state_dim` or `rows × control_dim` values depending on `part`.
/// Fails with `NoReference` for problems without one.
///
/// # Safety
/// The arrays must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn acflow_problem_reference(
    problem: *const AcflowProblem,
    part: i32,
    t: f64,
    xs: *const f64,
    rows: usize,
    out: *mut f64,
) -> AcflowStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.inner;
        let part = part_arg(part)?;
        let (n, nc) = (p.state_dim(), p.control_dim());
        let which = match part {
            AcflowPart::Value => SolutionPart::Value,
            AcflowPart::Gradient => SolutionPart::Gradient,
            AcflowPart::Control => SolutionPart::Control,
        };
        let f = SolutionFn::new(&**p, which)?;
        let xs = in_slice(xs, rows * n, "xs")?;
        let out = out_slice(out, rows * part_width(part, n, nc), "out")?;
        f.eval(Times::Const(t), xs, out)?;
        Ok(())
    })
}

fn finish_run(outcome: TrainOutcome, out: *mut *mut AcflowRun) -> Result<(), Fail> {
    let nets = outcome
        .networks
        .iter()
        .map(|n| Network::new(n.arch.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    // SAFETY: callers checked `out` for null.
    unsafe { *out = Box::into_raw(Box::new(AcflowRun { outcome, nets })) };
    Ok(())
}

/// Trains from a JSON run configuration. Blocks until the run finishes.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acflow_train(
    config_json: *const c_char,
    out: *mut *mut AcflowRun,
) -> AcflowStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = TrainConfig::from_json_str(str_arg(config_json, "config_json")?)?;
        let prob = cfg.build_problem()?;
        finish_run(train_on(&cfg, prob)?, out)
    })
}

/// Trains on an existing problem handle. Problem keys in the configuration
/// only label the outputs; its horizon must match the problem's.
///
/// # Safety
/// As for [`acflow_train`]; `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn acflow_train_on(
    problem: *const AcflowProblem,
    config_json: *const c_char,
    out: *mut *mut AcflowRun,
) -> AcflowStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = handle(problem, "problem")?.inner.clone();
        let cfg = TrainConfig::from_json_str(str_arg(config_json, "config_json")?)?;
        finish_run(train_on(&cfg, p)?, out)
    })
}

/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn acflow_run_free(run: *mut AcflowRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of metrics rows recorded by the run.
///
/// # Safety
/// `run` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acflow_run_num_metrics(run: *const AcflowRun, count: *mut usize) -> AcflowStatus {
    guard(|| {
        let r = handle(run, "run")?;
        *count.as_mut().ok_or_else(|| null("count"))? = r.outcome.log.rows.len();
        Ok(())
    })
}

/// Copies metrics row `index`.
///
/// # Safety
/// `run` must be a live handle; `row` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acflow_run_metrics(
    run: *const AcflowRun,
    index: usize,
    row: *mut AcflowMetrics,
) -> AcflowStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let dst = row.as_mut().ok_or_else(|| null("row"))?;
        let m = r.outcome.log.rows.get(index).ok_or_else(|| {
            Fail(
                AcflowStatus::InvalidArgument,
                format!("row {index} out of range ({} rows)", r.outcome.log.rows.len()),
            )
        })?;
        *dst = AcflowMetrics {
            iter: m.iter as u64,
            tau: m.tau,
            critic_loss: m.critic_loss,
            err_v0: m.err_v0,
            err_g: m.err_g,
            err_u: m.err_u,
            cost_mean: m.cost_mean,
            cost_stderr: m.cost_stderr,
            wall_ms: m.wall_ms,
        };
        Ok(())
    })
}

/// Evaluates a trained network at `rows` states: `Value` is the initial
/// value network (`t` is ignored), `Gradient` the value-gradient network
/// and `Control` the policy. Output sizes as in
/// [`acflow_problem_reference`].
///
/// # Safety
/// `run` must be a live handle and the arrays must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn acflow_run_eval(
    run: *const AcflowRun,
    part: i32,
    t: f64,
    xs: *const f64,
    rows: usize,
    out: *mut f64,
) -> AcflowStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let k = part_arg(part)? as usize;
        let net = &r.nets[k];
        let params = &r.outcome.networks[k].params;
        let xs = in_slice(xs, rows * net.input_dim(), "xs")?;
        let out = out_slice(out, rows * net.output_dim(), "out")?;
        net.bind(params).eval(Times::Const(t), xs, out)?;
        Ok(())
    })
}

/// Writes `metrics.csv`, `summary.json`, `config.json` and
/// `checkpoint.acfc` into `dir`, creating it if needed.
///
/// # Safety
/// `run` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn acflow_run_write_outputs(run: *const AcflowRun, dir: *const c_char) -> AcflowStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let dir = str_arg(dir, "dir")?;
        write_outputs(&r.outcome, Path::new(dir))?;
        Ok(())
    })
}
