//! C ABI over the `daap` crate.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns a
//! [`DaapStatus`]; on failure, `daap_last_error()` describes what went wrong
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use daap::dynamics::{simulate, WelfareReport};
use daap::experiment::{build_population, ExperimentSpec, PolicyFile};
use daap::model::Rationality;
use daap::scenario::{generate, load_scenario, save_scenario, GeneratorParams};
use daap::solver::{equilibrium_gap, sofa_solve};
use daap::taxi::{compile_with_types, TaxiScenario};
use daap::DaapError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DataError = 4,
    IoError = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// A taxi scenario.
pub struct DaapScenario {
    inner: TaxiScenario,
}

/// Solved policies with their population.
pub struct DaapSolution {
    inner: PolicyFile,
}

/// Simulated welfare metrics.
pub struct DaapReport {
    inner: WelfareReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DaapStatus, String);

impl From<DaapError> for Failure {
    fn from(e: DaapError) -> Self {
        let status = match e {
            DaapError::InvalidParameter { .. } => DaapStatus::InvalidArgument,
            DaapError::Io { .. } => DaapStatus::IoError,
            _ => DaapStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DaapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DaapStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DaapStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(DaapStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DaapStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(DaapStatus::NullPointer, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(DaapStatus::NullPointer, format!("{name} is null")));
    }
    out.write(value);
    Ok(())
}

fn json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(DaapStatus::DataError, format!("{what}: {e}")))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn daap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn daap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a scenario from generator parameters given as JSON (NULL for
/// defaults).
///
/// # Safety
/// `params_json` is NULL or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_scenario_generate(params_json: *const c_char, out: *mut *mut DaapScenario) -> DaapStatus {
    guard(|| {
        let params: GeneratorParams = match opt_str_arg(params_json, "params_json")? {
            Some(t) => json(t, "generator parameters")?,
            None => GeneratorParams::default(),
        };
        let inner = generate(&params)?;
        put(out, Box::into_raw(Box::new(DaapScenario { inner })), "out")
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_scenario_load(path: *const c_char, out: *mut *mut DaapScenario) -> DaapStatus {
    guard(|| {
        let inner = load_scenario(str_arg(path, "path")?)?;
        put(out, Box::into_raw(Box::new(DaapScenario { inner })), "out")
    })
}

/// Writes a scenario file.
///
/// # Safety
/// `scenario` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn daap_scenario_save(scenario: *const DaapScenario, path: *const c_char) -> DaapStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        save_scenario(&s.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `scenario` is a live handle; `zones` and `horizon` are writable.
#[no_mangle]
pub unsafe extern "C" fn daap_scenario_shape(
    scenario: *const DaapScenario,
    zones: *mut usize,
    horizon: *mut usize,
    fleet_size: *mut usize,
) -> DaapStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        put(zones, s.inner.num_zones(), "zones")?;
        put(horizon, s.inner.horizon, "horizon")?;
        put(fleet_size, s.inner.fleet_size, "fleet_size")
    })
}

/// Releases a scenario. NULL is ignored.
///
/// # Safety
/// `scenario` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn daap_scenario_free(scenario: *mut DaapScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Solves the scenario with SoFA. `spec_json` is an experiment spec (its
/// scenario field is ignored) or NULL for a fully rational fleet.
///
/// # Safety
/// `scenario` is a live handle; `spec_json` is NULL or NUL-terminated;
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_solve(
    scenario: *const DaapScenario,
    spec_json: *const c_char,
    out: *mut *mut DaapSolution,
) -> DaapStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let spec: ExperimentSpec = match opt_str_arg(spec_json, "spec_json")? {
            Some(t) => json(t, "experiment spec")?,
            None => ExperimentSpec::homogeneous_sofa(),
        };
        let types = build_population(&spec.population, s.inner.fleet_size)?;
        let model = compile_with_types(&s.inner, types.clone())?;
        let result = sofa_solve(&model, &spec.solver)?;
        let gaps = types
            .iter()
            .enumerate()
            .map(|(k, t)| match t.rationality {
                Rationality::PerfectlyRational { .. } => equilibrium_gap(&model, &result.policies, k).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let final_residual = result.final_residual();
        let inner = PolicyFile::new(types, result.policies, result.converged, result.iterations, final_residual, gaps);
        put(out, Box::into_raw(Box::new(DaapSolution { inner })), "out")
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_solution_load(path: *const c_char, out: *mut *mut DaapSolution) -> DaapStatus {
    guard(|| {
        let inner = PolicyFile::load(str_arg(path, "path")?)?;
        put(out, Box::into_raw(Box::new(DaapSolution { inner })), "out")
    })
}

/// # Safety
/// `solution` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn daap_solution_save(solution: *const DaapSolution, path: *const c_char) -> DaapStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        s.inner.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Convergence flag (0 or 1), completed sweeps and number of agent types.
///
/// # Safety
/// `solution` is a live handle; the out-pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn daap_solution_summary(
    solution: *const DaapSolution,
    converged: *mut i32,
    iterations: *mut usize,
    type_count: *mut usize,
) -> DaapStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        put(converged, i32::from(s.inner.converged), "converged")?;
        put(iterations, s.inner.iterations, "iterations")?;
        put(type_count, s.inner.agent_types.len(), "type_count")
    })
}

/// Probability that an agent of type `type_index` in zone `zone` at epoch
/// `epoch` heads for zone `action`.
///
/// # Safety
/// `solution` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_solution_policy_prob(
    solution: *const DaapSolution,
    type_index: usize,
    epoch: usize,
    zone: usize,
    action: usize,
    out: *mut f64,
) -> DaapStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        let p = s
            .inner
            .policies
            .get(type_index)
            .filter(|p| p.covers(epoch) && zone < p.states && action < p.actions)
            .ok_or_else(|| Failure(DaapStatus::OutOfRange, "index outside the policy table".into()))?;
        put(out, p.prob(epoch, zone, action), "out")
    })
}

/// # Safety
/// `solution` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn daap_solution_free(solution: *mut DaapSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Monte Carlo simulation of a solution on its scenario.
///
/// # Safety
/// `scenario` and `solution` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_simulate(
    scenario: *const DaapScenario,
    solution: *const DaapSolution,
    runs: usize,
    seed: u64,
    out: *mut *mut DaapReport,
) -> DaapStatus {
    guard(|| {
        let sc = handle(scenario, "scenario")?;
        let so = handle(solution, "solution")?;
        let model = compile_with_types(&sc.inner, so.inner.agent_types.clone())?;
        let inner = simulate(&model, &so.inner.policies, runs, seed)?;
        put(out, Box::into_raw(Box::new(DaapReport { inner })), "out")
    })
}

/// Fleet-wide average payoff per agent (mean and standard deviation over runs).
///
/// # Safety
/// `report` is a live handle; `mean` and `stddev` are writable.
#[no_mangle]
pub unsafe extern "C" fn daap_report_average_payoff(
    report: *const DaapReport,
    mean: *mut f64,
    stddev: *mut f64,
) -> DaapStatus {
    guard(|| {
        let r = handle(report, "report")?;
        put(mean, r.inner.average_payoff.mean, "mean")?;
        put(stddev, r.inner.average_payoff.std, "stddev")
    })
}

/// Average payoff of one agent type.
///
/// # Safety
/// `report` is a live handle; `mean` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_report_type_payoff(report: *const DaapReport, type_index: usize, mean: *mut f64) -> DaapStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let g = r
            .inner
            .per_type
            .get(type_index)
            .ok_or_else(|| Failure(DaapStatus::OutOfRange, format!("no agent type {type_index}")))?;
        put(mean, g.average_payoff.mean, "mean")
    })
}

/// Mean share of customer demand left unserved.
///
/// # Safety
/// `report` is a live handle; `mean` is writable.
#[no_mangle]
pub unsafe extern "C" fn daap_report_starvation(report: *const DaapReport, mean: *mut f64) -> DaapStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let s = r
            .inner
            .starvation
            .ok_or_else(|| Failure(DaapStatus::DataError, "no demand information".into()))?;
        put(mean, s.mean, "mean")
    })
}

/// # Safety
/// `report` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn daap_report_free(report: *mut DaapReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
