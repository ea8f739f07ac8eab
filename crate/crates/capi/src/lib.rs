//! C ABI for the persistent-monitoring toolkit: opaque handles over the
//! mission, simulation, gradient and descent objects, status-code returns,
//! and a thread-local textual error channel.
//!
//! Conventions: functions producing a handle take an out-pointer and return
//! [`PgStatus`]; every handle has a matching `_free`; strings returned as
//! `char*` are owned by the caller and released with [`pg_string_free`].
//! Node, agent and matrix indices are zero-based.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use libc::{c_char, size_t};

use patrolgrad::error::Error;
use patrolgrad::ipa::{grad_j, GradResult};
use patrolgrad::optimizer::{descend, DescentConfig, DescentTrace};
use patrolgrad::report;
use patrolgrad::scenario::{load_scenario, MissionSpec};
use patrolgrad::sim::{simulate, SimResult};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Configuration parse or validation failure.
    Config = 2,
    /// Numerical diagnostic (singular guard or internal inconsistency).
    Numeric = 3,
    /// Resource budget exceeded.
    Budget = 4,
    /// A string argument was not valid UTF-8.
    Utf8 = 5,
    /// Index out of range.
    Range = 6,
    /// Unexpected internal failure.
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> PgStatus {
    match err.exit_code() {
        2 => PgStatus::Config,
        3 => PgStatus::Numeric,
        4 => PgStatus::Budget,
        _ => PgStatus::Internal,
    }
}

fn guarded<F: FnOnce() -> PgStatus>(body: F) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic crossed the C boundary");
            PgStatus::Internal
        }
    }
}

/// Message describing the most recent failure on this thread. Valid until
/// the next failing call; never null.
#[no_mangle]
pub extern "C" fn pg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a `pg_*` function documented as
/// caller-owned, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Mission handle
// ---------------------------------------------------------------------------

/// Opaque mission description (targets, graph, agents, thresholds).
pub struct PgMission {
    spec: MissionSpec,
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, PgStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(PgStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        PgStatus::Utf8
    })
}

/// Parse a mission configuration document (TOML text).
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_load(
    text: *const c_char,
    out: *mut *mut PgMission,
) -> PgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return PgStatus::NullArgument;
        }
        let text = match utf8_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match load_scenario(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(PgMission { spec }));
                PgStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Load a mission configuration file from disk.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_load_file(
    path: *const c_char,
    out: *mut *mut PgMission,
) -> PgStatus {
    guarded(|| {
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match std::fs::read_to_string(path) {
            Ok(text) => {
                let c_text = CString::new(text).unwrap_or_default();
                pg_mission_load(c_text.as_ptr(), out)
            }
            Err(e) => {
                set_error(&format!("{path}: {e}"));
                PgStatus::Config
            }
        }
    })
}

/// # Safety
/// `mission` must come from `pg_mission_load*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_free(mission: *mut PgMission) {
    if !mission.is_null() {
        drop(Box::from_raw(mission));
    }
}

/// # Safety
/// `mission` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_node_count(mission: *const PgMission) -> size_t {
    if mission.is_null() {
        return 0;
    }
    (*mission).spec.node_count()
}

/// # Safety
/// `mission` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_agent_count(mission: *const PgMission) -> size_t {
    if mission.is_null() {
        return 0;
    }
    (*mission).spec.agent_count()
}

/// Read threshold entry (p, q) of agent z; +inf marks a non-edge.
///
/// # Safety
/// `mission` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_get_threshold(
    mission: *const PgMission,
    p: size_t,
    q: size_t,
    z: size_t,
    out: *mut f64,
) -> PgStatus {
    guarded(|| {
        if mission.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let spec = &(*mission).spec;
        if p >= spec.node_count() || q >= spec.node_count() || z >= spec.agent_count() {
            set_error("threshold index out of range");
            return PgStatus::Range;
        }
        *out = spec.theta0.get(p, q, z);
        PgStatus::Ok
    })
}

/// Overwrite threshold entry (p, q) of agent z. Only finite entries
/// (diagonal and existing edges) may be set, and values must be >= 0.
///
/// # Safety
/// `mission` must be a live handle with no concurrent readers.
#[no_mangle]
pub unsafe extern "C" fn pg_mission_set_threshold(
    mission: *mut PgMission,
    p: size_t,
    q: size_t,
    z: size_t,
    value: f64,
) -> PgStatus {
    guarded(|| {
        if mission.is_null() {
            set_error("null mission");
            return PgStatus::NullArgument;
        }
        let spec = &mut (*mission).spec;
        if p >= spec.node_count() || q >= spec.node_count() || z >= spec.agent_count() {
            set_error("threshold index out of range");
            return PgStatus::Range;
        }
        if !spec.theta0.get(p, q, z).is_finite() {
            set_error("entry has no edge behind it and must stay +inf");
            return PgStatus::Config;
        }
        if !(value >= 0.0) || !value.is_finite() {
            set_error("threshold values must be finite and nonnegative");
            return PgStatus::Config;
        }
        spec.theta0.set(p, q, z, value);
        PgStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Simulation handle
// ---------------------------------------------------------------------------

/// Opaque simulation result (cost, event log, trajectories, visit orders).
pub struct PgSimResult {
    result: SimResult,
}

/// Run one exact event-driven simulation under the mission's thresholds.
///
/// # Safety
/// `mission` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_simulate(
    mission: *const PgMission,
    out: *mut *mut PgSimResult,
) -> PgStatus {
    guarded(|| {
        if mission.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let spec = &(*mission).spec;
        let result = simulate(spec, &spec.theta0);
        *out = Box::into_raw(Box::new(PgSimResult { result }));
        PgStatus::Ok
    })
}

/// # Safety
/// `result` must come from `pg_simulate` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pg_sim_result_free(result: *mut PgSimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Average uncertainty J of the run.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_sim_result_cost(result: *const PgSimResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).result.cost
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_sim_result_event_count(result: *const PgSimResult) -> size_t {
    if result.is_null() {
        return 0;
    }
    (*result).result.events.len()
}

/// Number of nodes agent `agent` visited (start node included).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_sim_result_visit_count(
    result: *const PgSimResult,
    agent: size_t,
) -> size_t {
    if result.is_null() {
        return 0;
    }
    let visits = &(*result).result.visits;
    if agent >= visits.len() {
        return 0;
    }
    visits[agent].len()
}

/// Zero-based node id of the k-th visit of `agent`.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_sim_result_visit(
    result: *const PgSimResult,
    agent: size_t,
    k: size_t,
    out: *mut size_t,
) -> PgStatus {
    guarded(|| {
        if result.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let visits = &(*result).result.visits;
        if agent >= visits.len() || k >= visits[agent].len() {
            set_error("visit index out of range");
            return PgStatus::Range;
        }
        *out = visits[agent][k];
        PgStatus::Ok
    })
}

/// Event log rendered as CSV; caller owns the string (`pg_string_free`).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_sim_result_events_csv(result: *const PgSimResult) -> *mut c_char {
    if result.is_null() {
        return std::ptr::null_mut();
    }
    let csv = report::events_csv(&(*result).result);
    CString::new(csv).map_or(std::ptr::null_mut(), CString::into_raw)
}

// ---------------------------------------------------------------------------
// Gradient handle
// ---------------------------------------------------------------------------

/// Opaque cost gradient with its co-simulated cost.
pub struct PgGradient {
    grad: GradResult,
}

/// Event-driven gradient of the cost with respect to every threshold entry.
///
/// # Safety
/// `mission` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_grad_j(
    mission: *const PgMission,
    out: *mut *mut PgGradient,
) -> PgStatus {
    guarded(|| {
        if mission.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let spec = &(*mission).spec;
        match grad_j(spec, &spec.theta0) {
            Ok(grad) => {
                *out = Box::into_raw(Box::new(PgGradient { grad }));
                PgStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `grad` must come from `pg_grad_j` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pg_gradient_free(grad: *mut PgGradient) {
    if !grad.is_null() {
        drop(Box::from_raw(grad));
    }
}

/// # Safety
/// `grad` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_gradient_cost(grad: *const PgGradient) -> f64 {
    if grad.is_null() {
        return f64::NAN;
    }
    (*grad).grad.cost
}

/// # Safety
/// `grad` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_gradient_norm(grad: *const PgGradient) -> f64 {
    if grad.is_null() {
        return f64::NAN;
    }
    (*grad).grad.norm()
}

/// dJ/dtheta at entry (p, q) of agent z (zero for non-edges).
///
/// # Safety
/// `grad` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_gradient_get(
    grad: *const PgGradient,
    p: size_t,
    q: size_t,
    z: size_t,
    out: *mut f64,
) -> PgStatus {
    guarded(|| {
        if grad.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let g = &(*grad).grad;
        if p >= g.node_count() || q >= g.node_count() || z >= g.agent_count() {
            set_error("gradient index out of range");
            return PgStatus::Range;
        }
        *out = g.get(p, q, z);
        PgStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Descent handle
// ---------------------------------------------------------------------------

/// Opaque projected-gradient-descent record.
pub struct PgDescent {
    trace: DescentTrace,
}

/// Run projected gradient descent from the mission's thresholds.
/// `tol < 0` disables the early-stop tolerance.
///
/// # Safety
/// `mission` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_optimize(
    mission: *const PgMission,
    iterations: size_t,
    beta0: f64,
    gamma: f64,
    tol: f64,
    out: *mut *mut PgDescent,
) -> PgStatus {
    guarded(|| {
        if mission.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let spec = &(*mission).spec;
        let cfg = DescentConfig {
            iterations,
            beta0,
            gamma,
            tol: (tol >= 0.0).then_some(tol),
        };
        match descend(spec, &spec.theta0, &cfg) {
            Ok(trace) => {
                if let Some(diag) = &trace.diagnostic {
                    set_error(diag);
                    return PgStatus::Numeric;
                }
                *out = Box::into_raw(Box::new(PgDescent { trace }));
                PgStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `descent` must come from `pg_optimize` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pg_descent_free(descent: *mut PgDescent) {
    if !descent.is_null() {
        drop(Box::from_raw(descent));
    }
}

/// Number of recorded iterates (iterations + 1 without early stop).
///
/// # Safety
/// `descent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_descent_len(descent: *const PgDescent) -> size_t {
    if descent.is_null() {
        return 0;
    }
    (*descent).trace.iterates.len()
}

/// Cost at iterate l.
///
/// # Safety
/// `descent` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_descent_cost_at(
    descent: *const PgDescent,
    l: size_t,
    out: *mut f64,
) -> PgStatus {
    guarded(|| {
        if descent.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let iterates = &(*descent).trace.iterates;
        if l >= iterates.len() {
            set_error("iterate index out of range");
            return PgStatus::Range;
        }
        *out = iterates[l].cost;
        PgStatus::Ok
    })
}

/// Final threshold entry (p, q) of agent z after descent.
///
/// # Safety
/// `descent` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_descent_final_theta(
    descent: *const PgDescent,
    p: size_t,
    q: size_t,
    z: size_t,
    out: *mut f64,
) -> PgStatus {
    guarded(|| {
        if descent.is_null() || out.is_null() {
            set_error("null argument");
            return PgStatus::NullArgument;
        }
        let trace = &(*descent).trace;
        let theta = match trace.final_theta() {
            Some(t) => t,
            None => {
                set_error("empty descent trace");
                return PgStatus::Internal;
            }
        };
        if p >= theta.node_count() || q >= theta.node_count() || z >= theta.agent_count() {
            set_error("threshold index out of range");
            return PgStatus::Range;
        }
        *out = theta.get(p, q, z);
        PgStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mission_text() -> CString {
        CString::new(
            r#"
[mission]
horizon = 50.0

[[targets]]
id = 1
x = 0.0
y = 0.0
A = 0.3
B = 1.0
R0 = 1.0

[[targets]]
id = 2
x = 1.0
y = 0.0
A = 0.3
B = 1.0
R0 = 0.0

[[edges]]
i = 1
j = 2

[[agents]]
id = 1
start_node = 1

[thresholds]
init = 0.5
"#,
        )
        .unwrap()
    }

    #[test]
    fn load_simulate_gradient_round_trip() {
        unsafe {
            let mut mission: *mut PgMission = std::ptr::null_mut();
            let status = pg_mission_load(mission_text().as_ptr(), &mut mission);
            assert_eq!(status, PgStatus::Ok);
            assert_eq!(pg_mission_node_count(mission), 2);
            assert_eq!(pg_mission_agent_count(mission), 1);

            let mut sim: *mut PgSimResult = std::ptr::null_mut();
            assert_eq!(pg_simulate(mission, &mut sim), PgStatus::Ok);
            let cost = pg_sim_result_cost(sim);
            assert!(cost > 0.0 && cost.is_finite());
            assert!(pg_sim_result_event_count(sim) > 4);
            assert!(pg_sim_result_visit_count(sim, 0) > 2);
            let mut node: size_t = 99;
            assert_eq!(pg_sim_result_visit(sim, 0, 0, &mut node), PgStatus::Ok);
            assert_eq!(node, 0);
            let csv = pg_sim_result_events_csv(sim);
            assert!(!csv.is_null());
            let text = CStr::from_ptr(csv).to_str().unwrap();
            assert!(text.starts_with("k,time,kind"));
            pg_string_free(csv);

            let mut grad: *mut PgGradient = std::ptr::null_mut();
            assert_eq!(pg_grad_j(mission, &mut grad), PgStatus::Ok);
            let mut value = 0.0f64;
            assert_eq!(pg_gradient_get(grad, 0, 0, 0, &mut value), PgStatus::Ok);
            assert!(value.is_finite());
            assert!((pg_gradient_cost(grad) - cost).abs() < 1e-12);

            pg_gradient_free(grad);
            pg_sim_result_free(sim);
            pg_mission_free(mission);
        }
    }

    #[test]
    fn optimize_reduces_cost() {
        unsafe {
            let mut mission: *mut PgMission = std::ptr::null_mut();
            assert_eq!(
                pg_mission_load(mission_text().as_ptr(), &mut mission),
                PgStatus::Ok
            );
            // Raise the diagonals so there is something to optimize away.
            assert_eq!(pg_mission_set_threshold(mission, 0, 0, 0, 2.0), PgStatus::Ok);
            assert_eq!(pg_mission_set_threshold(mission, 1, 1, 0, 2.0), PgStatus::Ok);
            let mut descent: *mut PgDescent = std::ptr::null_mut();
            assert_eq!(
                pg_optimize(mission, 40, 1.0, 0.6, -1.0, &mut descent),
                PgStatus::Ok
            );
            let len = pg_descent_len(descent);
            assert_eq!(len, 41);
            let (mut first, mut last) = (0.0f64, 0.0f64);
            assert_eq!(pg_descent_cost_at(descent, 0, &mut first), PgStatus::Ok);
            assert_eq!(pg_descent_cost_at(descent, len - 1, &mut last), PgStatus::Ok);
            assert!(last <= first, "{last} vs {first}");
            let mut theta = f64::NAN;
            assert_eq!(
                pg_descent_final_theta(descent, 0, 0, 0, &mut theta),
                PgStatus::Ok
            );
            assert!(theta < 2.0);
            pg_descent_free(descent);
            pg_mission_free(mission);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        unsafe {
            let mut mission: *mut PgMission = std::ptr::null_mut();
            let bad = CString::new("[mission]\nhorizon = -1.0\n").unwrap();
            let status = pg_mission_load(bad.as_ptr(), &mut mission);
            assert_eq!(status, PgStatus::Config);
            let msg = CStr::from_ptr(pg_last_error_message()).to_str().unwrap();
            assert!(!msg.is_empty());

            assert_eq!(
                pg_mission_load(std::ptr::null(), &mut mission),
                PgStatus::NullArgument
            );
            let mut out = 0.0f64;
            assert_eq!(
                pg_gradient_get(std::ptr::null(), 0, 0, 0, &mut out),
                PgStatus::NullArgument
            );
        }
    }
}
