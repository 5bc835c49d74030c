//! C ABI for the stream engine: opaque engine handles, JSON-in/JSON-out
//! plan operations, and status codes. All strings returned through out
//! parameters are owned by the library and must be released with
//! [`mms_string_free`].

use mmstream_core::bench::{make_context, optimize_with_phases, run_plan, BenchConfig, Phase};
use mmstream_core::opt::reasoner::make_reasoner;
use mmstream_core::plan::{
    build_query, deserialize_plan, serialize_plan, validate_plan, QueryId,
};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    UnknownQuery = 4,
    InvalidPlan = 5,
    RunFailed = 6,
}

/// Opaque engine handle: configuration plus the model catalog.
pub struct MmsEngine {
    config: BenchConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl std::fmt::Display) {
    let text = CString::new(message.to_string().replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn to_owned_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, MmsStatus> {
    if ptr.is_null() {
        return Err(MmsStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| MmsStatus::InvalidUtf8)
}

/// Library version string; static storage, do not free.
#[no_mangle]
pub extern "C" fn mms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread; static until the next
/// failing call, do not free.
#[no_mangle]
pub extern "C" fn mms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an engine with the built-in default configuration.
#[no_mangle]
pub extern "C" fn mms_engine_new() -> *mut MmsEngine {
    Box::into_raw(Box::new(MmsEngine { config: BenchConfig::default() }))
}

/// Creates an engine from a benchmark-config JSON document.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mms_engine_new_from_json(
    config_json: *const c_char,
    out: *mut *mut MmsEngine,
) -> MmsStatus {
    if out.is_null() {
        return MmsStatus::NullArgument;
    }
    let text = match read_str(config_json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match serde_json::from_str::<BenchConfig>(text) {
        Ok(config) => {
            if let Err(e) = config.validate() {
                set_error(e);
                return MmsStatus::InvalidConfig;
            }
            *out = Box::into_raw(Box::new(MmsEngine { config }));
            MmsStatus::Ok
        }
        Err(e) => {
            set_error(e);
            MmsStatus::InvalidConfig
        }
    }
}

/// Releases an engine handle. Null is ignored.
///
/// # Safety
/// `engine` must have been returned by an engine constructor and not freed.
#[no_mangle]
pub unsafe extern "C" fn mms_engine_free(engine: *mut MmsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Builds the naive plan for a query id ("Q1".."Q13") as a plan JSON
/// document.
///
/// # Safety
/// `engine` must be a live engine handle; `query_id` a valid string;
/// `out_plan_json` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mms_build_plan(
    engine: *const MmsEngine,
    query_id: *const c_char,
    out_plan_json: *mut *mut c_char,
) -> MmsStatus {
    if engine.is_null() || out_plan_json.is_null() {
        return MmsStatus::NullArgument;
    }
    let query = match read_str(query_id).map(QueryId::parse) {
        Ok(Ok(q)) => q,
        Ok(Err(e)) => {
            set_error(e);
            return MmsStatus::UnknownQuery;
        }
        Err(status) => return status,
    };
    let config = &(*engine).config;
    match build_query(query, &config.plan_build()) {
        Ok(plan) => {
            *out_plan_json = to_owned_c_string(serialize_plan(&plan));
            MmsStatus::Ok
        }
        Err(e) => {
            set_error(e);
            MmsStatus::InvalidPlan
        }
    }
}

/// Validates a plan document. On success writes a report string: empty for
/// a valid plan, otherwise one violation per line.
///
/// # Safety
/// Pointer contracts as in [`mms_build_plan`].
#[no_mangle]
pub unsafe extern "C" fn mms_validate_plan(
    plan_json: *const c_char,
    out_report: *mut *mut c_char,
) -> MmsStatus {
    if out_report.is_null() {
        return MmsStatus::NullArgument;
    }
    let text = match read_str(plan_json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match deserialize_plan(text) {
        Ok(plan) => {
            let report = validate_plan(&plan);
            let rendered = if report.is_valid() { String::new() } else { report.to_string() };
            *out_report = to_owned_c_string(rendered);
            MmsStatus::Ok
        }
        Err(e) => {
            set_error(e);
            MmsStatus::InvalidPlan
        }
    }
}

/// Optimizes a query's naive plan through the given phases
/// ("semantic,logical,physical" or any prefix; empty for none) and returns
/// the optimized plan JSON.
///
/// # Safety
/// Pointer contracts as in [`mms_build_plan`].
#[no_mangle]
pub unsafe extern "C" fn mms_optimize_plan(
    engine: *const MmsEngine,
    query_id: *const c_char,
    phases: *const c_char,
    seed: u64,
    out_plan_json: *mut *mut c_char,
) -> MmsStatus {
    if engine.is_null() || out_plan_json.is_null() {
        return MmsStatus::NullArgument;
    }
    let query = match read_str(query_id).map(QueryId::parse) {
        Ok(Ok(q)) => q,
        Ok(Err(e)) => {
            set_error(e);
            return MmsStatus::UnknownQuery;
        }
        Err(status) => return status,
    };
    let phases = match read_str(phases).map(Phase::parse_list) {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => {
            set_error(e);
            return MmsStatus::InvalidConfig;
        }
        Err(status) => return status,
    };
    let config = &(*engine).config;
    let result = make_context(config, query, seed).and_then(|ctx| {
        let reasoner = make_reasoner(&config.reasoner);
        let mut warnings = Vec::new();
        optimize_with_phases(&ctx, &phases, reasoner.as_ref(), &mut warnings)
    });
    match result {
        Ok(plan) => {
            *out_plan_json = to_owned_c_string(serialize_plan(&plan));
            MmsStatus::Ok
        }
        Err(e) => {
            set_error(e);
            MmsStatus::RunFailed
        }
    }
}

/// Runs a plan over the query's stream and returns a metrics JSON document
/// with fields `query_id`, `fps`, `accuracy`, `frames`, `simulated_ms`,
/// `outputs`.
///
/// # Safety
/// Pointer contracts as in [`mms_build_plan`].
#[no_mangle]
pub unsafe extern "C" fn mms_run_plan(
    engine: *const MmsEngine,
    plan_json: *const c_char,
    seed: u64,
    frames: u64,
    out_metrics_json: *mut *mut c_char,
) -> MmsStatus {
    if engine.is_null() || out_metrics_json.is_null() {
        return MmsStatus::NullArgument;
    }
    let text = match read_str(plan_json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let plan = match deserialize_plan(text) {
        Ok(p) => p,
        Err(e) => {
            set_error(e);
            return MmsStatus::InvalidPlan;
        }
    };
    let query = match QueryId::parse(&plan.metadata.query_id) {
        Ok(q) => q,
        Err(e) => {
            set_error(e);
            return MmsStatus::UnknownQuery;
        }
    };
    let config = &(*engine).config;
    match run_plan(config, query, &plan, seed, frames.max(1)) {
        Ok(outcome) => {
            let metrics = serde_json::json!({
                "query_id": query.name(),
                "fps": outcome.metrics.fps,
                "accuracy": outcome.accuracy,
                "frames": outcome.metrics.frames_ingested,
                "simulated_ms": outcome.metrics.simulated_ms(),
                "outputs": outcome.outputs.len(),
            });
            *out_metrics_json = to_owned_c_string(metrics.to_string());
            MmsStatus::Ok
        }
        Err(e) => {
            set_error(e);
            MmsStatus::RunFailed
        }
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must have been returned via an out parameter of this library and not
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn mms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    unsafe fn take_string(ptr: *mut c_char) -> String {
        assert!(!ptr.is_null());
        let s = CStr::from_ptr(ptr).to_str().unwrap().to_string();
        mms_string_free(ptr);
        s
    }

    #[test]
    fn build_validate_run_through_the_c_surface() {
        unsafe {
            let engine = mms_engine_new();
            let query = CString::new("Q8").unwrap();

            let mut plan_ptr: *mut c_char = std::ptr::null_mut();
            assert_eq!(
                mms_build_plan(engine, query.as_ptr(), &mut plan_ptr),
                MmsStatus::Ok
            );
            let plan_json = take_string(plan_ptr);
            assert!(plan_json.contains("\"query_id\": \"Q8\""));

            let plan_c = CString::new(plan_json.clone()).unwrap();
            let mut report_ptr: *mut c_char = std::ptr::null_mut();
            assert_eq!(mms_validate_plan(plan_c.as_ptr(), &mut report_ptr), MmsStatus::Ok);
            assert_eq!(take_string(report_ptr), "");

            let mut metrics_ptr: *mut c_char = std::ptr::null_mut();
            assert_eq!(
                mms_run_plan(engine, plan_c.as_ptr(), 42, 500, &mut metrics_ptr),
                MmsStatus::Ok
            );
            let metrics = take_string(metrics_ptr);
            let parsed: serde_json::Value = serde_json::from_str(&metrics).unwrap();
            assert_eq!(parsed["query_id"], "Q8");
            assert!((parsed["fps"].as_f64().unwrap() - 6.25).abs() < 0.4);

            mms_engine_free(engine);
        }
    }

    #[test]
    fn unknown_query_sets_error_and_status() {
        unsafe {
            let engine = mms_engine_new();
            let query = CString::new("Q99").unwrap();
            let mut plan_ptr: *mut c_char = std::ptr::null_mut();
            assert_eq!(
                mms_build_plan(engine, query.as_ptr(), &mut plan_ptr),
                MmsStatus::UnknownQuery
            );
            let message = CStr::from_ptr(mms_last_error()).to_str().unwrap();
            assert!(message.contains("Q99"));
            mms_engine_free(engine);
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            let mut out: *mut c_char = std::ptr::null_mut();
            assert_eq!(
                mms_build_plan(std::ptr::null(), std::ptr::null(), &mut out),
                MmsStatus::NullArgument
            );
            assert_eq!(
                mms_validate_plan(std::ptr::null(), &mut out),
                MmsStatus::NullArgument
            );
            mms_string_free(std::ptr::null_mut());
            mms_engine_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn optimize_returns_a_rewritten_plan() {
        unsafe {
            let engine = mms_engine_new();
            let query = CString::new("Q1").unwrap();
            let phases = CString::new("semantic").unwrap();
            let mut plan_ptr: *mut c_char = std::ptr::null_mut();
            assert_eq!(
                mms_optimize_plan(engine, query.as_ptr(), phases.as_ptr(), 42, &mut plan_ptr),
                MmsStatus::Ok
            );
            let plan_json = take_string(plan_ptr);
            assert!(plan_json.contains("\"op\": \"Skip\""));
            mms_engine_free(engine);
        }
    }

    #[test]
    fn malformed_config_json_rejected() {
        unsafe {
            let bad = CString::new("{ not json").unwrap();
            let mut engine: *mut MmsEngine = std::ptr::null_mut();
            assert_eq!(
                mms_engine_new_from_json(bad.as_ptr(), &mut engine),
                MmsStatus::InvalidConfig
            );
            assert!(engine.is_null());
        }
    }
}
