//! C ABI over the `cctb` library.
//!
//! Every function returns a [`CctbStatus`]; results come back through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`cctb_last_error_message`]. Strings handed out by this library must be
//! released with [`cctb_string_free`], handles with their own `_free`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cctb::generator::{critical_values, TestCase};
use cctb::harness::{parse_config, run_campaign, run_case, CampaignConfig};
use cctb::kinematics::{AdTables, DynamicsProfile};
use cctb::scoring::{score_with, IncidentLedger, PenaltyTable};
use cctb::world::{make_context, ConfigType, ContextParams};

/// Pass for `x_a` / `x_f` when the vehicle is not placed.
pub const CCTB_ABSENT: f64 = 1e9;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CctbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Unreachable = 4,
    Config = 5,
    Io = 6,
    Internal = 7,
}

/// Vehicle dynamics: braking distance, acceleration speed and time.
pub struct CctbProfile(DynamicsProfile);

/// Conflict geometry of one configuration type.
pub struct CctbContext {
    config_type: ConfigType,
    overrides: BTreeMap<String, f64>,
    params: ContextParams,
}

/// A full campaign configuration (dynamics, context, policy, grid, sim).
pub struct CctbConfig(CampaignConfig);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CctbCriticalValues {
    pub x_e_hat: f64,
    /// NaN when `has_x_a_hat` is false.
    pub x_a_hat: f64,
    /// NaN when `has_x_f_hat` is false.
    pub x_f_hat: f64,
    pub has_x_a_hat: bool,
    pub has_x_f_hat: bool,
    pub feasible: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CctbStatus, String);

impl From<cctb::Error> for Failure {
    fn from(e: cctb::Error) -> Self {
        use cctb::Error as E;
        let status = match &e {
            E::Domain(_) => CctbStatus::Domain,
            E::Unreachable(_) | E::ObstacleUnavoidable(_) => CctbStatus::Unreachable,
            E::Config(_) | E::Table { .. } => CctbStatus::Config,
            E::Io(_) => CctbStatus::Io,
            E::Json(_) | E::Scoring(_) | E::Contract(_) | E::Classification(_) => CctbStatus::InvalidArgument,
            E::UnstableBoundary(_) | E::Incomplete(_) => CctbStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(CctbStatus::InvalidArgument, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CctbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            CctbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            CctbStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CctbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(CctbStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(CctbStatus::Internal, "output contains NUL".into()))?;
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(c.into_raw());
    Ok(())
}

fn finite(name: &str, x: f64) -> Result<f64, Failure> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Failure(CctbStatus::InvalidArgument, format!("{name} must be finite, got {x}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cctb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn cctb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cctb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- dynamics ----

fn new_profile(out: *mut *mut CctbProfile, profile: DynamicsProfile) -> Result<(), Failure> {
    unsafe { put(out, Box::into_raw(Box::new(CctbProfile(profile)))) }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_profile_reference(out: *mut *mut CctbProfile) -> CctbStatus {
    guard(|| new_profile(out, DynamicsProfile::reference()))
}

/// Named preset (`reference`, or one of the shipped A/D tables).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_profile_preset(name: *const c_char, out: *mut *mut CctbProfile) -> CctbStatus {
    guard(|| new_profile(out, DynamicsProfile::preset(str_arg(name, "name")?)?))
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_profile_closed_form(a_max: f64, b_max: f64, v_max: f64, out: *mut *mut CctbProfile) -> CctbStatus {
    guard(|| new_profile(out, DynamicsProfile::closed_form(a_max, b_max, v_max)?))
}

/// Profile from A/D table CSV text.
///
/// # Safety
/// `csv` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_profile_from_table(csv: *const c_char, v_max: f64, out: *mut *mut CctbProfile) -> CctbStatus {
    guard(|| {
        let tables = AdTables::from_csv(str_arg(csv, "csv")?)?;
        new_profile(out, DynamicsProfile::tabulated(tables, v_max)?)
    })
}

/// # Safety
/// `p` must be NULL or a handle from a `cctb_profile_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn cctb_profile_free(p: *mut CctbProfile) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live profile handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_profile_v_max(p: *const CctbProfile, out: *mut f64) -> CctbStatus {
    guard(|| put(out, handle(p, "profile")?.0.v_max()))
}

/// Distance needed to stop from speed `v`.
///
/// # Safety
/// `p` must be a live profile handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_brake_distance(p: *const CctbProfile, v: f64, out: *mut f64) -> CctbStatus {
    guard(|| put(out, handle(p, "profile")?.0.brake_distance(finite("v", v)?)?))
}

/// Speed reached after accelerating over `x` from speed `v`.
///
/// # Safety
/// `p` must be a live profile handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_accel_speed(p: *const CctbProfile, v: f64, x: f64, out: *mut f64) -> CctbStatus {
    guard(|| put(out, handle(p, "profile")?.0.accel_speed(finite("v", v)?, finite("x", x)?)?))
}

/// Time to cover `x` at full acceleration from speed `v`.
///
/// # Safety
/// `p` must be a live profile handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_accel_time(p: *const CctbProfile, v: f64, x: f64, out: *mut f64) -> CctbStatus {
    guard(|| put(out, handle(p, "profile")?.0.accel_time(finite("v", v)?, finite("x", x)?)?))
}

// ---- context ----

/// Context with default geometry for `config_type` (`merging`,
/// `lane_change`, `cross_yield` or `cross_light`).
///
/// # Safety
/// `config_type` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_context_new(config_type: *const c_char, out: *mut *mut CctbContext) -> CctbStatus {
    guard(|| {
        let config_type: ConfigType = str_arg(config_type, "config_type")?.parse()?;
        let ctx = CctbContext { config_type, overrides: BTreeMap::new(), params: ContextParams::new(config_type) };
        put(out, Box::into_raw(Box::new(ctx)))
    })
}

/// Overrides one geometry key (`cd`, `vl`, `ty`, `tar`, `cda`,
/// `lane_half_width`, `inner_front_gap`). The context is left unchanged if
/// the result is invalid.
///
/// # Safety
/// `ctx` must be a live context handle and `key` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cctb_context_set(ctx: *mut CctbContext, key: *const c_char, value: f64) -> CctbStatus {
    guard(|| {
        let ctx = ctx.as_mut().ok_or_else(|| null("context"))?;
        let mut overrides = ctx.overrides.clone();
        overrides.insert(str_arg(key, "key")?.to_string(), value);
        ctx.params = make_context(ctx.config_type, &overrides)?;
        ctx.overrides = overrides;
        Ok(())
    })
}

/// # Safety
/// `ctx` must be NULL or a handle from [`cctb_context_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn cctb_context_free(ctx: *mut CctbContext) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

/// Critical distances for ego speed `v_e`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_critical_values(
    ctx: *const CctbContext,
    profile: *const CctbProfile,
    v_e: f64,
    out: *mut CctbCriticalValues,
) -> CctbStatus {
    guard(|| {
        let c = critical_values(&handle(ctx, "context")?.params, &handle(profile, "profile")?.0, finite("v_e", v_e)?)?;
        put(
            out,
            CctbCriticalValues {
                x_e_hat: c.x_e_hat,
                x_a_hat: c.x_a_hat.unwrap_or(f64::NAN),
                x_f_hat: c.x_f_hat.unwrap_or(f64::NAN),
                has_x_a_hat: c.x_a_hat.is_some(),
                has_x_f_hat: c.x_f_hat.is_some(),
                feasible: c.feasible,
            },
        )
    })
}

// ---- campaigns ----

/// Parses a campaign TOML document. Relative table paths resolve against
/// `base_dir`, or the working directory when it is NULL.
///
/// # Safety
/// `toml` must be a NUL-terminated string, `base_dir` NULL or one, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_config_parse(toml: *const c_char, base_dir: *const c_char, out: *mut *mut CctbConfig) -> CctbStatus {
    guard(|| {
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let cfg = parse_config(str_arg(toml, "toml")?, Path::new(base))?;
        put(out, Box::into_raw(Box::new(CctbConfig(cfg))))
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from [`cctb_config_parse`], freed once.
#[no_mangle]
pub unsafe extern "C" fn cctb_config_free(cfg: *mut CctbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulates one test case and writes `{"verdict": ..., "ledger": ...}` as
/// JSON to `out_json`. Use [`CCTB_ABSENT`] for a missing vehicle.
///
/// # Safety
/// `cfg` must be a live config handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_run_case(
    cfg: *const CctbConfig,
    v_e: f64,
    x_a: f64,
    x_f: f64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> CctbStatus {
    guard(|| {
        let cfg = &handle(cfg, "config")?.0;
        let profile = cfg.dynamics.profile()?;
        let tc = TestCase::new(cfg.context.clone(), &profile, finite("v_e", v_e)?, x_a, x_f)?;
        let crit = critical_values(&cfg.context, &profile, v_e)?;
        let outcome = run_case(&tc, &profile, cfg, &crit, seed)?;
        put_string(out_json, serde_json::to_string(&outcome)?)
    })
}

/// Runs the whole campaign and writes the record as JSON. An incomplete
/// campaign still produces a record (`"complete": false`).
///
/// # Safety
/// `cfg` must be a live config handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_run_campaign(cfg: *const CctbConfig, out_json: *mut *mut c_char) -> CctbStatus {
    guard(|| {
        let record = run_campaign(&handle(cfg, "config")?.0)?;
        put_string(out_json, record.to_json()?)
    })
}

// ---- scoring ----

/// Driving score of an incident ledger (JSON) under the default penalties.
///
/// # Safety
/// `ledger_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_score(ledger_json: *const c_char, exclude_other: bool, out: *mut f64) -> CctbStatus {
    guard(|| {
        let ledger = IncidentLedger::from_json(str_arg(ledger_json, "ledger_json")?)?;
        put(out, score_with(&ledger, &PenaltyTable::default(), exclude_other)?.sc)
    })
}

/// Like [`cctb_score`] but returns the full breakdown as JSON.
///
/// # Safety
/// `ledger_json` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cctb_score_json(ledger_json: *const c_char, exclude_other: bool, out_json: *mut *mut c_char) -> CctbStatus {
    guard(|| {
        let ledger = IncidentLedger::from_json(str_arg(ledger_json, "ledger_json")?)?;
        let score = score_with(&ledger, &PenaltyTable::default(), exclude_other)?;
        put_string(out_json, serde_json::to_string(&score)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_matches_core() {
        assert_eq!(CCTB_ABSENT, cctb::world::ABSENT);
    }

    #[test]
    fn panics_become_internal() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, CctbStatus::Internal);
        let msg = unsafe { CStr::from_ptr(cctb_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), CctbStatus::Ok);
        assert!(cctb_last_error_message().is_null());
    }
}
