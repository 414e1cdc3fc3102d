use std::ffi::{c_char, CStr, CString};
use std::ptr;

use cctb_ffi::*;

fn last_error() -> String {
    let p = cctb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { cctb_string_free(s) };
    out
}

fn reference() -> *mut CctbProfile {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { cctb_profile_reference(&mut p) }, CctbStatus::Ok);
    p
}

#[test]
fn kinematics_through_handles() {
    let p = reference();
    let mut x = 0.0;
    unsafe {
        assert_eq!(cctb_brake_distance(p, 6.5, &mut x), CctbStatus::Ok);
        assert!((x - 5.28125).abs() < 1e-12);
        assert_eq!(cctb_accel_speed(p, 0.0, 4.0, &mut x), CctbStatus::Ok);
        assert!((x - 4.0).abs() < 1e-12);
        assert_eq!(cctb_accel_time(p, 0.0, 4.0, &mut x), CctbStatus::Ok);
        assert!((x - 2.0).abs() < 1e-12);
        assert_eq!(cctb_profile_v_max(p, &mut x), CctbStatus::Ok);
        assert_eq!(x, 6.5);
        cctb_profile_free(p);
    }
}

#[test]
fn error_codes_and_messages() {
    let p = reference();
    let mut x = 0.0;
    unsafe {
        assert_eq!(cctb_brake_distance(p, -1.0, &mut x), CctbStatus::Domain);
        assert!(last_error().contains("domain"));
        assert_eq!(cctb_brake_distance(p, f64::NAN, &mut x), CctbStatus::InvalidArgument);
        assert_eq!(cctb_brake_distance(ptr::null(), 1.0, &mut x), CctbStatus::NullPointer);
        assert_eq!(cctb_brake_distance(p, 1.0, ptr::null_mut()), CctbStatus::NullPointer);
        assert_eq!(cctb_brake_distance(p, 1.0, &mut x), CctbStatus::Ok);
        assert!(cctb_last_error_message().is_null());

        let mut q = ptr::null_mut();
        assert_eq!(cctb_profile_closed_form(-1.0, 4.0, 6.5, &mut q), CctbStatus::Config);
        assert!(q.is_null());
        let name = CString::new("no_such_preset").unwrap();
        assert_ne!(cctb_profile_preset(name.as_ptr(), &mut q), CctbStatus::Ok);
        let bad = CString::new("speed,x\n1,2\n").unwrap();
        assert_eq!(cctb_profile_from_table(bad.as_ptr(), 6.5, &mut q), CctbStatus::Config);
        cctb_profile_free(p);
        cctb_profile_free(ptr::null_mut());
        cctb_string_free(ptr::null_mut());
    }
}

#[test]
fn context_and_critical_values() {
    let p = reference();
    let mut ctx = ptr::null_mut();
    let mut cv = CctbCriticalValues { x_e_hat: 0.0, x_a_hat: 0.0, x_f_hat: 0.0, has_x_a_hat: false, has_x_f_hat: false, feasible: false };
    unsafe {
        let name = CString::new("cross_yield").unwrap();
        assert_eq!(cctb_context_new(name.as_ptr(), &mut ctx), CctbStatus::Ok);
        assert_eq!(cctb_critical_values(ctx, p, 0.0, &mut cv), CctbStatus::Ok);
        assert!((cv.x_a_hat - 37.615).abs() < 1e-3);
        assert!((cv.x_f_hat - 5.28125).abs() < 1e-9);
        assert!(cv.feasible);

        let cd = CString::new("cd").unwrap();
        assert_eq!(cctb_context_set(ctx, cd.as_ptr(), -1.0), CctbStatus::Config);
        assert!(last_error().contains("context.cd"));
        // rejected override leaves the context intact
        assert_eq!(cctb_critical_values(ctx, p, 0.0, &mut cv), CctbStatus::Ok);
        assert!((cv.x_a_hat - 37.615).abs() < 1e-3);
        assert_eq!(cctb_context_set(ctx, cd.as_ptr(), 30.0), CctbStatus::Ok);
        assert_eq!(cctb_critical_values(ctx, p, 0.0, &mut cv), CctbStatus::Ok);
        assert!(cv.x_a_hat > 37.7);
        let bogus = CString::new("bogus").unwrap();
        assert_eq!(cctb_context_set(ctx, bogus.as_ptr(), 1.0), CctbStatus::Config);

        let light = CString::new("cross_light").unwrap();
        let mut lctx = ptr::null_mut();
        assert_eq!(cctb_context_new(light.as_ptr(), &mut lctx), CctbStatus::Ok);
        assert_eq!(cctb_critical_values(lctx, p, 0.0, &mut cv), CctbStatus::Ok);
        assert!(!cv.has_x_a_hat && cv.x_a_hat.is_nan());
        let junk = CString::new("roundabout").unwrap();
        assert_eq!(cctb_context_new(junk.as_ptr(), &mut lctx), CctbStatus::Config);

        cctb_context_free(ctx);
        cctb_context_free(lctx);
        cctb_profile_free(p);
    }
}

#[test]
fn run_case_and_campaign_json() {
    let toml = CString::new("[context]\ntype = \"cross_yield\"\n[grid]\nxa = [0, 40]\nxf = [40]\nve = [0]\nrepeats = 2\n").unwrap();
    let mut cfg = ptr::null_mut();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(cctb_config_parse(toml.as_ptr(), ptr::null(), &mut cfg), CctbStatus::Ok);
        assert_eq!(cctb_run_case(cfg, 0.0, 37.7, CCTB_ABSENT, 7, &mut out), CctbStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["verdict"], "PS");
        assert_eq!(v["ledger"]["R"], 1.0);

        assert_eq!(cctb_run_case(cfg, 99.0, 1.0, 1.0, 7, &mut out), CctbStatus::Domain);

        assert_eq!(cctb_run_campaign(cfg, &mut out), CctbStatus::Ok);
        let rec = cctb::harness::CampaignRecord::from_json(&take(out)).unwrap();
        assert!(rec.complete);
        assert_eq!(rec.grids[0].cells.iter().map(|c| c.result.n).max(), Some(2));
        cctb_config_free(cfg);

        let bad = CString::new("[context]\ntype = \"merging\"\nwat = 1\n").unwrap();
        assert_eq!(cctb_config_parse(bad.as_ptr(), ptr::null(), &mut cfg), CctbStatus::Config);
        assert!(last_error().contains("wat"));
    }
}

#[test]
fn scoring() {
    let ledger = CString::new(r#"{"R":0.85,"failure":null,"incidents":{"pedestrian_collision":1,"red_light":2}}"#).unwrap();
    let mut sc = 0.0;
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(cctb_score(ledger.as_ptr(), false, &mut sc), CctbStatus::Ok);
        assert!((sc - 20.825).abs() < 1e-9);
        assert_eq!(cctb_score_json(ledger.as_ptr(), false, &mut out), CctbStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert!((v["P"].as_f64().unwrap() - 0.245).abs() < 1e-12);

        let other = CString::new(r#"{"R":1,"failure":null,"incidents":{"vehicle_collision":1},"caused_by_other":{"vehicle_collision":1}}"#).unwrap();
        assert_eq!(cctb_score(other.as_ptr(), true, &mut sc), CctbStatus::Ok);
        assert_eq!(sc, 100.0);
        assert_eq!(cctb_score(other.as_ptr(), false, &mut sc), CctbStatus::Ok);
        assert!((sc - 60.0).abs() < 1e-9);

        let junk = CString::new("{").unwrap();
        assert_eq!(cctb_score(junk.as_ptr(), false, &mut sc), CctbStatus::InvalidArgument);
        let r_out = CString::new(r#"{"R":1.5,"failure":null,"incidents":{}}"#).unwrap();
        assert_ne!(cctb_score(r_out.as_ptr(), false, &mut sc), CctbStatus::Ok);
        assert_eq!(cctb_score(ptr::null(), false, &mut sc), CctbStatus::NullPointer);
    }
}

#[test]
fn errors_are_per_thread() {
    let p = reference();
    let mut x = 0.0;
    assert_eq!(unsafe { cctb_brake_distance(p, -1.0, &mut x) }, CctbStatus::Domain);
    std::thread::spawn(|| assert!(cctb_last_error_message().is_null())).join().unwrap();
    assert!(last_error().contains("domain"));
    unsafe { cctb_profile_free(p) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cctb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_exports() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cctb.h")).unwrap();
    for f in [
        "cctb_last_error_message",
        "cctb_string_free",
        "cctb_profile_reference",
        "cctb_brake_distance",
        "cctb_critical_values",
        "cctb_run_case",
        "cctb_run_campaign",
        "cctb_score",
        "CCTB_STATUS_NULL_POINTER",
        "typedef struct CctbProfile CctbProfile;",
    ] {
        assert!(header.contains(f), "{f}");
    }
}

// Compiles and runs a C program against the generated header and the static
// library; skipped when no C compiler is on PATH. `cargo test` only builds
// the rlib, so the archive is built here into a separate target dir.
#[test]
fn c_program_links_and_runs() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    if std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let target = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("c-smoke");
    let status = std::process::Command::new(env!("CARGO"))
        .args(["build", "--quiet", "--lib", "--manifest-path"])
        .arg(manifest.join("Cargo.toml"))
        .arg("--target-dir")
        .arg(&target)
        .status()
        .unwrap();
    assert!(status.success());
    let lib = target.join("debug/libcctb_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let build = std::process::Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = std::process::Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
