use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ovalflow_ffi::*;

fn last_error() -> String {
    let mut need = 0usize;
    unsafe { of_last_error_message(ptr::null_mut(), 0, &mut need) };
    let mut buf = vec![0 as c_char; need];
    assert_eq!(unsafe { of_last_error_message(buf.as_mut_ptr(), need, &mut need) }, OF_OK);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn state_round_trip_and_cylinder_rates() {
    let sigma: Vec<f64> = (0..65).map(|i| -8.0 + 0.25 * i as f64).collect();
    let u = vec![2f64.sqrt(); 65];
    let mut s: *mut OfState = ptr::null_mut();
    let rc = unsafe { of_state_new(sigma.as_ptr(), u.as_ptr(), 65, -10.0, f64::NEG_INFINITY, f64::INFINITY, &mut s) };
    assert_eq!(rc, OF_OK);
    let (mut n, mut tau) = (0usize, 0.0);
    assert_eq!(unsafe { of_state_info(s, &mut n, &mut tau) }, OF_OK);
    assert_eq!((n, tau), (65, -10.0));
    let mut back = vec![0.0; 65];
    assert_eq!(unsafe { of_state_copy(s, ptr::null_mut(), back.as_mut_ptr(), 65) }, OF_OK);
    assert_eq!(back, u);
    assert_eq!(unsafe { of_state_copy(s, ptr::null_mut(), back.as_mut_ptr(), 10) }, OF_ERR_BUFFER_TOO_SMALL);
    let mut rates = vec![1.0; 65];
    let (mut start, mut len) = (0usize, 0usize);
    assert_eq!(unsafe { of_rhs_rescaled(s, 0.0, rates.as_mut_ptr(), 65, &mut start, &mut len) }, OF_OK);
    assert_eq!((start, len), (0, 65));
    assert!(rates.iter().all(|r| r.abs() < 1e-11));
    unsafe { of_state_free(s) };
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut s: *mut OfState = ptr::null_mut();
    let x = [0.0, 1.0];
    assert_eq!(unsafe { of_state_new(ptr::null(), x.as_ptr(), 2, 0.0, -1.0, 1.0, &mut s) }, OF_ERR_NULL_POINTER);
    assert!(last_error().contains("null"));
    let bad = [1.0, 0.0];
    assert_eq!(unsafe { of_state_new(bad.as_ptr(), x.as_ptr(), 2, 0.0, -1.0, 1.0, &mut s) }, OF_ERR_INVALID_PARAMETER);
    let cfg = CString::new(r#"{"foo":1}"#).unwrap();
    let mut run: *mut OfRun = ptr::null_mut();
    assert_eq!(unsafe { of_run_new(cfg.as_ptr(), &mut run) }, OF_ERR_SCHEMA);
    assert_eq!(last_error(), "schema error: foo");
    let cfg = CString::new("{").unwrap();
    assert_eq!(unsafe { of_run_new(cfg.as_ptr(), &mut run) }, OF_ERR_PARSE);
    assert!(run.is_null());
    assert_eq!(unsafe { of_bryant_eval(-1.0, ptr::null_mut(), ptr::null_mut()) }, OF_ERR_INVALID_PARAMETER);
}

#[test]
fn run_and_diagnostics() {
    let cfg = CString::new(r#"{"kind":"perturbed_cylinder","N":128,"tau_init":-12,"tau_end":-11}"#).unwrap();
    let mut run: *mut OfRun = ptr::null_mut();
    assert_eq!(unsafe { of_run_new(cfg.as_ptr(), &mut run) }, OF_OK);
    let (mut count, mut done) = (0usize, 0i32);
    assert_eq!(unsafe { of_run_info(run, &mut count, &mut done) }, OF_OK);
    assert_eq!((count, done), (2, 1));
    let mut s: *mut OfState = ptr::null_mut();
    assert_eq!(unsafe { of_run_snapshot(run, 5, &mut s) }, OF_ERR_OUT_OF_RANGE);
    assert_eq!(unsafe { of_run_snapshot(run, 1, &mut s) }, OF_OK);
    let mut tau = 0.0;
    unsafe { of_state_info(s, ptr::null_mut(), &mut tau) };
    assert!((tau + 11.0).abs() < 1e-12);
    unsafe {
        of_state_free(s);
        of_run_free(run);
    }

    let mut oval: *mut OfState = ptr::null_mut();
    assert_eq!(unsafe { of_state_oval_ansatz(-400.0, &mut oval) }, OF_OK);
    let mut need = 0usize;
    assert_eq!(
        unsafe { of_diagnostics_json(oval, ptr::null(), ptr::null_mut(), 0, &mut need) },
        OF_ERR_BUFFER_TOO_SMALL
    );
    let mut buf = vec![0 as c_char; need];
    assert_eq!(unsafe { of_diagnostics_json(oval, ptr::null(), buf.as_mut_ptr(), need, &mut need) }, OF_OK);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["shape"], "oval");
    let bad = CString::new(r#"{"thetta":0.1}"#).unwrap();
    assert_eq!(unsafe { of_diagnostics_json(oval, bad.as_ptr(), buf.as_mut_ptr(), need, &mut need) }, OF_ERR_SCHEMA);
    unsafe { of_state_free(oval) };
}

#[test]
fn quick_suite_through_the_abi() {
    let (mut need, mut pass) = (0usize, 0i32);
    unsafe { of_suite_json(1, ptr::null_mut(), 0, &mut need, &mut pass) };
    let mut buf = vec![0 as c_char; need];
    assert_eq!(unsafe { of_suite_json(1, buf.as_mut_ptr(), need, &mut need, &mut pass) }, OF_OK);
    assert_eq!(pass, 1);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert!(text.contains("\"suite\": \"quick\""));
}

#[test]
fn psi_n_matches_closed_forms() {
    assert_eq!(of_psi_n(0, 3.0), 1.0);
    assert_eq!(of_psi_n(2, 3.0), 7.0);
}

/// Compile the C smoke test against the generated header and the static
/// library. Skipped when no C compiler or static archive is present.
#[test]
fn c_program_links_against_the_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/ovalflow.h");
    assert!(std::fs::read_to_string(&header).unwrap().contains("int32_t of_state_new("));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let archive = profile_dir.join("libovalflow_ffi.a");
    if !archive.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static archive or C compiler");
        return;
    }
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
