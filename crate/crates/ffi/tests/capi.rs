use std::ffi::{c_char, CStr, CString};
use std::ptr;

use phasesync_ffi::*;

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { ps_string_free(p) };
    s
}

fn last_error() -> String {
    take_string(ps_last_error_message())
}

fn new_config(name: &str) -> *mut PsConfig {
    let name = CString::new(name).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { ps_config_new(name.as_ptr(), &mut cfg) },
        PsStatus::Ok
    );
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn unknown_experiment_sets_message() {
    let name = CString::new("warp-drive").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { ps_config_new(name.as_ptr(), &mut cfg) },
        PsStatus::UnknownExperiment
    );
    assert!(cfg.is_null());
    assert!(last_error().contains("warp-drive"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { ps_config_new(ptr::null(), &mut cfg) },
        PsStatus::NullPointer
    );
    assert_eq!(
        unsafe { ps_config_set_seed(ptr::null_mut(), 1) },
        PsStatus::NullPointer
    );
    assert_eq!(
        unsafe { ps_teleport(0.0, 0.0, 0.05, 10, 1, ptr::null_mut()) },
        PsStatus::NullPointer
    );
    unsafe {
        ps_config_free(ptr::null_mut());
        ps_string_free(ptr::null_mut());
    }
}

#[test]
fn set_and_get_round_trip() {
    let cfg = new_config("teleport");
    let key = CString::new("eta").unwrap();
    let value = CString::new("0.03").unwrap();
    assert_eq!(
        unsafe { ps_config_set(cfg, key.as_ptr(), value.as_ptr()) },
        PsStatus::Ok
    );
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { ps_config_get(cfg, key.as_ptr(), &mut out) },
        PsStatus::Ok
    );
    assert_eq!(take_string(out).parse::<f64>().unwrap(), 0.03);

    let bad = CString::new("zero point one").unwrap();
    assert_eq!(
        unsafe { ps_config_set(cfg, key.as_ptr(), bad.as_ptr()) },
        PsStatus::InvalidConfig
    );
    assert!(last_error().contains("eta"));

    let unknown = CString::new("colour").unwrap();
    assert_eq!(
        unsafe { ps_config_set(cfg, unknown.as_ptr(), value.as_ptr()) },
        PsStatus::InvalidConfig
    );
    unsafe { ps_config_free(cfg) };
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let cfg = new_config("bso-scan");
    let key = CString::new("points").unwrap();
    let value = CString::new("16").unwrap();
    assert_eq!(
        unsafe { ps_config_set(cfg, key.as_ptr(), value.as_ptr()) },
        PsStatus::Ok
    );
    assert_eq!(unsafe { ps_config_set_seed(cfg, 7) }, PsStatus::Ok);
    let mut summary = ptr::null_mut();
    assert_eq!(
        unsafe { ps_run(cfg, cpath.as_ptr(), &mut summary) },
        PsStatus::Ok
    );
    assert!(take_string(summary).contains("fit_amplitude:"));
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("# "));
    // 16 data rows plus the column header
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 17);
    assert!(dir.path().join("scan.manifest.toml").exists());
    unsafe { ps_config_free(cfg) };
}

#[test]
fn run_into_missing_directory_fails() {
    let cfg = new_config("reversal");
    let path = CString::new("/nonexistent-dir/x/out.csv").unwrap();
    assert_eq!(
        unsafe { ps_run(cfg, path.as_ptr(), ptr::null_mut()) },
        PsStatus::RunFailed
    );
    assert!(last_error().contains("writing output"));
    unsafe { ps_config_free(cfg) };
}

#[test]
fn bso_scan_matches_core() {
    let n = 32;
    let mut phases = vec![0.0; n];
    let mut pops = vec![0.0; n];
    let mut fit = PsFringeFit::default();
    let status = unsafe {
        ps_bso_scan(
            0.02,
            1.0,
            n,
            phases.as_mut_ptr(),
            pops.as_mut_ptr(),
            &mut fit,
        )
    };
    assert_eq!(status, PsStatus::Ok);
    assert_eq!(phases[0], 0.0);
    assert!(pops.iter().all(|p| (0.0..=1.0).contains(p)));
    // fringe depth tracks 2 eta to within ten percent
    assert!((fit.depth / 0.04 - 1.0).abs() < 0.1, "depth {}", fit.depth);
    assert!((fit.offset - 0.5).abs() < 0.01);

    let status = unsafe {
        ps_bso_scan(
            0.02,
            1.0,
            2,
            phases.as_mut_ptr(),
            pops.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, PsStatus::BufferTooSmall);
}

#[test]
fn teleport_summary_is_consistent_and_deterministic() {
    let mut a = PsProtocolSummary::default();
    let mut b = PsProtocolSummary::default();
    assert_eq!(
        unsafe { ps_teleport(0.3, 0.0, 0.05, 2000, 11, &mut a) },
        PsStatus::Ok
    );
    assert_eq!(
        unsafe { ps_teleport(0.3, 0.0, 0.05, 2000, 11, &mut b) },
        PsStatus::Ok
    );
    assert_eq!(a, b);
    assert_eq!(a.pairs, 2000);
    assert!(a.l <= a.m && a.m <= a.pairs);
    assert!((a.alice_probability - 0.5).abs() < 1e-9);

    let mut c = PsProtocolSummary::default();
    assert_eq!(
        unsafe { ps_teleport(0.3, 0.0, 0.4, 10, 11, &mut c) },
        PsStatus::InvalidConfig
    );
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/phasesync.h"))
            .unwrap();
    for name in [
        "ps_config_new",
        "ps_config_free",
        "ps_config_set",
        "ps_config_set_seed",
        "ps_config_get",
        "ps_run",
        "ps_bso_scan",
        "ps_teleport",
        "ps_last_error_message",
        "ps_string_free",
        "typedef struct PsConfig PsConfig",
        "PS_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
