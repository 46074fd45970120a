use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use aqmsim_ffi::*;

fn last_error() -> String {
    let p = aqm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn reference() -> *mut AqmScenario {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { aqm_scenario_reference(&mut s) }, AqmStatus::Ok);
    s
}

fn channel(series: *const AqmSeries, name: &str) -> Vec<f64> {
    let name = CString::new(name).unwrap();
    let mut n = 0usize;
    let st = unsafe { aqm_series_channel(series, name.as_ptr(), ptr::null_mut(), 0, &mut n) };
    if n > 0 {
        assert_eq!(st, AqmStatus::NullPointer);
    }
    let mut buf = vec![0.0; n];
    let st = unsafe { aqm_series_channel(series, name.as_ptr(), buf.as_mut_ptr(), n, &mut n) };
    assert_eq!(st, AqmStatus::Ok);
    buf
}

#[test]
fn drop_probability_and_errors() {
    let mut p = f64::NAN;
    assert_eq!(unsafe { aqm_drop_probability(10.0, 5.0, 15.0, 0.1, &mut p) }, AqmStatus::Ok);
    assert!((p - 0.05).abs() < 1e-15);
    assert_eq!(unsafe { aqm_drop_probability(20.0, 5.0, 15.0, 0.1, &mut p) }, AqmStatus::Ok);
    assert_eq!(p, 1.0);
    let st = unsafe { aqm_drop_probability(1.0, 15.0, 5.0, 0.1, &mut p) };
    assert_eq!(st, AqmStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let st = unsafe { aqm_drop_probability(1.0, 5.0, 15.0, 0.1, ptr::null_mut()) };
    assert_eq!(st, AqmStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn equilibrium_of_reference() {
    let s = reference();
    let mut e = AqmEquilibrium::default();
    assert_eq!(unsafe { aqm_equilibrium(s, &mut e) }, AqmStatus::Ok);
    assert!(((10.0 + e.q).powi(2) * (e.q - 5.0) - 200.0).abs() < 1e-8);
    assert_eq!(e.branch, AqmRegion::Linear as i32);
    assert_eq!(unsafe { aqm_equilibrium(ptr::null(), &mut e) }, AqmStatus::NullPointer);
    unsafe { aqm_scenario_free(s) };
}

#[test]
fn scenario_validation() {
    let mut s = ptr::null_mut();
    let st = unsafe { aqm_scenario_new(100.0, 0.1, 4, 50, 20.0, 15.0, 0.1, 0.0, &mut s) };
    assert_eq!(st, AqmStatus::InvalidArgument);
    assert!(s.is_null());
    let st = unsafe { aqm_scenario_new(100.0, 0.1, 4, 50, 5.0, 15.0, 0.1, 0.002, &mut s) };
    assert_eq!(st, AqmStatus::Ok);
    unsafe { aqm_scenario_free(s) };
    unsafe { aqm_scenario_free(ptr::null_mut()) };
}

#[test]
fn series_handles() {
    let s = reference();
    let mut m = ptr::null_mut();
    let st = unsafe { aqm_integrate_moments(s, 1.0, 0.0, 0.0, 60.0, 1e-3, 0.1, &mut m) };
    assert_eq!(st, AqmStatus::Ok);
    assert_eq!(unsafe { aqm_series_len(m) }, 601);
    assert_eq!(unsafe { aqm_series_channel_count(m) }, 3);
    let name = unsafe { CStr::from_ptr(aqm_series_channel_name(m, 1)) };
    assert_eq!(name.to_str().unwrap(), "Q");
    assert!(unsafe { aqm_series_channel_name(m, 3) }.is_null());
    let q = channel(m, "Q");
    assert!((q[600] - 5.801047).abs() < 1e-4);

    let mut small = [0.0; 4];
    let mut n = 0;
    let st = unsafe { aqm_series_times(m, small.as_mut_ptr(), small.len(), &mut n) };
    assert_eq!((st, n), (AqmStatus::BufferTooSmall, 601));

    let missing = CString::new("nope").unwrap();
    let mut avg = 0.0;
    let st = unsafe { aqm_series_time_average(m, missing.as_ptr(), 0.0, &mut avg) };
    assert_eq!(st, AqmStatus::NotFound);

    let mut d = ptr::null_mut();
    assert_eq!(unsafe { aqm_simulate_des(s, 20.0, 1, 0.1, &mut d) }, AqmStatus::Ok);
    let qname = CString::new("q").unwrap();
    let st = unsafe { aqm_series_time_average(d, qname.as_ptr(), 4.0, &mut avg) };
    assert_eq!(st, AqmStatus::Ok);
    assert!(avg > 0.0 && avg < 50.0);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { aqm_simulate_hybrid(s, 30.0, 1e-3, 0.01, 2, &mut h) }, AqmStatus::Ok);
    let mut osc = AqmOscillation::default();
    let wname = CString::new("W").unwrap();
    assert_eq!(unsafe { aqm_detect_oscillation(h, wname.as_ptr(), 6.0, 5.0, &mut osc) }, AqmStatus::Ok);
    assert!(osc.detected == 0 || osc.dominant_period > 0.0);

    let mut f = ptr::null_mut();
    assert_eq!(unsafe { aqm_fluid_ensemble(s, 16, 2.0, 1e-3, 0.1, 3, &mut f) }, AqmStatus::Ok);
    assert_eq!(channel(f, "W_mean").len(), 21);

    unsafe {
        aqm_series_free(m);
        aqm_series_free(d);
        aqm_series_free(h);
        aqm_series_free(f);
        aqm_scenario_free(s);
    }
}

#[test]
fn run_config_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = CString::new(
        "model = \"moments\"\nseed = 1\nduration = 5.0\n[link]\ncapacity = 100.0\nprop_rtt = 0.1\n\
         [red]\nq_min = 5.0\nq_max = 15.0\np_max = 0.1\n",
    )
    .unwrap();
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { aqm_run_config(cfg.as_ptr(), dir.as_ptr()) }, AqmStatus::Ok);
    assert!(tmp.path().join("equilibrium.json").exists());
    let bad = CString::new("model = \"moments\"\n").unwrap();
    assert_eq!(unsafe { aqm_run_config(bad.as_ptr(), dir.as_ptr()) }, AqmStatus::Config);
    assert!(last_error().contains("seed"));
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(aqm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header must compile as C and as C++.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include.join("aqmsim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["aqm_last_error", "aqm_equilibrium", "aqm_series_free", "AQM_STATUS_BUFFER_TOO_SMALL"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"aqmsim.h\"\nint main(void) {\n  AqmScenario *s = 0;\n  AqmEquilibrium e;\n  \
         AqmStatus st = aqm_scenario_reference(&s);\n  st = aqm_equilibrium(s, &e);\n  aqm_scenario_free(s);\n  \
         return st == AQM_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    for (compiler, extra) in [("cc", vec!["-std=c99"]), ("c++", vec!["-x", "c++"])] {
        let status = Command::new(compiler)
            .args(&extra)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(&include)
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("skipping {compiler}: {e}"),
        }
    }
}
