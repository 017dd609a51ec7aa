use std::ffi::{CStr, CString};
use std::ptr;

use hvffbs_ffi::*;

const SMALL: &str = "[model]\nrows = 5\ncols = 5\nT = 4\n\n[method]\npattern = hv\nr = 4,2,2\nN = auto\n";

fn new_sampler(text: &str) -> *mut HvSampler {
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { hvffbs_sampler_new(c.as_ptr(), &mut s) }, HvffbsStatus::Ok, "{}", last_error());
    assert!(!s.is_null());
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(hvffbs_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn draws_have_requested_layout_and_are_reproducible() {
    let s = new_sampler(SMALL);
    let (mut n, mut t) = (0usize, 0usize);
    unsafe {
        assert_eq!(hvffbs_sampler_state_dim(s, &mut n), HvffbsStatus::Ok);
        assert_eq!(hvffbs_sampler_horizon(s, &mut t), HvffbsStatus::Ok);
    }
    assert_eq!((n, t), (25, 4));

    let mut buf = vec![0.0; 3 * n * t];
    unsafe {
        assert_eq!(hvffbs_sampler_draw(s, 3, 9, buf.as_mut_ptr(), buf.len()), HvffbsStatus::InvalidState);
        assert_eq!(hvffbs_sampler_simulate(s, 4), HvffbsStatus::Ok);
        assert_eq!(hvffbs_sampler_draw(s, 3, 9, buf.as_mut_ptr(), buf.len()), HvffbsStatus::Ok);
    }
    assert!(buf.iter().all(|v| v.is_finite()));
    assert!(buf.iter().any(|v| *v != 0.0));

    let mut again = vec![0.0; buf.len()];
    unsafe { hvffbs_sampler_draw(s, 3, 9, again.as_mut_ptr(), again.len()) };
    assert_eq!(buf, again);

    let mut truth = vec![0.0; n * t];
    unsafe { assert_eq!(hvffbs_sampler_truth(s, truth.as_mut_ptr(), truth.len()), HvffbsStatus::Ok) };
    assert!(truth.iter().any(|v| *v != 0.0));

    unsafe { hvffbs_sampler_free(s) };
}

#[test]
fn short_buffers_and_nulls_are_rejected() {
    let s = new_sampler(SMALL);
    let mut buf = vec![0.0; 10];
    unsafe {
        assert_eq!(hvffbs_sampler_simulate(s, 1), HvffbsStatus::Ok);
        assert_eq!(hvffbs_sampler_truth(s, buf.as_mut_ptr(), buf.len()), HvffbsStatus::BufferTooSmall);
        assert!(last_error().contains("needed"));
        assert_eq!(hvffbs_sampler_truth(s, ptr::null_mut(), 100), HvffbsStatus::NullPointer);
        assert_eq!(hvffbs_sampler_state_dim(ptr::null(), ptr::null_mut()), HvffbsStatus::NullPointer);
        hvffbs_sampler_free(s);
        hvffbs_sampler_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_reports_line() {
    let c = CString::new("[model]\nrows = 5\ncols = oops\n").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { hvffbs_sampler_new(c.as_ptr(), &mut s) }, HvffbsStatus::InvalidConfig);
    assert!(s.is_null());
    assert!(last_error().contains("line 3"), "{}", last_error());
}

#[test]
fn pattern_queries() {
    let s = new_sampler(SMALL);
    let mut nnz = 0usize;
    let mut text = ptr::null_mut();
    unsafe {
        assert_eq!(hvffbs_sampler_pattern_max_row(s, &mut nnz), HvffbsStatus::Ok);
        assert_eq!(hvffbs_sampler_pattern_text(s, &mut text), HvffbsStatus::Ok);
        let owned = CStr::from_ptr(text).to_string_lossy().into_owned();
        hvffbs_string_free(text);
        hvffbs_sampler_free(s);
        assert!(!owned.is_empty());
    }
    assert!(nnz >= 1 && nnz <= 25);
}

#[test]
fn crps_matches_known_values() {
    let members = [0.0, 1.0];
    let target = [0.0];
    let mut out = f64::NAN;
    unsafe { assert_eq!(hvffbs_crps(members.as_ptr(), 2, 1, target.as_ptr(), &mut out), HvffbsStatus::Ok) };
    assert!((out - 0.25).abs() < 1e-15, "{out}");

    unsafe { assert_eq!(hvffbs_crps(members.as_ptr(), 0, 1, target.as_ptr(), &mut out), HvffbsStatus::InvalidArgument) };
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(hvffbs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hvffbs.h")).unwrap();
    for name in ["hvffbs_sampler_new", "hvffbs_sampler_draw", "hvffbs_crps", "hvffbs_last_error", "HVFFBS_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"hvffbs.h\"\nint main(void) {\n  HvSampler *s = 0;\n  HvffbsStatus st = hvffbs_sampler_new(\"\", &s);\n  hvffbs_sampler_free(s);\n  return st == HVFFBS_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hvffbs-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
