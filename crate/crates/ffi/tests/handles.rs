use std::ffi::{CStr, CString};
use std::ptr;

use lpvjump_ffi::*;

const SCALAR: &str = r#"
n = 1
n_w = 1
n_z = 1
box = [0.0, 1.0]
h = 0.001
lambda0 = 0.0

[matrices.A]
0 = [[-1.0]]

[matrices.E]
0 = [[1.0]]

[matrices.C]
0 = [[1.0]]
"#;

fn parse(text: &str) -> *mut LpvjSystem {
    let c = CString::new(text).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { lpvj_system_parse(c.as_ptr(), &mut sys) }, LpvjStatus::Ok);
    assert!(!sys.is_null());
    sys
}

fn last_error() -> String {
    let p = lpvj_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn analyze_first_order_lowpass() {
    let sys = parse(SCALAR);
    let mut opts = lpvj_options_default();
    opts.grid = 5;
    let mut cert = ptr::null_mut();
    let st = unsafe { lpvj_analyze(sys, 1, f64::NAN, f64::NAN, &opts, &mut cert) };
    assert_eq!(st, LpvjStatus::Ok);
    let gamma = unsafe { lpvj_certificate_gamma(cert) };
    assert!((1.0..=1.05).contains(&gamma), "{gamma}");
    let text = unsafe { lpvj_certificate_to_text(cert) };
    assert!(unsafe { CStr::from_ptr(text) }.to_str().unwrap().contains("gamma"));
    unsafe {
        lpvj_string_free(text);
        lpvj_certificate_free(cert);
        lpvj_system_free(sys);
    }
}

#[test]
fn dims_and_null_outputs() {
    let sys = parse(SCALAR);
    let (mut n, mut n_u) = (0usize, 9usize);
    let st = unsafe { lpvj_system_dims(sys, &mut n, ptr::null_mut(), &mut n_u, ptr::null_mut()) };
    assert_eq!(st, LpvjStatus::Ok);
    assert_eq!((n, n_u), (1, 0));
    unsafe { lpvj_system_free(sys) };
}

#[test]
fn error_codes() {
    let bad = CString::new("n = ").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { lpvj_system_parse(bad.as_ptr(), &mut sys) }, LpvjStatus::Validation);
    assert!(sys.is_null());
    assert!(last_error().contains("parse error"));

    assert_eq!(unsafe { lpvj_system_parse(ptr::null(), &mut sys) }, LpvjStatus::InvalidArgument);

    let sys = parse(SCALAR);
    let mut ctrl = ptr::null_mut();
    // No input channel: synthesis is refused before any solve.
    assert_eq!(unsafe { lpvj_synthesize(sys, 3, f64::NAN, f64::NAN, ptr::null(), &mut ctrl) }, LpvjStatus::Validation);
    assert_eq!(unsafe { lpvj_synthesize(sys, 1, f64::NAN, f64::NAN, ptr::null(), &mut ctrl) }, LpvjStatus::InvalidArgument);
    assert!(last_error().contains("3 or 4"));
    unsafe { lpvj_system_free(sys) };
}

#[test]
fn uncontrollable_plant_is_infeasible() {
    // Unstable mode with no input path.
    let text = r#"
n = 1
n_w = 1
n_u = 1
n_z = 1
box = [0.0, 1.0]
h = 0.01
lambda0 = 1.0

[matrices.A]
0 = [[1.0]]

[matrices.C]
0 = [[1.0]]
"#;
    let sys = parse(text);
    let mut opts = lpvj_options_default();
    opts.grid = 5;
    let mut ctrl = ptr::null_mut();
    let st = unsafe { lpvj_synthesize(sys, 3, f64::NAN, f64::NAN, &opts, &mut ctrl) };
    assert_eq!(st, LpvjStatus::Infeasible, "{}", last_error());
    assert!(ctrl.is_null());
    unsafe { lpvj_system_free(sys) };
}

#[test]
fn controller_round_trip_and_gains() {
    let text = r#"
n = 1
n_w = 1
n_u = 1
n_z = 1
box = [0.0, 1.0]
h = 0.01
lambda0 = 1.0
history = ["1"]

[matrices.A]
0 = [[1.0]]

[matrices.B]
0 = [[1.0]]

[matrices.E]
0 = [[1.0]]

[matrices.C]
0 = [[1.0]]

[matrices.D]
0 = [[1.0]]
"#;
    let sys = parse(text);
    let mut opts = lpvj_options_default();
    opts.grid = 5;
    let mut ctrl = ptr::null_mut();
    assert_eq!(unsafe { lpvj_synthesize(sys, 3, f64::NAN, f64::NAN, &opts, &mut ctrl) }, LpvjStatus::Ok);
    let (mut k, mut kd) = ([0.0], [0.0]);
    assert_eq!(unsafe { lpvj_controller_gains(ctrl, 0.5, k.as_mut_ptr(), kd.as_mut_ptr(), 1) }, LpvjStatus::Ok);
    // The closed loop 1 + k + kd must be stable.
    assert!(1.0 + k[0] + kd[0] < 0.0, "{k:?} {kd:?}");
    assert_eq!(unsafe { lpvj_controller_gains(ctrl, 0.5, k.as_mut_ptr(), kd.as_mut_ptr(), 0) }, LpvjStatus::InvalidArgument);

    let s = unsafe { lpvj_controller_to_text(ctrl) };
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { lpvj_controller_parse(s, &mut back) }, LpvjStatus::Ok);
    assert_eq!(unsafe { lpvj_controller_gamma(back) }, unsafe { lpvj_controller_gamma(ctrl) });

    let (mut ratio, mut div) = (f64::NAN, 7usize);
    let st = unsafe { lpvj_simulate_mean_square(sys, back, 4, 1e-3, 5.0, 3, &mut ratio, &mut div) };
    assert_eq!(st, LpvjStatus::Ok);
    assert_eq!(div, 0);
    assert!(ratio < 1e-3, "{ratio}");
    unsafe {
        lpvj_string_free(s);
        lpvj_controller_free(ctrl);
        lpvj_controller_free(back);
        lpvj_system_free(sys);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/lpvjump.h");
    for name in [
        "lpvj_last_error",
        "lpvj_system_parse",
        "lpvj_analyze",
        "lpvj_synthesize",
        "lpvj_controller_gains",
        "lpvj_simulate_mean_square",
        "LPVJ_STATUS_INFEASIBLE = 3",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
