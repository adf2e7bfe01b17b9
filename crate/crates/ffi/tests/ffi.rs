use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use covclebsch_ffi::*;

fn last_error() -> String {
    let p = cc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn algebra(name: &str) -> *mut CcAlgebra {
    let name = CString::new(name).unwrap();
    let mut alg = ptr::null_mut();
    assert_eq!(unsafe { cc_algebra_builtin(name.as_ptr(), &mut alg) }, CcStatus::Ok);
    alg
}

#[test]
fn so3_bracket_and_coadjoint() {
    let alg = algebra("so3");
    assert_eq!(unsafe { cc_algebra_dim(alg) }, 3);
    let (x, y) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let mut out = [0.0; 3];
    let st = unsafe { cc_algebra_bracket(alg, x.as_ptr(), y.as_ptr(), out.as_mut_ptr(), 3) };
    assert_eq!(st, CcStatus::Ok);
    assert_eq!(out, [0.0, 0.0, 1.0]);

    let mu = [0.3, -1.2, 0.7];
    let st = unsafe { cc_algebra_ad_star(alg, mu.as_ptr(), mu.as_ptr(), out.as_mut_ptr(), 3) };
    assert_eq!(st, CcStatus::Ok);
    assert!(out.iter().all(|v| v.abs() < 1e-14));

    let mut jac = 1.0;
    assert_eq!(unsafe { cc_algebra_jacobi_residual(alg, &mut jac) }, CcStatus::Ok);
    assert!(jac < 1e-14);
    unsafe { cc_algebra_free(alg) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let bad = CString::new("e8").unwrap();
    let mut alg = ptr::null_mut();
    assert_eq!(unsafe { cc_algebra_builtin(bad.as_ptr(), &mut alg) }, CcStatus::InvalidArgument);
    assert!(alg.is_null());
    assert!(last_error().contains("invalid-argument"));

    let alg = algebra("se3");
    let x = [0.0; 3];
    let mut out = [0.0; 3];
    let st = unsafe { cc_algebra_bracket(alg, x.as_ptr(), x.as_ptr(), out.as_mut_ptr(), 3) };
    assert_eq!(st, CcStatus::InvalidArgument);
    assert!(last_error().contains("expected 6, got 3"));
    let st = unsafe { cc_algebra_bracket(alg, ptr::null(), x.as_ptr(), out.as_mut_ptr(), 6) };
    assert_eq!(st, CcStatus::NullPointer);
    unsafe { cc_algebra_free(alg) };
    unsafe { cc_algebra_free(ptr::null_mut()) };

    let mut v = 0.0;
    assert_eq!(unsafe { cc_kernel_eval_1d(-1.0, 0.0, 0.0, &mut v) }, CcStatus::InvalidArgument);
    assert_eq!(unsafe { cc_kernel_eval_1d(2.0, 1.0, 0.0, &mut v) }, CcStatus::Ok);
    assert!((v - (-0.5f64).exp() / 4.0).abs() < 1e-15);
    assert!(cc_last_error_message().is_null());

    let name = unsafe { CStr::from_ptr(cc_status_name(CcStatus::NearCollision)) };
    assert_eq!(name.to_str().unwrap(), "near-collision");
}

#[test]
fn two_peakons_conserve_the_hamiltonian() {
    let grid = CcGrid { n_s: 1, s_extent: 1.0, dt: 1e-3, t_end: 1.0 };
    let (q, m) = ([-2.5, 2.5], [1.0, 0.8]);
    let mut sim = ptr::null_mut();
    let st = unsafe { cc_peakon_new(1.0, grid, 2, q.as_ptr(), m.as_ptr(), 10, &mut sim) };
    assert_eq!(st, CcStatus::Ok, "{}", last_error());
    let (mut t, mut h0, mut h1) = (0.0, 0.0, 0.0);
    unsafe { cc_peakon_observe(sim, &mut t, &mut h0) };
    assert_eq!(unsafe { cc_peakon_step(sim, 500) }, CcStatus::Ok);
    unsafe { cc_peakon_observe(sim, &mut t, &mut h1) };
    assert!((t - 0.5).abs() < 1e-12);
    assert!(((h1 - h0) / h0).abs() < 1e-8);

    let mut qs = [0.0; 2];
    let st = unsafe { cc_peakon_state(sim, qs.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 2) };
    assert_eq!(st, CcStatus::Ok);
    assert!(qs[0] > -2.5 && qs[1] > 2.5);
    unsafe { cc_peakon_free(sim) };
}

#[test]
fn coincident_peakons_are_rejected() {
    let grid = CcGrid { n_s: 1, s_extent: 1.0, dt: 1e-3, t_end: 1.0 };
    let (q, m) = ([0.5, 0.5], [1.0, 1.0]);
    let mut sim = ptr::null_mut();
    let st = unsafe { cc_peakon_new(1.0, grid, 2, q.as_ptr(), m.as_ptr(), 1, &mut sim) };
    assert_eq!(st, CcStatus::NearCollision);
    assert!(sim.is_null());
}

#[test]
fn chiral_strand_conserves_energy() {
    let alg = algebra("so3");
    let n_s = 32;
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let neg: Vec<f64> = eye.iter().map(|v| -v).collect();
    let l = std::f64::consts::TAU;
    let mut nu = vec![0.0; 3 * n_s];
    let mut gamma = vec![0.0; 3 * n_s];
    for j in 0..n_s {
        let s = l * j as f64 / n_s as f64;
        nu[3 * j] = 0.2 * s.sin();
        gamma[3 * j + 1] = 0.1 * s.cos();
        gamma[3 * j + 2] = 0.3;
    }
    let grid = CcGrid { n_s, s_extent: l, dt: 1e-3, t_end: 1.0 };
    let mut sim = ptr::null_mut();
    let st = unsafe {
        cc_strand_new(alg, eye.as_ptr(), neg.as_ptr(), grid, nu.as_ptr(), gamma.as_ptr(), 10, &mut sim)
    };
    assert_eq!(st, CcStatus::Ok, "{}", last_error());
    unsafe { cc_algebra_free(alg) };

    let (mut t, mut e0, mut e1) = (0.0, 0.0, 0.0);
    unsafe { cc_strand_observe(sim, &mut t, &mut e0) };
    assert_eq!(unsafe { cc_strand_step(sim, 200) }, CcStatus::Ok);
    unsafe { cc_strand_observe(sim, &mut t, &mut e1) };
    assert!(((e1 - e0) / e0).abs() < 1e-10);

    let mut out = vec![0.0; 3 * n_s];
    assert_eq!(unsafe { cc_strand_field(sim, out.as_mut_ptr(), ptr::null_mut(), out.len()) }, CcStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite()) && out != nu);
    assert_eq!(unsafe { cc_strand_field(sim, out.as_mut_ptr(), ptr::null_mut(), 5) }, CcStatus::InvalidArgument);
    unsafe { cc_strand_free(sim) };
}

#[test]
fn run_config_writes_outputs_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "scenario = \"ch_classical\"\n[grid]\nt_end = 0.5\n").unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cc_run_config(path.as_ptr()) }, CcStatus::Ok, "{}", last_error());
    assert!(dir.path().join("output/ch_classical_diagnostics.json").exists());

    std::fs::write(&cfg, "scenario = \"ch_classical\"\n[grid\n").unwrap();
    assert_eq!(unsafe { cc_run_config(path.as_ptr()) }, CcStatus::Parse);
    let missing = CString::new(dir.path().join("nope.toml").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cc_run_config(missing.as_ptr()) }, CcStatus::Io);
    assert_eq!(unsafe { cc_run_config(ptr::null()) }, CcStatus::NullPointer);
}

#[test]
fn header_declares_every_entry_point_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/covclebsch.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "cc_last_error_message",
        "cc_status_name",
        "cc_algebra_builtin",
        "cc_algebra_bracket",
        "cc_algebra_ad_star",
        "cc_kernel_eval_1d",
        "cc_peakon_new",
        "cc_peakon_state",
        "cc_strand_new",
        "cc_strand_field",
        "cc_run_config",
        "CC_STATUS_NEAR_COLLISION = 5",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    if let Ok(o) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}
