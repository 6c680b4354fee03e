use std::ffi::{CStr, CString};
use std::ptr;

use hlc_ffi::*;

const RATE: u32 = 44_100;

fn tone(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.1 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / RATE as f64).sin())
        .collect()
}

fn last_error() -> String {
    let p = hlc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulate_and_score() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(hlc_model_new(&mut model), HlcStatus::Ok);
        let name = CString::new("N4").unwrap();
        let mut a = ptr::null_mut();
        assert_eq!(hlc_audiogram_standard(name.as_ptr(), &mut a), HlcStatus::Ok);

        let x = tone(RATE as usize / 2);
        let mut y = vec![0.0; x.len()];
        let s = hlc_simulate(model, a, HLC_SMEARING | HLC_RECRUITMENT, x.as_ptr(), x.len(), RATE, y.as_mut_ptr());
        assert_eq!(s, HlcStatus::Ok);
        assert!(y.iter().all(|v| v.is_finite()) && y.iter().any(|v| *v != 0.0));

        let mut clean = f64::NAN;
        let s = hlc_stoi_thr(x.as_ptr(), x.as_ptr(), x.len(), RATE, -5.0, 1, &mut clean);
        assert_eq!(s, HlcStatus::Ok);
        let mut impaired = f64::NAN;
        hlc_stoi_thr(x.as_ptr(), y.as_ptr(), x.len(), RATE, -5.0, 1, &mut impaired);
        assert!(clean.is_finite() && impaired.is_finite());

        hlc_audiogram_free(a);
        hlc_model_free(model);
    }
}

#[test]
fn identity_compensation_passes_audio() {
    let json = hlc_core::dpn::DpnParams::identity(hlc_core::dpn::BandLayout::default())
        .to_json()
        .unwrap();
    let json = CString::new(json).unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(hlc_params_from_json(json.as_ptr(), &mut p), HlcStatus::Ok);
        let x = tone(8_000);
        let mut y = vec![0.0; x.len()];
        let s = hlc_compensate(p, ptr::null(), x.as_ptr(), x.len(), RATE, y.as_mut_ptr());
        assert_eq!(s, HlcStatus::Ok);
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        hlc_params_free(p);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut a = ptr::null_mut();
        let name = CString::new("Z9").unwrap();
        assert_eq!(hlc_audiogram_standard(name.as_ptr(), &mut a), HlcStatus::InvalidArgument);
        assert!(a.is_null());
        assert!(last_error().contains("Z9"));

        assert_eq!(hlc_audiogram_standard(ptr::null(), &mut a), HlcStatus::InvalidArgument);
        assert!(last_error().contains("null"));

        let path = CString::new("/nonexistent/params.json").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(hlc_params_read(path.as_ptr(), &mut p), HlcStatus::Io);

        let mut model = ptr::null_mut();
        hlc_model_new(&mut model);
        let name = CString::new("N1").unwrap();
        hlc_audiogram_standard(name.as_ptr(), &mut a);
        let x = tone(4_000);
        let mut y = vec![0.0; x.len()];
        let s = hlc_simulate(model, a, 0, x.as_ptr(), x.len(), 16_000, y.as_mut_ptr());
        assert_eq!(s, HlcStatus::UnsupportedRate);
        let s = hlc_simulate(model, a, 4, x.as_ptr(), x.len(), RATE, y.as_mut_ptr());
        assert_eq!(s, HlcStatus::InvalidArgument);

        let t = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 200.0];
        let label = CString::new("x").unwrap();
        let mut bad = ptr::null_mut();
        let s = hlc_audiogram_new(label.as_ptr(), t.as_ptr(), &mut bad);
        assert_ne!(s, HlcStatus::Ok);

        assert_eq!(hlc_model_new(&mut model), HlcStatus::Ok);
        assert!(hlc_last_error().is_null());
        hlc_audiogram_free(a);
        hlc_model_free(model);
        hlc_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/hlc.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from hlc.h");
    }
    let v = unsafe { CStr::from_ptr(hlc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c99() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hlc.h\"\nint main(void) { HlcModel *m = 0; return hlc_model_new(&m) == HLC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
