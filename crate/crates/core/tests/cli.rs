mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use hlc_core::corpus::write_corpus;
use hlc_core::signal::wav;

fn hlc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlc"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hlc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("corpus"), &corpus(2, 3, 1.0)).unwrap();
    dir
}

#[test]
fn zero_table_compensation_is_transparent() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("zero.csv"), "level_db,1,2,3,4,5,6,7,8\n0,0,0,0,0,0,0,0,0\n").unwrap();
    ok(d, &["camfit-init", "--table", "zero.csv", "-o", "p.json"]);
    ok(d, &["compensate", "--params", "p.json", "corpus/utt_000.wav", "out.wav"]);
    let opts = wav::ReadOptions::default();
    let x = wav::read(&d.join("corpus/utt_000.wav"), opts).unwrap();
    let y = wav::read(&d.join("out.wav"), opts).unwrap();
    assert!(max_abs_diff(x.samples(), y.samples()) <= 1e-6);
    assert!(d.join("out.wav.manifest.json").exists());
}

#[test]
fn gain_curves_reproduce_the_prescription() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["prescribe", "--audiogram", "S2", "-o", "t.csv"]);
    ok(d, &["camfit-init", "--table", "t.csv", "-o", "p.json"]);
    ok(d, &["gain-curves", "--params", "p.json", "-o", "c.csv"]);
    let read = |n: &str| hlc_core::dpn::GainTable::read(&d.join(n)).unwrap();
    let (t, c) = (read("t.csv"), read("c.csv"));
    assert_eq!(t.levels, c.levels);
    for (a, b) in t.gains.iter().flatten().zip(c.gains.iter().flatten()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    let code = |args: &[&str]| hlc(d, args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["simulate", "--audiogram", "N4", "--smearing-only", "--recruitment-only", "a", "b"]), 1);
    assert_eq!(code(&["eval", "--audiogram", "N4", "--corpus", "corpus", "--conditions", "dpn-x", "-o", "r.csv"]), 1);
    assert_eq!(code(&["simulate", "--audiogram", "N4", "missing.wav", "o.wav"]), 2);
    assert_eq!(code(&["simulate", "--audiogram", "Q7", "corpus/utt_000.wav", "o.wav"]), 2);
    assert_eq!(code(&["eval", "--audiogram", "N4", "--corpus", "corpus", "--conditions", "dpn-ft", "-o", "r.csv"]), 2);
    let err = String::from_utf8_lossy(&hlc(d, &["eval", "--audiogram", "N4", "--corpus", "corpus", "--conditions", "dpn-ft", "-o", "r.csv"]).stderr).into_owned();
    assert!(err.contains("hlc fit"), "{err}");
}

#[test]
fn fit_writes_params_history_and_manifest() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"max_epochs": 1, "excerpt_frames": 300, "batch_size": 2, "lr": 0.01}"#,
    )
    .unwrap();
    let out = ok(d, &["fit", "--config", "cfg.json", "--train", "corpus", "--val", "corpus", "-o", "ft.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch   1"));
    let h = hlc_core::train::read_history(&d.join("ft.json.history.csv")).unwrap();
    assert_eq!(h.len(), 2);
    hlc_core::dpn::DpnParams::read(&d.join("ft.json")).unwrap();
    std::fs::write(d.join("bad.json"), r#"{"alpha": 2.0}"#).unwrap();
    assert_eq!(hlc(d, &["fit", "--config", "bad.json", "--train", "corpus", "--val", "corpus", "-o", "x.json"]).status.code(), Some(1));
    std::fs::write(d.join("typo.json"), r#"{"alhpa": 0.5}"#).unwrap();
    assert_eq!(hlc(d, &["fit", "--config", "typo.json", "--train", "corpus", "--val", "corpus", "-o", "x.json"]).status.code(), Some(2));
}

#[test]
fn replay_detects_a_changed_record() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["simulate", "--audiogram", "N2", "corpus/utt_001.wav", "sim.wav"]);
    let m = d.join("sim.wav.manifest.json");
    let replay = ok(d, &["replay", m.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&replay.stdout).contains("identical"));
    let text = std::fs::read_to_string(&m).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let sha = v["outputs"][0]["sha256"].as_str().unwrap().to_string();
    std::fs::write(&m, text.replace(&sha, &"0".repeat(64))).unwrap();
    assert_eq!(hlc(d, &["replay", m.to_str().unwrap()]).status.code(), Some(2));
}
