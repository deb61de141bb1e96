use std::path::Path;
use std::process::{Command, Output};

fn sebcom(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sebcom")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = sebcom(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null)
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(v["message"].is_string());
    v
}

fn setup(dir: &Path) {
    ok(dir, &["gen-corpus", "--family", "blobs", "--n", "2", "--size", "64", "--seed", "3", "--out", "c"]);
    ok(dir, &["train-kb", "--images", "c", "--k-coarse", "4", "--k-fine", "4", "--out", "kb.sebk"]);
}

#[test]
fn noiseless_transmit_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(d, &["encode", "--kb", "kb.sebk", "--image", "c/blobs_001.pgm", "--out", "f.sebf"]);
    let summary = ok(d, &["transmit", "--frame", "f.sebf", "--snr", "inf", "--out", "rx.sebf"]);
    assert_eq!(summary["lost"], false);
    assert_eq!(summary["snr_db"], "inf");
    assert_eq!(std::fs::read(d.join("f.sebf")).unwrap(), std::fs::read(d.join("rx.sebf")).unwrap());
}

#[test]
fn lost_frame_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(d, &["encode", "--kb", "kb.sebk", "--image", "c/blobs_000.pgm", "--out", "f.sebf"]);
    let summary = ok(d, &["transmit", "--frame", "f.sebf", "--snr", "-12", "--out", "rx.sebf"]);
    assert_eq!(summary["lost"], true);
    assert!(!d.join("rx.sebf").exists());
}

#[test]
fn sync_apply_reproduces_the_sender() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(d, &["gen-corpus", "--family", "checker", "--n", "2", "--size", "64", "--out", "g"]);
    let sent = ok(d, &["sync", "delta", "--kb", "kb.sebk", "--images", "g", "--k-coarse", "2", "--k-fine", "2",
        "--out", "delta.sebk", "--out-kb", "ap.sebk"]);
    let applied = ok(d, &["sync", "apply", "--kb", "kb.sebk", "--message", "delta.sebk", "--out", "ue.sebk"]);
    assert_eq!(sent["kb_hash"], applied["kb_hash"]);
    assert_eq!(applied["kb_version"], 1);

    // Applying again is stale.
    let err = error_line(&sebcom(d, &["sync", "apply", "--kb", "ue.sebk", "--message", "delta.sebk", "--out", "x"]));
    assert_eq!(err["error"], "sync");
    // A FULL heals it.
    ok(d, &["sync", "full", "--kb", "ap.sebk", "--out", "full.sebk"]);
    let healed = ok(d, &["sync", "apply", "--kb", "ue.sebk", "--message", "full.sebk", "--out", "ue2.sebk"]);
    assert_eq!(healed["kb_hash"], sent["kb_hash"]);
}

#[test]
fn failures_print_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let e = error_line(&sebcom(d, &["gen-corpus", "--family", "noise", "--out", "z"]));
    assert_eq!(e["error"], "harness");
    let e = error_line(&sebcom(d, &["decode", "--kb", "missing.sebk", "--frame", "f", "--out", "o"]));
    assert_eq!(e["error"], "io");
    std::fs::write(d.join("junk.sebf"), b"SEBFjunk").unwrap();
    setup(d);
    let e = error_line(&sebcom(d, &["decode", "--kb", "kb.sebk", "--frame", "junk.sebf", "--out", "o"]));
    assert_eq!(e["error"], "codec");
    let e = error_line(&sebcom(d, &["sync", "request", "--kb", "junk.sebf", "--statistic", "1", "--out", "o"]));
    assert_eq!(e["error"], "sync");
    std::fs::write(d.join("bad.json"), b"{\"phases\": 3}").unwrap();
    let e = error_line(&sebcom(d, &["run-scenario", "--config", "bad.json"]));
    assert_eq!(e["error"], "config");
}
