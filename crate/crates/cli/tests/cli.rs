use std::path::Path;
use std::process::{Command, Output};

fn pamt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamt")).args(args).output().expect("spawn pamt")
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("config.json");
    std::fs::write(
        &p,
        r#"{"corpus": {"classes": 2, "clips_per_class": 2, "clip_seconds": 0.25}}"#,
    )
    .unwrap();
    p.display().to_string()
}

fn synth(cfg: &str, out: &Path, seed: &str) {
    let o = pamt(&["--config", cfg, "--seed", seed, "--out", &out.display().to_string(), "synth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&cfg, &a, "3");
    synth(&cfg, &b, "3");
    synth(&cfg, &c, "4");
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["labels.csv", "c0_0000.wav", "c1_0001.wav"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "c0_0000.wav"), read(&c, "c0_0000.wav"));
    let labels = String::from_utf8(read(&a, "labels.csv")).unwrap();
    assert!(labels.starts_with("# pamt 0.1.0 | command synth | seed 3 | config sha256 "));
}

#[test]
fn perturb_writes_spec_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let corpus = dir.path().join("corpus");
    synth(&cfg, &corpus, "1");
    let input = corpus.join("c0_0000.wav").display().to_string();
    let output = dir.path().join("up.wav");
    let o = pamt(&[
        "--config",
        &cfg,
        "perturb",
        &input,
        &output.display().to_string(),
        "--kind",
        "pitch",
        "--semitones",
        "-2.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("up.json")).unwrap()).unwrap();
    assert_eq!(doc["spec"]["kind"], "PitchShift");
    assert_eq!(doc["spec"]["params"]["semitones"], -2.5);
    assert_eq!(doc["provenance"]["command"], "perturb");
}

#[test]
fn exit_codes_distinguish_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"corpus": {"clasess": 2}}"#).unwrap();
    let out = dir.path().join("x").display().to_string();
    let code = |args: &[&str]| pamt(args).status.code();
    assert_eq!(code(&["--config", &bad.display().to_string(), "--out", &out, "synth"]), Some(1));
    assert_eq!(code(&["synth"]), Some(1));
    assert_eq!(code(&["--out", &out, "train"]), Some(1));
    assert_eq!(code(&["no-such-command"]), Some(1));
    let cfg = small_config(dir.path());
    let missing = dir.path().join("missing.wav").display().to_string();
    let o = dir.path().join("o.wav").display().to_string();
    assert_eq!(code(&["--config", &cfg, "perturb", &missing, &o, "--kind", "l2"]), Some(2));
    assert_eq!(
        code(&["--config", &cfg, "perturb", &missing, &o, "--kind", "l2", "--ratio", "3"]),
        Some(1)
    );
}
