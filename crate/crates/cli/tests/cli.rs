use std::path::Path;
use std::process::{Command, Output};

fn hgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("hgp runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FIXTURE: &str = r#"{
  "sample_rate": 16000.0,
  "training_duration_s": 1.0,
  "pitches": [
    {"label": "C4", "f0_hz": 261.63},
    {"label": "E4", "f0_hz": 329.63}
  ],
  "mixtures": [
    {"name": "duo", "duration_s": 0.2, "events": [
      {"pitches": ["C4"], "onset_s": 0.0, "offset_s": 0.1},
      {"pitches": ["E4"], "onset_s": 0.1, "offset_s": 0.2}
    ]}
  ]
}"#;

#[test]
fn synth_learn_transcribe_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, FIXTURE).unwrap();
    let audio = dir.path().join("audio");
    let out = hgp(&["synth", "--spec", path(&spec), "--out", path(&audio)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["C4.wav", "E4.wav", "duo.wav", "duo_truth.csv", "fixture.json"] {
        assert!(audio.join(f).exists(), "missing {f}");
    }

    let kernels = dir.path().join("kernels");
    std::fs::create_dir(&kernels).unwrap();
    for label in ["C4", "E4"] {
        let out = hgp(&[
            "learn",
            "--input",
            path(&audio.join(format!("{label}.wav"))),
            "--pitch-label",
            label,
            "--mode",
            "fl",
            "--out",
            path(&kernels.join(format!("{label}.json"))),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let c4: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(kernels.join("C4.json")).unwrap()).unwrap();
    assert_eq!(c4["pitch_label"], "C4");
    assert_eq!(c4["components"].as_array().unwrap().len(), 10);

    let roll = dir.path().join("roll.csv");
    let trace = dir.path().join("trace.csv");
    let out = hgp(&[
        "transcribe",
        "--input",
        path(&audio.join("duo.wav")),
        "--kernels",
        path(&kernels),
        "--out",
        path(&roll),
        "--trace",
        path(&trace),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("iteration,expected_loglik,kl_f_total,kl_g_total,elbo"));

    let out = hgp(&["eval", "--pred", path(&roll), "--truth", path(&audio.join("duo_truth.csv")), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let score: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f = score["f_measure"].as_f64().unwrap();
    assert!(f >= 0.9, "F = {f}");
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("x.wav");
    let out = hgp(&["synth", "--out", path(dir.path())]);
    assert!(out.status.success());
    std::fs::copy(dir.path().join("C4.wav"), &wav).unwrap();
    let kernels = dir.path().join("kernels");
    std::fs::create_dir(&kernels).unwrap();
    let out = hgp(&[
        "learn", "--input", path(&wav), "--pitch-label", "C4", "--mode", "tm", "--out", path(&kernels.join("C4.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let transcribe = |extra: &[&str]| {
        let roll = dir.path().join("roll.csv");
        let mut args = vec!["transcribe", "--input", path(&wav), "--kernels", path(&kernels), "--out", path(&roll)];
        args.extend_from_slice(extra);
        hgp(&args).status.code()
    };
    assert_eq!(transcribe(&["--threshold", "1.5"]), Some(2));
    assert_eq!(transcribe(&["--target-pitch", "C4"]), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "no_such_field = 1\n").unwrap();
    assert_eq!(transcribe(&["--config", path(&bad)]), Some(2));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = hgp(&["transcribe", "--input", path(&wav), "--kernels", path(&empty), "--out", path(&dir.path().join("r.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(hgp(&["transcribe"]).status.code(), Some(2));
    assert_eq!(hgp(&["learn", "--mode", "xyz"]).status.code(), Some(2));
}

#[test]
fn missing_input_fails_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = hgp(&[
        "learn",
        "--input",
        path(&dir.path().join("none.wav")),
        "--pitch-label",
        "C4",
        "--out",
        path(&dir.path().join("k.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.wav"));
}
