//! Black-box behavior of the `tacnet` binary: exit codes, flag strictness,
//! one-line errors, and a miniature end-to-end pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn tacnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_flags_for_every_subcommand() {
    for cmd in ["synth", "ingest", "train", "eval", "sweep", "gradcheck", "count"] {
        let out = tacnet(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help failed");
        let text = stdout(&out);
        assert!(text.contains("--help"), "{cmd} help misses --help");
        match cmd {
            "synth" => {
                for flag in ["--out", "--n", "--max-count", "--duration-s", "--seed"] {
                    assert!(text.contains(flag), "{cmd} help misses {flag}");
                }
            }
            "train" => {
                for flag in ["--manifest", "--config", "--out", "--epochs", "--lr"] {
                    assert!(text.contains(flag), "{cmd} help misses {flag}");
                }
            }
            "eval" => {
                for flag in ["--manifest", "--ckpt", "--split", "--report"] {
                    assert!(text.contains(flag), "{cmd} help misses {flag}");
                }
            }
            "sweep" => {
                for flag in ["--manifest", "--sizes", "--budget-steps", "--out"] {
                    assert!(text.contains(flag), "{cmd} help misses {flag}");
                }
            }
            "gradcheck" => {
                for flag in ["--seed", "--full"] {
                    assert!(text.contains(flag), "{cmd} help misses {flag}");
                }
            }
            "count" => {
                for flag in ["--wav", "--ckpt", "--smooth"] {
                    assert!(text.contains(flag), "{cmd} help misses {flag}");
                }
            }
            _ => {}
        }
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let out = tacnet(&["synth", "--out", "x", "--n", "1", "--frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn synth_zero_mixtures_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tacnet(&["synth", "--out", dir.path().to_str().unwrap(), "--n", "0"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "expected one line, got: {err}");
    assert!(err.starts_with("error: "));
    assert!(err.contains("nothing to generate"));
}

#[test]
fn missing_manifest_error_names_the_path() {
    let out = tacnet(&["train", "--manifest", "/no/such/file.json", "--out", "x.ckpt"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/no/such/file.json"));
}

#[test]
fn malformed_sweep_sizes_name_the_token() {
    let out = tacnet(&[
        "sweep",
        "--manifest",
        "m.json",
        "--out",
        "s.csv",
        "--sizes",
        "10,banana,20",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("banana"));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "synth".to_string(),
            "--out".into(),
            d.to_str().unwrap().into(),
            "--n".into(),
            "6".into(),
            "--max-count".into(),
            "2".into(),
            "--duration-s".into(),
            "0.2".into(),
            "--seed".into(),
            "11".into(),
        ]
    };
    let run = |d: &Path| {
        let args = args(d);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = tacnet(&refs);
        assert!(out.status.success());
        stdout(&out)
    };
    let hist_a = run(dir_a.path());
    let hist_b = run(dir_b.path());
    // Identical histograms and identical bytes.
    assert_eq!(
        hist_a.lines().nth(1).unwrap(),
        hist_b.lines().nth(1).unwrap()
    );
    for entry in std::fs::read_dir(dir_a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".wav") {
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?}");
        }
    }
}

/// Miniature pipeline: synth -> train -> eval -> count -> sweep.
#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.ckpt");

    let out = tacnet(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n",
        "12",
        "--max-count",
        "1",
        "--duration-s",
        "0.5",
        "--seed",
        "5",
        "--split-ratios",
        "0.67,0.165,0.165",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = data.join("manifest.json");

    let out = tacnet(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--n-filters",
        "4",
        "--kernel-width",
        "25",
        "--seed",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(ckpt.exists());
    // History is one JSON object per epoch on stdout.
    let history = stdout(&out);
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 1);
    let record: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(record["epoch"], 0);
    assert!(record["train_loss"].is_number());

    // Eval writes a report with the identities intact.
    let report_path = dir.path().join("report.json");
    let out = tacnet(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--split",
        "test",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["per_class_accuracy"].as_array().unwrap().len(), 2);

    // Count: one line per window, 0.5 s at 25 ms -> 20 lines.
    let wav = data.join("mix00001_c1.wav");
    let out = tacnet(&[
        "count",
        "--wav",
        wav.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 20);
    // --smooth 1 is the identity.
    let smoothed = tacnet(&[
        "count",
        "--wav",
        wav.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--smooth",
        "1",
    ]);
    assert_eq!(stdout(&out), stdout(&smoothed));

    // Single-size sweep: one row plus header.
    let csv = dir.path().join("sweep.csv");
    let out = tacnet(&[
        "sweep",
        "--manifest",
        manifest.to_str().unwrap(),
        "--sizes",
        "25",
        "--budget-steps",
        "2",
        "--n-filters",
        "4",
        "--kernel-width",
        "25",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = csv_text.lines().collect();
    assert_eq!(lines[0], "window_ms,mae");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("25,"));
}

#[test]
fn eval_rejects_mismatched_class_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("m.ckpt");
    assert!(tacnet(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n",
        "4",
        "--max-count",
        "1",
        "--duration-s",
        "0.2",
    ])
    .status
    .success());
    let manifest = data.join("manifest.json");
    assert!(tacnet(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--epochs",
        "1",
        "--n-filters",
        "4",
        "--kernel-width",
        "25",
    ])
    .status
    .success());

    // Corrupt the manifest's max_count so the checkpoint no longer fits.
    let text = std::fs::read_to_string(&manifest)
        .unwrap()
        .replacen("\"max_count\": 1", "\"max_count\": 3", 1);
    std::fs::write(&manifest, text).unwrap();
    let out = tacnet(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("classes"));
}

#[test]
fn count_rejects_sample_rate_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("m.ckpt");
    assert!(tacnet(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n",
        "2",
        "--max-count",
        "1",
        "--duration-s",
        "0.2",
    ])
    .status
    .success());
    assert!(tacnet(&[
        "train",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--epochs",
        "1",
        "--n-filters",
        "4",
        "--kernel-width",
        "25",
    ])
    .status
    .success());

    // A WAV at a different rate.
    let alien = dir.path().join("alien.wav");
    tacnet::dataset::wav::write_wav_mono16(&alien, &vec![0.0; 4000], 8_000).unwrap();
    let out = tacnet(&[
        "count",
        "--wav",
        alien.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("sample rate"));
}
