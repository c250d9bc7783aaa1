use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualfuse::dsp::{write_wav, AudioWave, LogMelSpectrogram, SAMPLE_RATE};
use dualfuse::train::{synth_task, MetricsReport};
use serde_json::Value;
use tempfile::TempDir;

fn dualfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualfuse"))
        .args(args)
        .env_remove("DUALFUSE_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn report(v: &Value) -> MetricsReport {
    serde_json::from_value(v.clone()).expect("complete MetricsReport")
}

/// Writes a small manifest of 1 s synthetic clips and returns its path.
fn synthetic_manifest(dir: &Path, counts: &[(&str, usize)]) -> PathBuf {
    let mut lines = Vec::new();
    for (k, &(split, n)) in counts.iter().enumerate() {
        for (i, ex) in synth_task(n, 40 + k as u64).unwrap().into_iter().enumerate() {
            let name = format!("{split}_{i}.wav");
            write_wav(dir.join(&name), &ex.audio).unwrap();
            let entry = serde_json::json!({
                "audio_path": name,
                "transcript": ex.transcript,
                "label": ex.label,
                "split": split,
                "source": if i % 2 == 0 { "even" } else { "odd" },
            });
            lines.push(entry.to_string());
        }
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn lr_dump_prints_literal_schedule() {
    let o = dualfuse(&["lr-dump", "--steps", "3"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,rate"));
    let rows: Vec<(u64, f64)> = lines
        .map(|l| {
            let (s, r) = l.split_once(',').unwrap();
            (s.parse().unwrap(), r.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].0, 1);
    assert!((rows[0].1 - 2f64.powi(-12)).abs() < 1e-12);
    assert_eq!(rows[1], (2, 4e-4));
    assert_eq!(rows[2], (3, 4e-4));
}

#[test]
fn lr_dump_noam_mode_and_zero_steps() {
    let o = dualfuse(&["lr-dump", "--steps", "2", "--schedule", "noam"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 3);
    assert_eq!(code(&dualfuse(&["lr-dump", "--steps", "0"])), 2);
    assert_eq!(code(&dualfuse(&["lr-dump", "--steps", "2", "--schedule", "cosine"])), 2);
}

#[test]
fn bogus_variant_is_a_usage_error() {
    let o = dualfuse(&["train", "--synthetic", "4", "--variant", "bogus"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for allowed in ["attentive", "concat", "pipeline1", "pipeline2"] {
        assert!(err.contains(allowed), "{err}");
    }
}

#[test]
fn featurize_full_chunk_reports_full_shape() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("clip.wav");
    let samples: Vec<f32> = (0..SAMPLE_RATE as usize * 30).map(|i| (i as f32 * 0.05).sin() * 0.2).collect();
    write_wav(&wav, &AudioWave::new(samples, SAMPLE_RATE).unwrap()).unwrap();
    let out = dir.path().join("feats");
    let o = dualfuse(&["featurize", "--input", p(&wav), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("[80x3000]"), "{}", stdout(&o));
    assert!(stdout(&o).contains("1 files processed, 0 failed"));
    let spec = LogMelSpectrogram::read_from(fs::File::open(out.join("clip.lmel")).unwrap()).unwrap();
    assert_eq!(spec.dim(), (80, 3000));
}

#[test]
fn featurize_empty_directory() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("feats");
    let o = dualfuse(&["featurize", "--input", p(dir.path()), "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0 files processed"));
}

#[test]
fn featurize_partial_failure_keeps_valid_outputs() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    for (i, ex) in synth_task(2, 1).unwrap().iter().enumerate() {
        write_wav(input.join(format!("ok{i}.wav")), &ex.audio).unwrap();
    }
    fs::write(input.join("broken.wav"), b"RIFF not really a wav").unwrap();
    fs::write(input.join("notes.txt"), b"ignored").unwrap();
    let out = dir.path().join("feats");
    let o = dualfuse(&["featurize", "--input", p(&input), "--out", p(&out), "--chunk-seconds", "1"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("broken.wav"), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 files processed, 1 failed"));
    assert!(out.join("ok0.lmel").exists() && out.join("ok1.lmel").exists());
    assert!(!out.join("broken.lmel").exists());
    // Sorted order: broken < ok0 < ok1 among the reported successes.
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert!(lines[0].contains("ok0.wav") && lines[1].contains("ok1.wav"));
}

#[test]
fn featurize_missing_input() {
    let dir = TempDir::new().unwrap();
    let o = dualfuse(&["featurize", "--input", p(&dir.path().join("nope.wav")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn tokenize_with_vocab_file() {
    let dir = TempDir::new().unwrap();
    let vocab = dir.path().join("vocab.txt");
    fs::write(&vocab, "hello\nworld\n").unwrap();
    let o = dualfuse(&[
        "tokenize", "--text", "hello there world", "--vocab", p(&vocab), "--tokenizer", "word",
        "--max-length", "6",
    ]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ids"], serde_json::json!([1, 4, 3, 5, 2, 0]));
    assert_eq!(v["mask"], serde_json::json!([1, 1, 1, 1, 1, 0]));
}

#[test]
fn stats_matches_hand_counts() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("m.jsonl");
    fs::write(
        &manifest,
        concat!(
            r#"{"audio_path":"a.wav","transcript":"x","label":"Hate","split":"train","source":"alpha"}"#, "\n",
            r#"{"audio_path":"b.wav","transcript":"y","label":"NotHate","split":"dev","source":"beta"}"#, "\n",
            r#"{"audio_path":"c.wav","transcript":"z","label":"Hate","split":"train","source":"beta"}"#, "\n",
        ),
    )
    .unwrap();
    let o = dualfuse(&["stats", "--manifest", p(&manifest)]);
    assert_eq!(code(&o), 0);
    let rows: Vec<Vec<String>> =
        stdout(&o).lines().map(|l| l.split_whitespace().map(String::from).collect()).collect();
    let header = ["source", "train/NotHate", "train/Hate", "dev/NotHate", "dev/Hate", "test/NotHate", "test/Hate", "total"];
    assert_eq!(rows[0], header);
    assert_eq!(rows[1], ["alpha", "0", "1", "0", "0", "0", "0", "1"]);
    assert_eq!(rows[2], ["beta", "0", "1", "1", "0", "0", "0", "2"]);
    assert_eq!(rows[3], ["Total", "0", "2", "1", "0", "0", "0", "3"]);
}

#[test]
fn stats_reports_bad_manifest_line() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("m.jsonl");
    fs::write(&manifest, "{\"audio_path\":\"a.wav\"}\n").unwrap();
    let o = dualfuse(&["stats", "--manifest", p(&manifest)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn synthetic_attentive_run_fits_the_task() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = dualfuse(&[
        "train", "--synthetic", "32", "--seed", "7", "--variant", "attentive", "--epochs", "50",
        "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["steps"], 200);
    let train = report(&metrics["splits"]["train"]["metrics"]);
    assert!(train.macro_f1 >= 0.95, "macro F1 {}", train.macro_f1);
    assert_eq!(metrics["history"].as_array().unwrap().len(), 51);
    assert!(out.join("model.dfck").exists() && out.join("run.json").exists());
}

#[test]
fn ablation_variants_produce_reports_and_checkpoints_enforce_variant() {
    let dir = TempDir::new().unwrap();
    for variant in ["concat", "pipeline1", "pipeline2"] {
        let out = dir.path().join(variant);
        let o = dualfuse(&[
            "train", "--synthetic", "8", "--variant", variant, "--epochs", "1", "--out", p(&out),
        ]);
        assert_eq!(code(&o), 0, "{variant}: {}", stderr(&o));
        let metrics = read_json(&out.join("metrics.json"));
        assert_eq!(metrics["variant"], variant);
        let r = report(&metrics["splits"]["train"]["metrics"]);
        assert_eq!(r.n_samples, 8);
        for rec in metrics["history"].as_array().unwrap() {
            report(&rec["selection"]);
        }
    }

    let ckpt = dir.path().join("concat/model.dfck");
    let wav = dir.path().join("clip.wav");
    write_wav(&wav, &synth_task(2, 9).unwrap()[0].audio).unwrap();
    let o = dualfuse(&["predict", "--checkpoint", p(&ckpt), "--audio", p(&wav), "--text", "the vexlor", "--variant", "pipeline2"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn predict_emits_label_and_distribution() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&dualfuse(&["train", "--synthetic", "8", "--epochs", "1", "--out", p(&out)])), 0);
    let wav = dir.path().join("clip.wav");
    write_wav(&wav, &synth_task(2, 9).unwrap()[0].audio).unwrap();
    let ckpt = out.join("model.dfck");
    let o = dualfuse(&["predict", "--checkpoint", p(&ckpt), "--audio", p(&wav), "--text", "the vexlor"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let label = v["label"].as_str().unwrap();
    assert!(label == "Hate" || label == "NotHate");
    let p_hate = v["probabilities"]["Hate"].as_f64().unwrap();
    let p_not = v["probabilities"]["NotHate"].as_f64().unwrap();
    assert!((p_hate + p_not - 1.0).abs() < 1e-6);
    assert_eq!(label == "Hate", p_hate > p_not);

    let again = dualfuse(&["predict", "--checkpoint", p(&ckpt), "--audio", p(&wav), "--text", "the vexlor"]);
    assert_eq!(stdout(&again), stdout(&o));

    let missing = dualfuse(&["predict", "--checkpoint", p(&dir.path().join("none.dfck")), "--audio", p(&wav), "--text", "x"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = dualfuse(&["train", "--synthetic", "8", "--epochs", "2", "--seed", "11", "--out", p(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (fs::read(out.join("metrics.json")).unwrap(), fs::read(out.join("model.dfck")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn manifest_run_scores_every_split_and_evaluate_agrees() {
    let dir = TempDir::new().unwrap();
    let manifest = synthetic_manifest(dir.path(), &[("train", 8), ("dev", 4), ("test", 4)]);
    let out = dir.path().join("run");
    let o = dualfuse(&[
        "train", "--manifest", p(&manifest), "--preset", "toy", "--tokenizer", "hashed",
        "--epochs", "1", "--variant", "pipeline1", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = read_json(&out.join("metrics.json"));
    for split in ["train", "dev", "test"] {
        report(&metrics["splits"][split]["metrics"]);
    }
    assert_eq!(metrics["history"][0]["selection_split"], "dev");

    let eval_out = dir.path().join("eval.json");
    let o = dualfuse(&[
        "evaluate", "--checkpoint", p(&out.join("model.dfck")), "--manifest", p(&manifest),
        "--variant", "pipeline1", "--out", p(&eval_out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval = read_json(&eval_out);
    assert_eq!(eval["splits"], metrics["splits"]);

    let o = dualfuse(&["evaluate", "--checkpoint", p(&out.join("model.dfck")), "--manifest", p(&manifest)]);
    assert_eq!(code(&o), 0);
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed, eval);

    let o = dualfuse(&[
        "evaluate", "--checkpoint", p(&out.join("model.dfck")), "--manifest", p(&manifest),
        "--variant", "attentive",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn missing_audio_in_manifest_is_an_artifact_error() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("m.jsonl");
    fs::write(
        &manifest,
        r#"{"audio_path":"gone.wav","transcript":"x","label":"Hate","split":"train","source":"s"}"#,
    )
    .unwrap();
    let o = dualfuse(&["train", "--manifest", p(&manifest), "--preset", "toy", "--out", p(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("gone.wav"));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "variant = \"concat\"\nseed = 5\n[train]\nepochs = 1\n[model]\nlstm_units = 8\n").unwrap();

    let out = dir.path().join("file_only");
    let o = dualfuse(&["train", "--synthetic", "4", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["variant"], "concat");
    assert_eq!(run["train"]["epochs"], 1);
    assert_eq!(run["train"]["seed"], 5);
    assert_eq!(run["model"]["lstm_units"], 8);
    assert_eq!(run["model"]["transformer"]["d_model"], 32);

    let out = dir.path().join("flagged");
    let o = dualfuse(&[
        "train", "--synthetic", "4", "--config", p(&cfg), "--epochs", "2", "--variant", "pipeline2",
        "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["variant"], "pipeline2");
    assert_eq!(run["train"]["epochs"], 2);
    assert_eq!(run["train"]["seed"], 5);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepoch = 1\n").unwrap();
    let o = dualfuse(&["train", "--synthetic", "4", "--config", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.epoch"), "{}", stderr(&o));
}

#[test]
fn output_directory_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_dualfuse"))
        .args(["train", "--synthetic", "4", "--epochs", "0"])
        .env("DUALFUSE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["steps"], 0);
    assert_eq!(metrics["best_epoch"], 0);
}

#[test]
fn invalid_hyperparameters_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = p(dir.path());
    assert_eq!(code(&dualfuse(&["train", "--synthetic", "3", "--out", out])), 2);
    assert_eq!(code(&dualfuse(&["train", "--synthetic", "4", "--batch-size", "0", "--out", out])), 2);
    assert_eq!(code(&dualfuse(&["train", "--synthetic", "4", "--lstm-dropout", "1.5", "--out", out])), 2);
    assert_eq!(code(&dualfuse(&["train", "--synthetic", "4", "--beta1", "1.0", "--out", out])), 2);
    assert_eq!(code(&dualfuse(&["train", "--out", out])), 2);
}

#[test]
fn runaway_learning_rate_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let o = dualfuse(&[
        "train", "--synthetic", "8", "--epochs", "3", "--no-clip", "--warmup-steps", "1",
        "--schedule-d-model", "1000000000000000000", "--lr-cap", "1e30", "--out", p(dir.path()),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
