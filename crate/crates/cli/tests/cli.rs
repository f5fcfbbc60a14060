use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use stochpool::cost::{read_csv, CSV_HEADER};

fn stochpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochpool"))
        .args(args)
        .env_remove("STOCHPOOL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn recipe(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../recipes")
        .join(name)
        .display()
        .to_string()
}

/// 16-bit PCM WAV bytes, written by hand so any header can be produced.
fn wav(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
    b.extend_from_slice(&(2 * channels).to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::write(path, b).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verify_passes() {
    let o = stochpool(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn verify_filter_runs_only_that_suite() {
    let o = stochpool(&["verify", "--filter", "pooling"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.contains("pooling.")), "{rows:?}");

    let o = stochpool(&["verify", "--filter", "no_such_suite"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn injected_fault_fails_verification() {
    let o = stochpool(&["verify", "--inject-fault", "skip-truncation", "--filter", "pooling", "--filter", "encoder"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn malformed_triplet_names_the_position() {
    let dir = tempfile::tempdir().unwrap();
    let o = stochpool(&["sweep", "--configs", "2-x-1", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("position 2"), "{}", stderr(&o));
}

#[test]
fn default_sweep_writes_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = stochpool(&["sweep", "--out", p(&out), "--frames", "40", "--utterances", "1", "--repeats", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(text.as_bytes()).unwrap();
    let configs: Vec<&str> = rows.iter().map(|r| r.config.as_str()).collect();
    assert_eq!(configs, ["1-1-1", "2-1-1", "2-2-1", "2-2-2"]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    let first = &json.as_array().unwrap()[0];
    for key in CSV_HEADER {
        assert!(first.get(key).is_some(), "json lacks {key}");
    }
    assert!(out.join("effective_config.toml").exists());
}

#[test]
fn cost_is_analytic() {
    let o = stochpool(&["cost", "--preset", "tiny", "--frames", "100", "--format", "csv", "--configs", "3-1-1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(stdout(&o).as_bytes()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.wall_ms_median.is_none()));
}

#[test]
fn missing_manifest_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/train.tsv");
    let o = stochpool(&["finetune", "--train", p(&missing), "--steps", "1", "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
}

#[test]
fn unknown_recipe_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.toml");
    std::fs::write(&path, "preset = \"tiny\"\n[train]\nsteps = 3\nlearning_rat = 0.1\n").unwrap();
    let o = stochpool(&["pretrain", "--recipe", p(&path), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

fn train(dir: &Path) -> PathBuf {
    let pre = dir.join("pre");
    let o = stochpool(&["pretrain", "--steps", "4", "--seed", "3", "--out", p(&pre)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ft = dir.join("ft");
    let o = stochpool(&[
        "finetune",
        "--init",
        p(&pre.join("model.ckpt")),
        "--mode",
        "deterministic",
        "--config",
        "2-1-1",
        "--steps",
        "4",
        "--seed",
        "3",
        "--out",
        p(&ft),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ft
}

#[test]
fn runs_record_their_config_and_repeat() {
    let a = tempfile::tempdir().unwrap();
    let ft = train(a.path());
    for f in ["model.ckpt", "state.ckpt", "train.jsonl", "effective_config.toml"] {
        assert!(ft.join(f).exists(), "{f}");
    }
    let echo = std::fs::read_to_string(ft.join("effective_config.toml")).unwrap();
    assert!(echo.contains("mode = \"deterministic\""), "{echo}");
    assert!(echo.contains("config = \"2-1-1\""), "{echo}");

    let b = tempfile::tempdir().unwrap();
    let again = train(b.path());
    let read = |d: &Path| std::fs::read(d.join("model.ckpt")).unwrap();
    assert_eq!(read(&ft), read(&again));
}

#[test]
fn decode_silence_and_reject_bad_audio() {
    let dir = tempfile::tempdir().unwrap();
    let ft = train(dir.path());
    let ckpt = ft.join("model.ckpt");
    let silence = dir.path().join("silence.wav");
    wav(&silence, 1, 16_000, &vec![0; 16_000]);
    let run = || stochpool(&["decode", "--checkpoint", p(&ckpt), "--config", "2-2-1", p(&silence)]);
    let (first, second) = (run(), run());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).starts_with(p(&silence)));
    assert_eq!(stdout(&first), stdout(&second));

    let stereo = dir.path().join("stereo.wav");
    wav(&stereo, 2, 16_000, &vec![0; 32_000]);
    let o = stochpool(&["decode", "--checkpoint", p(&ckpt), p(&stereo)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mono"), "{}", stderr(&o));

    let slow = dir.path().join("slow.wav");
    wav(&slow, 1, 8_000, &vec![0; 8_000]);
    let o = stochpool(&["decode", "--checkpoint", p(&ckpt), p(&slow)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("8000"), "{}", stderr(&o));
}

#[test]
fn bundled_tiny_recipes_finish_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let pre = dir.path().join("pre");
    let o = stochpool(&["pretrain", "--recipe", &recipe("tiny-pretrain.toml"), "--out", p(&pre)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = stochpool(&[
        "finetune",
        "--recipe",
        &recipe("tiny-finetune.toml"),
        "--init",
        p(&pre.join("model.ckpt")),
        "--out",
        p(&dir.path().join("ft")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(120), "{:?}", start.elapsed());
}
