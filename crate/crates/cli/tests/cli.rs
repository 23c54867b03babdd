//! End-to-end tests of the `afford` binary: exit codes, file outputs, and
//! determinism contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn afford() -> Command {
    Command::new(env!("CARGO_BIN_EXE_afford"))
}

fn run(args: &[&str]) -> Output {
    afford().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_GEN: &str = r#"
[generator]
count = 40
width = 64
height = 64
seed = 42

[schedule.location]
kind = "scaled_linear"
steps = 8
beta_start = 0.01
beta_end = 0.3

[schedule.rotation]
kind = "squared_cosine"
steps = 8

[model]
d_model = 16
n_layers = 1
n_heads = 2
batch_size = 8
steps = 12
learning_rate = 1e-3
holdout_fraction = 0.2
eval_every = 6
max_depth_m = 4.0

[eval]
samples_per_scene = 2
sigma_h = 4.0
seed = 7
"#;

fn hash_dir(dir: &Path) -> Vec<(String, u64)> {
    use std::hash::{Hash, Hasher};
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                let mut h = std::collections::hash_map::DefaultHasher::new();
                bytes.hash(&mut h);
                files.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    h.finish(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_writes_manifest_with_count_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GEN);
    let out_dir = tmp.path().join("data");
    let out = run(&["gen", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 40);
}

#[test]
fn gen_missing_config_exits_2_naming_path() {
    let out = run(&["gen", "--config", "/nonexistent/cfg.toml", "--out", "/tmp/x"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/cfg.toml"), "stderr: {err}");
}

#[test]
fn gen_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GEN);
    let d1 = tmp.path().join("a");
    let d2 = tmp.path().join("b");
    assert_eq!(code(&run(&["gen", "--config", cfg.to_str().unwrap(), "--out", d1.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["gen", "--config", cfg.to_str().unwrap(), "--out", d2.to_str().unwrap()])), 0);
    assert_eq!(hash_dir(&d1), hash_dir(&d2));
}

#[test]
fn gen_bad_config_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[generator]\ncount = 0\n");
    let out = run(&["gen", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

fn gen_small(tmp: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let cfg = write_config(tmp, &format!("{SMALL_GEN}{extra}"));
    let data = tmp.join("data");
    let out = run(&["gen", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    (cfg, data)
}

#[test]
fn curate_noiseless_dataset_reports_low_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = gen_small(tmp.path(), "");
    let out = run(&["curate", "--dataset", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("curated 40/40"), "stdout: {stdout}");
    // Labels written back alongside gt.
    let manifest = std::fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    assert!(manifest.contains("\"curated\""));
    // Mean error line present and small.
    let line = stdout.lines().find(|l| l.contains("mean")).unwrap();
    let px: f64 = line
        .split_whitespace()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .expect("mean px err parse");
    assert!(px <= 2.0, "mean px err {px}");
}

#[test]
fn curate_skips_robot_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg2 = write_config(
        tmp.path(),
        &SMALL_GEN.replace("seed = 42", "seed = 43\nrobot_fraction = 0.5"),
    );
    let data2 = tmp.path().join("mixed");
    assert_eq!(
        code(&run(&["gen", "--config", cfg2.to_str().unwrap(), "--out", data2.to_str().unwrap()])),
        0
    );
    let out = run(&["curate", "--dataset", data2.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("skipped"), "stdout: {stdout}");
}

#[test]
fn curate_corrupt_manifest_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, data) = gen_small(tmp.path(), "");
    let manifest = data.join("manifest.jsonl");
    let text = std::fs::read_to_string(&manifest).unwrap().replacen("\"id\"", "\"idd\"", 1);
    std::fs::write(&manifest, text).unwrap();
    let out = run(&["curate", "--dataset", data.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_smoke_and_deterministic_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = gen_small(tmp.path(), "");
    let model1 = tmp.path().join("m1.bin");
    let model2 = tmp.path().join("m2.bin");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        model1.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(model1.exists());
    let csv1 = std::fs::read_to_string(tmp.path().join("m1.loss.csv")).unwrap();
    assert!(csv1.lines().count() > 12, "csv: {csv1}");
    // Holdout column appears at eval_every steps.
    assert!(csv1.lines().skip(1).any(|l| !l.ends_with(',')));

    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        model2.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv2 = std::fs::read_to_string(tmp.path().join("m2.loss.csv")).unwrap();
    assert_eq!(csv1, csv2, "loss curves differ between identical runs");
    assert_eq!(
        std::fs::read(&model1).unwrap(),
        std::fs::read(&model2).unwrap(),
        "parameter files differ between identical runs"
    );
}

#[test]
fn train_empty_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_GEN);
    let data = tmp.path().join("empty");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("manifest.jsonl"), "").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("m.bin").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_oracle_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = gen_small(tmp.path(), "");
    let model = tmp.path().join("m.bin");
    assert_eq!(
        code(&run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ])),
        0
    );
    let report = tmp.path().join("report.json");
    let csv = tmp.path().join("rows.csv");
    let overlay = tmp.path().join("overlay.png");
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--oracle",
        "--csv",
        csv.to_str().unwrap(),
        "--overlay",
        overlay.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mean_sr"].as_f64().unwrap(), 1.0);
    assert_eq!(json["mean_dtm"].as_f64().unwrap(), 0.0);
    assert_eq!(json["mean_rot_err_rad"].as_f64().unwrap(), 0.0);
    assert!(json["mean_nss"].as_f64().unwrap() > 0.0);
    assert!(report.with_extension("txt").exists());
    assert!(csv.exists());
    assert!(overlay.exists());
    // PNG magic.
    let png = std::fs::read(&overlay).unwrap();
    assert_eq!(&png[..8], &[0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1A, b'\n']);
}

#[test]
fn eval_random_model_sits_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    // 500+ records for the chance-level comparison.
    let cfg_text = SMALL_GEN.replace("count = 40", "count = 500").replace("steps = 12", "steps = 1");
    let cfg = write_config(tmp.path(), &cfg_text);
    let data = tmp.path().join("data");
    assert_eq!(code(&run(&["gen", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()])), 0);
    // One training step leaves the heads essentially zero: sampling follows
    // the noise prior, the chance-level reference.
    let model = tmp.path().join("m.bin");
    assert_eq!(
        code(&run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ])),
        0
    );
    let report = tmp.path().join("report.json");
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let sr = json["mean_sr"].as_f64().unwrap();
    let chance = json["chance_sr"].as_f64().unwrap();
    assert!(
        (sr - chance).abs() <= 0.1,
        "untrained model SR {sr:.3} should sit within 0.1 of chance {chance:.3}"
    );
}

#[test]
fn eval_shape_mismatch_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = gen_small(tmp.path(), "");
    let model = tmp.path().join("m.bin");
    assert_eq!(
        code(&run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ])),
        0
    );
    // A dataset with a different image size.
    let cfg2 = write_config(
        tmp.path(),
        &SMALL_GEN.replace("width = 64", "width = 32").replace("height = 64", "height = 32"),
    );
    let data2 = tmp.path().join("small");
    assert_eq!(code(&run(&["gen", "--config", cfg2.to_str().unwrap(), "--out", data2.to_str().unwrap()])), 0);
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        data2.to_str().unwrap(),
        "--out",
        tmp.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
