//! Black-box tests of the command-line interface.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_w2ot"))
}

const SMALL_CFG: &str = r#"
[train]
batch_size = 32
inner_iters = 4
total_iters = 40
lambda = 1.0
seed = 9
eval_every = 10
eval_batch = 256

[train.f_opt]
lr = 1e-3
beta1 = 0.5
beta2 = 0.9

[train.g_opt]
lr = 1e-3
beta1 = 0.5
beta2 = 0.9

[f_network]
input_dim = 2
hidden_width = 8
num_layers = 3

[g_network]
input_dim = 2
hidden_width = 8
num_layers = 3

[source]
kind = "checkerboard-source"

[target]
kind = "checkerboard-target"
"#;

fn write_cfg(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, SMALL_CFG).unwrap();
    path
}

#[test]
fn train_produces_outputs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    for name in ["a", "b"] {
        let out = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(name))
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in [
        "config.toml",
        "metrics.jsonl",
        "checkpoint-latest.txt",
        "checkpoint-final.txt",
    ] {
        assert!(tmp.path().join("a").join(file).exists(), "missing {file}");
    }
    // identical config + seed -> byte-identical metrics and checkpoints
    for file in ["metrics.jsonl", "checkpoint-final.txt"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    // metrics stream is one JSON object per line with the expected keys
    let metrics = std::fs::read_to_string(tmp.path().join("a/metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 4);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for key in ["iter", "j", "reg", "w2_estimate", "c_pq", "lr_f", "lr_g"] {
        assert!(first.get(key).is_some(), "metrics record lacks {key}");
    }
    assert!(
        first.get("wall_clock_s").is_none(),
        "wall clock must stay unserialized"
    );

    // the echoed config is loadable and equivalent
    let echo = std::fs::read_to_string(tmp.path().join("a/config.toml")).unwrap();
    let parsed = w2ot::config::RunConfig::from_toml_str(&echo).unwrap();
    assert_eq!(
        parsed,
        w2ot::config::RunConfig::from_toml_str(SMALL_CFG).unwrap()
    );
}

#[test]
fn seed_override_changes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    for (name, seed) in [("a", "9"), ("b", "10")] {
        let out = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(name))
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let a = std::fs::read(tmp.path().join("a/metrics.jsonl")).unwrap();
    let b = std::fs::read(tmp.path().join("b/metrics.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn eval_and_export_grid_work_on_a_trained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());

    let ck = out_dir.join("checkpoint-final.txt");
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ck)
        .arg("--config")
        .arg(&cfg)
        .args(["--samples", "512"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("eval must print JSON");
    assert!(report["w2_estimate"].is_number());
    assert!(report["support_coverage"].is_number());
    assert_eq!(report["cell_masses"].as_array().unwrap().len(), 4);

    let grid = tmp.path().join("grid.tsv");
    let out = bin()
        .args(["export-grid", "--checkpoint"])
        .arg(&ck)
        .arg("--out")
        .arg(&grid)
        .args(["--bounds", "-1.5,1.5", "--resolution", "10"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&grid).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "y1\ty2\tT1\tT2\tdisp1\tdisp2\tpotential");
    assert_eq!(lines.len(), 1 + 100);
}

#[test]
fn zero_iteration_training_writes_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        SMALL_CFG.replace("total_iters = 40", "total_iters = 0"),
    )
    .unwrap();
    let out_dir = tmp.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert!(metrics.is_empty());
    let ck = w2ot::checkpoint::load_checkpoint(&out_dir.join("checkpoint-final.txt")).unwrap();
    assert_eq!(ck.iteration, 0);
    // the f snapshot equals its projected initialization
    let expect: w2ot::icnn::IcnnParams<f64> = w2ot::icnn::init_params(
        &ck.f_cfg,
        1.0,
        w2ot::data::RngStream::new(9, "init-f").rng(),
    )
    .project_nonneg();
    for (a, b) in ck.f.tensors().iter().zip(expect.tensors()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn eval_of_zero_potential_reports_target_mean_norm() {
    // a zero g maps every point to the origin, so the squared mean error
    // equals ||mu||^2
    let tmp = tempfile::tempdir().unwrap();
    let cfg_text = r#"
[train]
batch_size = 8
inner_iters = 1
total_iters = 1
lambda = 1.0
seed = 1
eval_every = 1

[train.f_opt]
lr = 1e-4
beta1 = 0.5
beta2 = 0.9

[train.g_opt]
lr = 1e-4
beta1 = 0.5
beta2 = 0.9

[f_network]
input_dim = 2
hidden_width = 4
num_layers = 2

[g_network]
input_dim = 2
hidden_width = 4
num_layers = 2

[source]
kind = "isotropic-gaussian"
dim = 2
mean = [0.0, 0.0]

[target]
kind = "isotropic-gaussian"
dim = 2
mean = [1.0, 2.0]
"#;
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(&cfg_path, cfg_text).unwrap();
    let net = w2ot::icnn::IcnnConfig::new(2, 4, 2);
    let ck = w2ot::checkpoint::Checkpoint {
        precision: w2ot::train::Precision::F64,
        iteration: 0,
        f_cfg: net,
        f: w2ot::icnn::IcnnParams::zeros(&net),
        g_cfg: net,
        g: w2ot::icnn::IcnnParams::zeros(&net),
    };
    let ck_path = tmp.path().join("zero.txt");
    w2ot::checkpoint::save_checkpoint(&ck_path, &ck).unwrap();
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ck_path)
        .arg("--config")
        .arg(&cfg_path)
        .args(["--samples", "4096"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let abs = report["mean_error_sq"].as_f64().unwrap();
    assert!((abs - 5.0).abs() < 1e-9, "expected ||mu||^2 = 5, got {abs}");
}

#[test]
fn missing_and_invalid_configs_fail_cleanly() {
    let out = bin()
        .args([
            "train",
            "--config",
            "/nonexistent/cfg.toml",
            "--out",
            "/tmp/unused-w2ot",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nbatch_size = 0\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn selfcheck_passes_quickly() {
    let started = std::time::Instant::now();
    let out = bin().arg("selfcheck").output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("negative control"));
    assert!(!text.contains("FAIL"));
    assert!(started.elapsed().as_secs() < 60);
}
