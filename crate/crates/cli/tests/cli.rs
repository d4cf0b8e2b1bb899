//! End-to-end tests of the `gcnet` binary: artifact contracts, exit
//! codes, determinism, and the fast synthetic training path.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use gcnet::net::{build_smallnet, build_toy, ActivationKind, Topology};

fn gcnet() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gcnet"));
    // Keep the ambient environment from steering dataset resolution.
    c.env_remove("GRELU_DATA_DIR");
    c
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

/// Reads the value of `name: <float>%` from the summary text.
fn summary_percent(summary: &str, name: &str) -> f64 {
    let line = summary
        .lines()
        .find(|l| l.starts_with(name))
        .unwrap_or_else(|| panic!("summary has no line starting with {name:?}:\n{summary}"));
    line.split(':')
        .nth(1)
        .unwrap()
        .trim()
        .trim_end_matches('%')
        .parse()
        .unwrap()
}

#[test]
fn toy_synthetic_training_is_fast_and_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let out = gcnet()
        .args(["train", "--model", "toy", "--dataset", "synth", "--epochs", "5"])
        .args(["--seed", "1", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(elapsed < 60.0, "took {elapsed:.1}s");

    for artifact in ["metrics.csv", "metrics.jsonl", "model.ckpt", "summary.txt"] {
        assert!(dir.path().join(artifact).is_file(), "missing {artifact}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let final_train_err = summary_percent(&summary, "final train error");
    assert!(
        final_train_err < 5.0,
        "final train error {final_train_err}% is not below 5%"
    );

    // The metrics CSV agrees with the summary and has one row per epoch.
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,train_err,test_err,seconds"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    let last_train_err: f64 = rows.last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((100.0 * last_train_err - final_train_err).abs() < 0.005 + 1e-9);
}

#[test]
fn deterministic_runs_write_identical_artifacts() {
    let run = |dir: &Path| {
        let out = gcnet()
            .args(["train", "--model", "toy", "--dataset", "synth", "--epochs", "3"])
            .args(["--seed", "7", "--deterministic", "--out-dir"])
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    for artifact in ["metrics.csv", "metrics.jsonl", "model.ckpt", "summary.txt"] {
        let bytes_a = std::fs::read(a.path().join(artifact)).unwrap();
        let bytes_b = std::fs::read(b.path().join(artifact)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{artifact} differs between identical runs");
    }
}

#[test]
fn bias_free_variant_trains_evaluates_and_inspects() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcnet()
        .args(["train", "--model", "toy", "--dataset", "synth", "--epochs", "2"])
        .args(["--seed", "2", "--strict-paper", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let ckpt = dir.path().join("model.ckpt");
    let inspect = gcnet().arg("inspect").arg(&ckpt).output().unwrap();
    assert_eq!(exit_code(&inspect), 0);
    assert!(stdout_of(&inspect).contains("classifier bias: no"));

    let eval = gcnet()
        .arg("eval")
        .arg(&ckpt)
        .args(["--dataset", "synth", "--seed", "2"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&eval), 0, "stderr: {}", stderr_of(&eval));
    assert!(stdout_of(&eval).contains("error"));
}

#[test]
fn inspect_lists_every_activation_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fresh.ckpt");
    let net = build_smallnet(ActivationKind::GRelu, Topology::Global, true, 5);
    gcnet::checkpoint::save(&net, &path).unwrap();

    let out = gcnet().arg("inspect").arg(&path).output().unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert_eq!(
        text.matches("8 scalars").count(),
        3,
        "expected three activation layers of 8 scalars:\n{text}"
    );
    assert_eq!(text.matches("activation unit 1:").count(), 3);
    // Freshly initialized activations carry the default curve.
    assert_eq!(
        text.matches("endpoints: [-0.6000, -0.2000, 0.2000, 0.6000]").count(),
        3
    );
    assert_eq!(
        text.matches("slopes:    [0.0100, 0.2000, 1.5000, 3.0000]").count(),
        3
    );
}

#[test]
fn learned_endpoints_stay_strictly_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcnet()
        .args(["train", "--model", "toy", "--dataset", "synth", "--epochs", "4"])
        .args(["--seed", "9", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let inspect = gcnet()
        .arg("inspect")
        .arg(dir.path().join("model.ckpt"))
        .output()
        .unwrap();
    let text = stdout_of(&inspect);
    let mut checked = 0;
    for line in text.lines() {
        let Some(list) = line.trim().strip_prefix("endpoints: [") else {
            continue;
        };
        let values: Vec<f64> = list
            .trim_end_matches(']')
            .split(", ")
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(
            values.windows(2).all(|w| w[0] < w[1]),
            "endpoints not strictly ascending: {line}"
        );
        checked += 1;
    }
    assert_eq!(checked, 2, "expected endpoints for both toy blocks");
}

#[test]
fn tampered_checkpoint_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.ckpt");
    let net = build_toy(ActivationKind::GRelu, Topology::Global, true, 1);
    gcnet::checkpoint::save(&net, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(&path, &bytes).unwrap();

    let out = gcnet().arg("inspect").arg(&path).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr_of(&out).contains("magic"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn compare_writes_a_joined_error_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcnet()
        .args(["compare", "--dataset", "synth", "--epochs", "2", "--seed", "1"])
        .args(["--deterministic", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,gc_err,conv_err"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 3, "bad row {row:?}");
        let gc: f64 = fields[1].parse().unwrap();
        let conv: f64 = fields[2].parse().unwrap();
        assert!(gc.is_finite() && conv.is_finite());
    }
    assert!(dir.path().join("gc_metrics.csv").is_file());
    assert!(dir.path().join("conv_metrics.csv").is_file());

    // Both parameter counts are reported and within 10% of each other.
    let text = stdout_of(&out);
    let params_line = text
        .lines()
        .find(|l| l.starts_with("parameters:"))
        .expect("missing parameters line");
    let numbers: Vec<f64> = params_line
        .split_whitespace()
        .filter_map(|w| w.parse().ok())
        .collect();
    assert_eq!(numbers.len(), 2, "line: {params_line}");
    let ratio = numbers[0].max(numbers[1]) / numbers[0].min(numbers[1]);
    assert!(ratio <= 1.10, "parameter counts differ by {ratio:.3}x");
}

#[test]
fn gradient_check_subcommand_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("gradcheck.csv");
    let out = gcnet()
        .args(["gradcheck", "--model", "toy", "--seed", "4", "--csv"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("PASS"));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("parameter,coords,max_rel_err,status"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn unknown_flags_are_rejected() {
    let out = gcnet()
        .args(["train", "--model", "toy", "--frobnicate"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn missing_digit_data_is_an_input_error() {
    let out = gcnet()
        .args(["train", "--model", "toy", "--epochs", "1"])
        .args(["--data-dir", "/definitely/not/here"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr_of(&out).contains("train-images"),
        "stderr should name the missing files: {}",
        stderr_of(&out)
    );
}
