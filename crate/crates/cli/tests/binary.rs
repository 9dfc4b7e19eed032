//! The `modenorm` binary end to end: outputs on disk and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modenorm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--epochs", "2", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_eval_and_gates_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &["--norm", "mn", "--modes", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# modenorm metrics v1\nepoch,split,loss,error_rate,gate_usage_1,gate_usage_2\n"));
    assert_eq!(metrics.lines().count(), 2 + 3 * 2);

    let ckpt = dir.path().join("checkpoint.mncp");
    let before = std::fs::read(&ckpt).unwrap();
    let first = run(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    let second = run(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(before, std::fs::read(&ckpt).unwrap());

    let report = run(&["gates-report", "--checkpoint", ckpt.to_str().unwrap(), "--top-p", "3"]);
    assert_eq!(code(&report), 0);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("purity"), "{text}");
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &["--norm", "xx"])), 1);
    assert_eq!(code(&train(dir.path(), &["--batch-size", "0"])), 1);
    assert_eq!(code(&train(dir.path(), &["--lambda", "1.5"])), 1);
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["eval", "--checkpoint", "/nonexistent/ckpt"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn bad_idx_magic_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
        std::fs::write(dir.path().join(name), [0u8, 0, 9, 9, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0]).unwrap();
    }
    let out_dir = tempfile::tempdir().unwrap();
    let out = train(out_dir.path(), &["--data", "idx", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &["--norm", "bn"])), 0);
    let ckpt = dir.path().join("checkpoint.mncp");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    std::fs::write(&ckpt, bytes).unwrap();
    let out = run(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gates_report_needs_a_gated_layer() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &["--norm", "bn"])), 0);
    let ckpt = dir.path().join("checkpoint.mncp");
    assert_eq!(code(&run(&["gates-report", "--checkpoint", ckpt.to_str().unwrap()])), 1);
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let ok = run(&["gradcheck", "--layer", "mn,bn,mgn", "--seeds", "3"]);
    assert_eq!(code(&ok), 0);
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{text}");

    let bad = run(&["gradcheck", "--layer", "mn", "--seeds", "2", "--corrupt-analytic"]);
    assert_eq!(code(&bad), 2);
    let text = String::from_utf8(bad.stdout).unwrap();
    assert!(text.starts_with("FAIL mn"));
    assert!(text.contains("failing indices [0]"), "{text}");
    assert_eq!(code(&run(&["gradcheck", "--layer", "nope"])), 1);
}

#[test]
fn synth_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--seed", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let train = std::fs::read_to_string(dir.path().join("synth_train.csv")).unwrap();
    assert_eq!(train.lines().count(), 8001);
    assert!(train.starts_with("label,mode,f0,"));
    assert!(dir.path().join("synth_test.csv").exists());
}

#[test]
fn sweep_writes_csv_and_trend() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep", "--epochs", "1", "--batch-sizes", "256", "--modes-grid", "1,2", "--seeds", "2",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("run,")).count(), 4);
    assert_eq!(csv.lines().filter(|l| l.starts_with("median,")).count(), 2);
    assert!(dir.path().join("trend.txt").exists());
    assert!(dir.path().join("N256_K2_seed1").join("metrics.csv").exists());
}
