//! Training harness through the library API.

use modenorm::nn::{count_errors, Model};
use modenorm::norm::{NormKind, Phase};
use modenorm::Rng;
use modenorm_cli::checkpoint::Checkpoint;
use modenorm_cli::commands::{cmd_eval, Split};
use modenorm_cli::sweep::{run_sweep, SweepGrid};
use modenorm_cli::train::{cmd_train, load_data, model_spec, CHECKPOINT_FILE, METRICS_FILE};
use modenorm_cli::RunConfig;

fn cfg(dir: &std::path::Path, norm: NormKind, modes: usize, epochs: usize) -> RunConfig {
    RunConfig {
        norm,
        modes,
        epochs,
        out: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn identical_configs_write_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&cfg(a.path(), NormKind::Mode, 2, 2)).unwrap();
    cmd_train(&cfg(b.path(), NormKind::Mode, 2, 2)).unwrap();
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, METRICS_FILE), read(&b, METRICS_FILE));
    // The echo records each run's output directory, so compare tensors only.
    let tensors = |d: &tempfile::TempDir| Checkpoint::load(&d.path().join(CHECKPOINT_FILE)).unwrap().tensors;
    assert_eq!(tensors(&a), tensors(&b));
}

#[test]
fn single_mode_matches_batch_norm_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mn = cmd_train(&cfg(&dir.path().join("mn"), NormKind::Mode, 1, 3)).unwrap();
    let bn = cmd_train(&cfg(&dir.path().join("bn"), NormKind::Batch, 1, 3)).unwrap();
    assert_eq!(mn.rows.len(), bn.rows.len());
    for (a, b) in mn.rows.iter().zip(&bn.rows) {
        assert_eq!((a.epoch, &a.split), (b.epoch, &b.split));
        assert!((a.loss - b.loss).abs() < 1e-9);
        assert!((a.error_rate - b.error_rate).abs() < 1e-9);
    }
}

#[test]
fn gate_usage_rows_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    for (norm, k) in [(NormKind::Mode, 3), (NormKind::ModeGroup, 2), (NormKind::Layer, 1)] {
        let out = cmd_train(&cfg(&dir.path().join(norm.as_str()), norm, k, 2)).unwrap();
        for row in &out.rows {
            assert_eq!(row.gate_usage.len(), k);
            assert!((row.gate_usage.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn batch_norm_training_lowers_train_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&cfg(dir.path(), NormKind::Batch, 1, 15)).unwrap();
    let train: Vec<f64> = out.rows.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    assert_eq!(train.len(), 16);
    assert!(train[15] < train[0], "{train:?}");
}

#[test]
fn checkpoint_survives_eval_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&cfg(dir.path(), NormKind::Mode, 2, 2)).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&path).unwrap();
    let eval = cmd_eval(&path, None, Split::Test).unwrap();
    assert_eq!(eval.evaluation.error_rate, out.final_test_error());
    assert_eq!(eval.evaluation.loss, out.test.loss);
    assert_eq!(bytes, std::fs::read(&path).unwrap());
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn full_memory_eval_reproduces_training_errors_on_its_batch() {
    let config = RunConfig { lambda: 1.0, ..RunConfig::default() };
    let (train, _) = load_data(&config).unwrap();
    let batch = train.gather(&(0..128).collect::<Vec<_>>()).unwrap();
    for norm in [NormKind::Mode, NormKind::Batch] {
        let config = RunConfig { norm, ..config.clone() };
        let mut rng = Rng::new(3);
        let mut model = Model::new(model_spec(&config, train.sample_shape(), train.classes), &mut rng).unwrap();
        model.perturb_gating(0.3, &mut rng).unwrap();
        let logits = model.forward(&batch.features).unwrap();
        let train_errors = count_errors(&logits, &batch.labels).unwrap();
        model.set_phase(Phase::Eval);
        let (eval_logits, _) = model.predict(&batch.features).unwrap();
        assert_eq!(count_errors(&eval_logits, &batch.labels).unwrap(), train_errors);
        assert!(eval_logits.max_abs_diff(&logits).unwrap() < 1e-9);
    }
}

#[test]
fn sweep_cell_equals_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig { epochs: 2, out: dir.path().join("sweep"), ..RunConfig::default() };
    let grid = SweepGrid { batch_sizes: vec![128], modes: vec![1], seeds: vec![0] };
    let sweep = run_sweep(&base, &grid).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    let single = cmd_train(&RunConfig { modes: 1, out: dir.path().join("single"), ..base }).unwrap();
    assert_eq!(sweep.rows[0].test_error, single.final_test_error());
    assert_eq!(sweep.medians[0].median, single.final_test_error());
}
