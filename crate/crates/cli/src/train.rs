//! Training loop, evaluation and the persisted artifacts of a run.

use std::path::Path;

use modenorm::data::{batches, load_idx_dir, synth_generate, Dataset, SynthConfig};
use modenorm::nn::{count_errors, lr_schedule, softmax_xent, Model, ModelSpec, Sgd};
use modenorm::norm::Phase;
use modenorm::{Rng, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_list, DataSource, RunConfig};
use crate::error::{CliError, Result};
use crate::metrics::{to_csv, MetricsRow};
use crate::report::{assignments, purity, sample_gates, usage};

/// Independent random streams derived from the run seed, so that e.g. gate
/// noise never shifts the shuffling order.
const SHUFFLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const GATE_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Samples per forward pass during evaluation. Every layer normalizes a
/// sample independently at inference, so chunking does not change results.
const EVAL_CHUNK: usize = 1000;

pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    Ok(match &cfg.data {
        DataSource::Synth => synth_generate(&SynthConfig {
            seed: cfg.seed,
            ..SynthConfig::default()
        })?,
        DataSource::Idx(dir) => load_idx_dir(dir)?,
    })
}

pub fn model_spec(cfg: &RunConfig, input: [usize; 3], classes: usize) -> ModelSpec {
    ModelSpec::new(input, cfg.hidden.clone(), classes, cfg.norm_config(input[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub error_rate: f64,
    /// Mean gate mass per mode of the first gated layer (`[1.0]` without one).
    pub gate_usage: Vec<f64>,
    /// Per-sample mode weights of every gated layer, by norm-layer index.
    pub gates: Vec<(usize, Vec<Vec<f64>>)>,
}

impl Evaluation {
    /// Purity of the first gated layer against the dataset's mode labels.
    pub fn purity(&self, ds: &Dataset) -> Option<f64> {
        let truth = ds.mode_labels.as_ref()?;
        let (_, weights) = self.gates.first()?;
        let modes = weights.first()?.len();
        let components = truth.iter().max()? + 1;
        Some(purity(&assignments(weights), modes, truth, components))
    }
}

fn summarize(loss_sum: f64, errors: usize, n: usize, gates: Vec<(usize, Vec<Vec<f64>>)>) -> Evaluation {
    let gate_usage = match gates.first() {
        Some((_, w)) => usage(w, w.first().map_or(0, Vec::len)),
        None => vec![1.0],
    };
    Evaluation {
        loss: loss_sum / n as f64,
        error_rate: errors as f64 / n as f64,
        gate_usage,
        gates,
    }
}

fn append_gates(acc: &mut Vec<(usize, Vec<Vec<f64>>)>, gates: Vec<Option<modenorm::gating::GateMatrix>>, n: usize) {
    let mut slot = 0;
    for (layer, g) in gates.into_iter().enumerate() {
        if let Some(g) = g {
            let rows = sample_gates(&g, n);
            match acc.get_mut(slot) {
                Some((_, w)) => w.extend(rows),
                None => acc.push((layer, rows)),
            }
            slot += 1;
        }
    }
}

/// Inference-mode loss, error rate and gates over a whole dataset. Never
/// mutates the model.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<Evaluation> {
    let (mut loss_sum, mut errors) = (0.0, 0);
    let mut gates = Vec::new();
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(EVAL_CHUNK) {
        let batch = ds.gather(chunk)?;
        let (logits, g) = model.predict(&batch.features)?;
        let (loss, _) = softmax_xent(&logits, &batch.labels)?;
        loss_sum += loss * chunk.len() as f64;
        errors += count_errors(&logits, &batch.labels)?;
        append_gates(&mut gates, g, chunk.len());
    }
    Ok(summarize(loss_sum, errors, ds.len(), gates))
}

/// Training-mode pass with batch statistics on a copy of the model, used for
/// the epoch-0 rows before any running statistics exist.
fn evaluate_batch_stats(model: &Model, ds: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let mut probe = model.clone();
    probe.set_phase(Phase::Train);
    let (mut loss_sum, mut errors) = (0.0, 0);
    for batch in batches(ds, batch_size, &mut Rng::new(0), false)? {
        let batch = batch?;
        let n = batch.labels.len();
        let logits = probe.forward(&batch.features)?;
        let (loss, _) = softmax_xent(&logits, &batch.labels)?;
        loss_sum += loss * n as f64;
        errors += count_errors(&logits, &batch.labels)?;
    }
    let mut gates = Vec::new();
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(batch_size) {
        let features = ds.gather(chunk)?.features;
        let g = gate_snapshot(&mut probe, &features)?;
        append_gates(&mut gates, g, chunk.len());
    }
    Ok(summarize(loss_sum, errors, ds.len(), gates))
}

fn gate_snapshot(model: &mut Model, x: &Tensor) -> Result<Vec<Option<modenorm::gating::GateMatrix>>> {
    model.forward(x)?;
    Ok(model.norm_layers().map(|l| l.last_gates().cloned()).collect())
}

fn row(epoch: usize, split: &str, e: &Evaluation) -> MetricsRow {
    MetricsRow {
        epoch,
        split: split.into(),
        loss: e.loss,
        error_rate: e.error_rate,
        gate_usage: e.gate_usage.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub model: Model,
    pub test: Evaluation,
    /// Purity of the first gated layer on the test split, when mode labels
    /// and a gated layer exist.
    pub purity: Option<f64>,
}

impl RunOutput {
    pub fn final_test_error(&self) -> f64 {
        self.test.error_rate
    }
}

/// Failure of a run together with the rows recorded before it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: CliError,
    pub rows: Vec<MetricsRow>,
}

fn numerical(msg: String) -> CliError {
    CliError::Numerical(msg)
}

/// Train a fresh model on `train`, reporting both splits after every epoch.
pub fn train(cfg: &RunConfig, train_ds: &Dataset, test_ds: &Dataset) -> std::result::Result<RunOutput, RunFailure> {
    let mut rows = Vec::new();
    match train_inner(cfg, train_ds, test_ds, &mut rows) {
        Ok(out) => Ok(out),
        Err(error) => {
            if error.exit_code() == 2 {
                rows.push(MetricsRow {
                    epoch: rows.last().map_or(0, |r| r.epoch + 1),
                    split: "abort".into(),
                    loss: f64::NAN,
                    error_rate: f64::NAN,
                    gate_usage: Vec::new(),
                });
            }
            Err(RunFailure { error, rows })
        }
    }
}

fn train_inner(cfg: &RunConfig, train_ds: &Dataset, test_ds: &Dataset, rows: &mut Vec<MetricsRow>) -> Result<RunOutput> {
    cfg.validate()?;
    if train_ds.sample_shape() != test_ds.sample_shape() {
        return Err(CliError::Validation("train and test samples differ in shape".into()));
    }
    let classes = train_ds.classes.max(test_ds.classes);
    let mut model = Model::new(model_spec(cfg, train_ds.sample_shape(), classes), &mut Rng::new(cfg.seed))?;
    model.perturb_gating(cfg.gate_noise, &mut Rng::new(cfg.seed ^ GATE_STREAM))?;
    let mut opt = Sgd::new(cfg.sgd())?;
    let mut shuffle = Rng::new(cfg.seed ^ SHUFFLE_STREAM);
    let milestones = cfg.milestones();

    rows.push(row(0, "train", &evaluate_batch_stats(&model, train_ds, cfg.batch_size)?));
    rows.push(row(0, "test", &evaluate_batch_stats(&model, test_ds, cfg.batch_size)?));

    let mut test_eval = None;
    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch - 1, cfg.lr, &milestones);
        model.set_phase(Phase::Train);
        for (step, batch) in batches(train_ds, cfg.batch_size, &mut shuffle, true)?.enumerate() {
            let batch = batch?;
            let logits = model.forward(&batch.features)?;
            let (loss, dlogits) = softmax_xent(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(numerical(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            model.backward(&dlogits)?;
            let params = model.params_and_grads().into_iter().map(|(_, p, g)| (p, g)).collect();
            opt.step(params, lr).map_err(|e| numerical(format!("epoch {epoch}, step {step}: {e}")))?;
        }
        model.set_phase(Phase::Eval);
        let tr = evaluate(&model, train_ds)?;
        let te = evaluate(&model, test_ds)?;
        if !tr.loss.is_finite() || !te.loss.is_finite() {
            return Err(numerical(format!("non-finite evaluation loss after epoch {epoch}")));
        }
        rows.push(row(epoch, "train", &tr));
        rows.push(row(epoch, "test", &te));
        log::info!(
            "epoch {epoch}: train loss {:.4} err {:.4}, test loss {:.4} err {:.4}",
            tr.loss,
            tr.error_rate,
            te.loss,
            te.error_rate
        );
        test_eval = Some(te);
    }
    let test = test_eval.expect("at least one epoch");
    let purity = test.purity(test_ds);
    Ok(RunOutput {
        rows: std::mem::take(rows),
        model,
        test,
        purity,
    })
}

/// Checkpoint holding every model tensor, the run configuration and the
/// model geometry needed to rebuild it.
pub fn checkpoint(cfg: &RunConfig, model: &Model) -> Checkpoint {
    let spec = model.spec();
    let mut echo = cfg.echo();
    echo.push(("input".into(), spec.input.map(|d| d.to_string()).join(",")));
    echo.push(("classes".into(), spec.classes.to_string()));
    Checkpoint {
        tensors: model.named_state(),
        echo,
    }
}

/// Rebuild configuration and model from a checkpoint.
pub fn restore(ck: &Checkpoint) -> Result<(RunConfig, Model)> {
    let cfg = RunConfig::from_echo(&ck.echo)?;
    let missing = |k: &str| CliError::Checkpoint(format!("config echo lacks {k}"));
    let input: Vec<usize> = parse_list(ck.echo_value("input").ok_or_else(|| missing("input"))?)?;
    let input: [usize; 3] = input
        .try_into()
        .map_err(|_| CliError::Checkpoint("input must list C,H,W".into()))?;
    let classes: usize = ck
        .echo_value("classes")
        .ok_or_else(|| missing("classes"))?
        .parse()
        .map_err(|_| CliError::Checkpoint("bad class count".into()))?;
    let mut model = Model::new(model_spec(&cfg, input, classes), &mut Rng::new(0))?;
    let expected: Vec<String> = model.named_state().into_iter().map(|(n, _)| n).collect();
    let stored: Vec<&String> = ck.tensors.iter().map(|(n, _)| n).collect();
    if stored.len() != expected.len() || expected.iter().any(|n| !stored.contains(&n)) {
        return Err(CliError::Checkpoint(format!(
            "tensor set does not match the configured model (expected {}, found {})",
            expected.len(),
            stored.len()
        )));
    }
    for (name, t) in &ck.tensors {
        model.load_state(name, t.clone())?;
    }
    model.set_phase(Phase::Eval);
    Ok((cfg, model))
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.mncp";

/// Train, then write `metrics.csv` and `checkpoint.mncp` into `cfg.out`.
/// A numerically failed run still writes its metrics with the diagnostic
/// row.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (train_ds, test_ds) = load_data(cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let metrics = cfg.out.join(METRICS_FILE);
    match train(cfg, &train_ds, &test_ds) {
        Ok(out) => {
            write(&metrics, to_csv(&out.rows, out.test.gate_usage.len()).as_bytes())?;
            checkpoint(cfg, &out.model).save(&cfg.out.join(CHECKPOINT_FILE))?;
            Ok(out)
        }
        Err(RunFailure { error, rows }) => {
            let modes = if cfg.norm.is_gated() { cfg.modes } else { 1 };
            write(&metrics, to_csv(&rows, modes).as_bytes())?;
            Err(error)
        }
    }
}
