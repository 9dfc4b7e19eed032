//! Subcommands other than `train` and `sweep`.

use std::fmt::Write as _;
use std::path::Path;

use modenorm::data::{synth_generate, Dataset, SynthConfig};
use modenorm::gradcheck::{run_suite, GradTolerance, InstanceResult, SuiteOptions, Target};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, Result};
use crate::metrics::{to_csv, MetricsRow};
use crate::report::{assignments, layer_report, purity};
use crate::train::{evaluate, load_data, restore, Evaluation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Data for a checkpointed run: its own source and seed unless overridden.
pub fn checkpoint_data(cfg: &RunConfig, data: Option<DataSource>, split: Split) -> Result<Dataset> {
    let cfg = RunConfig {
        data: data.unwrap_or_else(|| cfg.data.clone()),
        ..cfg.clone()
    };
    let (train, test) = load_data(&cfg)?;
    Ok(match split {
        Split::Train => train,
        Split::Test => test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub row: MetricsRow,
    pub evaluation: Evaluation,
    pub csv: String,
}

/// Inference-mode metrics of a checkpoint on one split. Reads the
/// checkpoint and never writes it.
pub fn cmd_eval(checkpoint: &Path, data: Option<DataSource>, split: Split) -> Result<EvalOutput> {
    let ck = Checkpoint::load(checkpoint)?;
    let (cfg, model) = restore(&ck)?;
    let ds = checkpoint_data(&cfg, data, split)?;
    if ds.sample_shape() != model.spec().input {
        return Err(CliError::Validation(format!(
            "data samples are {:?} but the checkpoint expects {:?}",
            ds.sample_shape(),
            model.spec().input
        )));
    }
    let evaluation = evaluate(&model, &ds)?;
    let row = MetricsRow {
        epoch: cfg.epochs,
        split: split.as_str().into(),
        loss: evaluation.loss,
        error_rate: evaluation.error_rate,
        gate_usage: evaluation.gate_usage.clone(),
    };
    let csv = to_csv(std::slice::from_ref(&row), row.gate_usage.len());
    Ok(EvalOutput { row, evaluation, csv })
}

/// Per gated layer and mode: usage and top samples, plus purity when the
/// data carries mode labels.
pub fn cmd_gates_report(checkpoint: &Path, data: Option<DataSource>, split: Split, top_p: usize) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let (cfg, model) = restore(&ck)?;
    if !model.norm_layers().any(|l| l.kind().is_gated()) {
        return Err(CliError::Validation(format!(
            "model uses {} normalization, which has no gates",
            cfg.norm
        )));
    }
    let ds = checkpoint_data(&cfg, data, split)?;
    let evaluation = evaluate(&model, &ds)?;
    let mut s = String::new();
    for (layer, weights) in &evaluation.gates {
        let p = ds.mode_labels.as_ref().map(|truth| {
            let modes = weights.first().map_or(1, Vec::len);
            let components = truth.iter().max().map_or(1, |m| m + 1);
            purity(&assignments(weights), modes, truth, components)
        });
        s.push_str(&layer_report(*layer, weights, top_p, p));
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct GradcheckOutput {
    pub results: Vec<InstanceResult>,
    pub passed: bool,
    pub text: String,
}

/// Run the finite-difference suite; the caller maps `passed == false` to a
/// non-zero exit.
pub fn cmd_gradcheck(targets: &[Target], first_seed: u64, seeds: u64, opts: &SuiteOptions) -> Result<GradcheckOutput> {
    if seeds == 0 || targets.is_empty() {
        return Err(CliError::Validation("gradcheck needs at least one target and one seed".into()));
    }
    let results = run_suite(targets, first_seed, seeds, opts)?;
    let mut text = String::new();
    let mut passed = true;
    for &target in targets {
        let mine: Vec<&InstanceResult> = results.iter().filter(|r| r.target == target).collect();
        let rel = mine.iter().map(|r| r.report.max_rel_err()).fold(0.0, f64::max);
        let abs = mine
            .iter()
            .flat_map(|r| r.report.entries.iter().map(|(_, e)| e.max_abs_err))
            .fold(0.0, f64::max);
        let failed: Vec<&&InstanceResult> = mine.iter().filter(|r| !r.report.passed()).collect();
        passed &= failed.is_empty();
        let status = if failed.is_empty() { "PASS" } else { "FAIL" };
        let _ = writeln!(
            text,
            "{status} {target}: {} instances, max abs err {abs:.3e}, max rel err {rel:.3e}",
            mine.len()
        );
        for r in failed {
            for (name, e) in r.report.entries.iter().filter(|(_, e)| !e.passed) {
                let _ = writeln!(text, "  seed {} {name}: failing indices {:?}", r.seed, e.failing);
            }
        }
    }
    Ok(GradcheckOutput { results, passed, text })
}

/// Suite options with the given tolerances.
pub fn gradcheck_options(h: f64, rtol: f64, atol: f64) -> SuiteOptions {
    SuiteOptions {
        tol: GradTolerance { h, rtol, atol },
        ..SuiteOptions::default()
    }
}

fn dataset_csv(ds: &Dataset) -> String {
    let per = ds.features.numel() / ds.len().max(1);
    let mut s = String::from("label,mode");
    for j in 0..per {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for (i, row) in ds.features.data().chunks(per).enumerate() {
        let mode = ds.mode_labels.as_ref().map_or(String::new(), |m| m[i].to_string());
        let _ = write!(s, "{},{mode}", ds.labels[i]);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Write both synthetic splits as CSV and return a summary: per split, the
/// share of each mode and the mean of each mode's shift channel.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<String> {
    let (train, test) = synth_generate(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut summary = String::new();
    for (name, ds) in [("train", &train), ("test", &test)] {
        let path = out.join(format!("synth_{name}.csv"));
        std::fs::write(&path, dataset_csv(ds)).map_err(|e| CliError::io(&path, e))?;
        let modes = ds.mode_labels.as_ref().expect("synthetic data has mode labels");
        let [c, h, w] = ds.sample_shape();
        let plane = h * w;
        let _ = writeln!(summary, "{name}: {} samples, {c}x{h}x{w}, {} classes", ds.len(), ds.classes);
        for m in 0..cfg.modes {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| modes[i] == m).collect();
            let mean = members
                .iter()
                .map(|&i| {
                    let start = i * c * plane + m * plane;
                    ds.features.data()[start..start + plane].iter().sum::<f64>() / plane as f64
                })
                .sum::<f64>()
                / members.len().max(1) as f64;
            let _ = writeln!(
                summary,
                "  mode {}: share {:.4}, scale {:.4}, mean of channel {} {:.4}",
                m + 1,
                members.len() as f64 / ds.len() as f64,
                cfg.scale(m),
                m + 1,
                mean
            );
        }
    }
    Ok(summary)
}
