use super::mode::BatchModeStats;
use super::validate_lambda;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-mode, per-channel raw moments: the latest batch and their running
/// averages. Batch norm uses a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeStats {
    /// `K×C` gate-weighted means `⟨x⟩_k` of the last training batch.
    pub batch_m1: Tensor,
    /// `K×C` gate-weighted second moments `⟨x²⟩_k` of the last training batch.
    pub batch_m2: Tensor,
    /// `K` effective counts `N_k` (total gate mass) of the last batch.
    pub counts: Tensor,
    pub run_m1: Tensor,
    pub run_m2: Tensor,
    pub initialized: bool,
}

impl ModeStats {
    pub fn new(modes: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            batch_m1: Tensor::zeros(&[modes, channels])?,
            batch_m2: Tensor::zeros(&[modes, channels])?,
            counts: Tensor::zeros(&[modes])?,
            run_m1: Tensor::zeros(&[modes, channels])?,
            run_m2: Tensor::zeros(&[modes, channels])?,
            initialized: false,
        })
    }

    pub fn modes(&self) -> usize {
        self.counts.numel()
    }

    pub fn channels(&self) -> usize {
        self.run_m1.shape()[1]
    }

    /// Running `(μ, σ²)` with `σ² = max(⟨x²⟩ − ⟨x⟩², 0)`.
    pub fn running_mean_var(&self, k: usize, c: usize) -> (f64, f64) {
        let i = k * self.channels() + c;
        let m1 = self.run_m1.data()[i];
        (m1, (self.run_m2.data()[i] - m1 * m1).max(0.0))
    }
}

/// Blend batch moments into the running estimates:
/// `run ← λ·batch + (1 − λ)·run` for both raw moments.
///
/// The first call copies the batch moments outright. Modes flagged as
/// floored (negligible gate mass) keep their running values.
pub fn update_running(stats: &mut ModeStats, batch: &BatchModeStats, lambda: f64) -> Result<()> {
    validate_lambda(lambda)?;
    if batch.m1.shape() != stats.run_m1.shape() {
        return Err(Error::mismatch(stats.run_m1.shape(), batch.m1.shape()));
    }
    stats.batch_m1 = batch.m1.clone();
    stats.batch_m2 = batch.m2.clone();
    stats.counts = batch.counts.clone();
    if !stats.initialized {
        stats.run_m1 = batch.m1.clone();
        stats.run_m2 = batch.m2.clone();
        stats.initialized = true;
        return Ok(());
    }
    let c = stats.channels();
    for (k, &floored) in batch.floored.iter().enumerate() {
        if floored {
            continue;
        }
        let range = k * c..(k + 1) * c;
        for (run, &b) in stats.run_m1.data_mut()[range.clone()].iter_mut().zip(&batch.m1.data()[range.clone()]) {
            *run = lambda * b + (1.0 - lambda) * *run;
        }
        for (run, &b) in stats.run_m2.data_mut()[range.clone()].iter_mut().zip(&batch.m2.data()[range]) {
            *run = lambda * b + (1.0 - lambda) * *run;
        }
    }
    Ok(())
}
