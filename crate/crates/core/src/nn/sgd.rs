use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ v + (g + λ p)`, `p ← p − γ v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    /// One update with learning rate `lr`. Parameters must be passed in the
    /// same order on every call; velocity buffers are matched by position.
    pub fn step(&mut self, params: Vec<(&mut Tensor, &Tensor)>, lr: f64) -> Result<()> {
        for (i, (_, grad)) in params.iter().enumerate() {
            grad.ensure_finite(&format!("gradient of parameter {i}"))?;
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(p, _)| p.zeros_like()).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let SgdConfig { momentum, weight_decay, .. } = self.config;
        for ((param, grad), v) in params.into_iter().zip(&mut self.velocity) {
            if v.shape() != param.shape() || grad.shape() != param.shape() {
                return Err(Error::mismatch(param.shape(), grad.shape()));
            }
            for ((p, &g), vel) in param.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
                *vel = momentum * *vel + (g + weight_decay * *p);
                *p -= lr * *vel;
            }
        }
        Ok(())
    }
}

/// `base · 0.1^m` where `m` counts milestones `≤ epoch`.
pub fn lr_schedule(epoch: usize, base: f64, milestones: &[usize]) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch >= m).count();
    base * 0.1f64.powi(passed as i32)
}

/// Milestones at 65% and 80% of the run.
pub fn default_milestones(epochs: usize) -> Vec<usize> {
    [0.65, 0.8]
        .iter()
        .map(|f| (f * epochs as f64).round() as usize)
        .collect()
}
