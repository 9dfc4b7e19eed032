use super::mode::{self, ModeCache};
use super::mode_group::{self, ModeGroupCache};
use super::partition::{self, PartitionCache, Pooling};
use super::{
    inv_std, update_running, AffineParams, BatchModeStats, GroupSpec, ModeStats, NormConfig,
    NormKind, Phase,
};
use crate::error::{Error, Result};
use crate::gating::{ChannelGatingParams, GateMatrix, SampleGatingParams};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Gating {
    None,
    Sample(SampleGatingParams),
    Channel(ChannelGatingParams),
}

/// Gradients accumulated by the last [`NormLayer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads {
    pub alpha: Tensor,
    pub beta: Tensor,
    pub gate_weight: Option<Tensor>,
    pub gate_bias: Option<Tensor>,
}

#[derive(Debug, Clone)]
enum Cache {
    Partition(PartitionCache),
    Mode(ModeCache),
    ModeGroup(ModeGroupCache),
}

impl Cache {
    fn xhat(&self) -> &Tensor {
        match self {
            Cache::Partition(c) => &c.xhat,
            Cache::Mode(c) => &c.xhat,
            Cache::ModeGroup(c) => &c.xhat,
        }
    }
}

/// One normalization layer: configuration, learnable parameters, running
/// statistics (batch and mode norm) and the cache of the last training pass.
#[derive(Debug, Clone)]
pub struct NormLayer {
    config: NormConfig,
    pub affine: AffineParams,
    pub gating: Gating,
    stats: Option<ModeStats>,
    phase: Phase,
    cache: Option<Cache>,
    grads: NormGrads,
}

impl NormLayer {
    /// Identity affine map and zero gating parameters (uniform gates).
    pub fn new(config: NormConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let modes = if config.kind.is_gated() { config.modes } else { 1 };
        let gating = match config.kind {
            NormKind::Mode => Gating::Sample(SampleGatingParams::zeros(modes, c)?),
            NormKind::ModeGroup => Gating::Channel(ChannelGatingParams::zeros(modes)?),
            _ => Gating::None,
        };
        let stats = if config.kind.has_running_stats() {
            Some(ModeStats::new(modes, c)?)
        } else {
            None
        };
        let mut layer = Self {
            config: NormConfig { modes, ..config },
            affine: AffineParams::identity(c)?,
            gating,
            stats,
            phase: Phase::Train,
            cache: None,
            grads: NormGrads {
                alpha: Tensor::zeros(&[c])?,
                beta: Tensor::zeros(&[c])?,
                gate_weight: None,
                gate_bias: None,
            },
        };
        layer.reset_gate_grads();
        Ok(layer)
    }

    fn reset_gate_grads(&mut self) {
        let (w, b) = match &self.gating {
            Gating::None => (None, None),
            Gating::Sample(p) => (Some(p.weight.zeros_like()), Some(p.bias.zeros_like())),
            Gating::Channel(p) => (Some(p.weight.zeros_like()), Some(p.bias.zeros_like())),
        };
        self.grads.gate_weight = w;
        self.grads.gate_bias = b;
    }

    /// Add normal noise of standard deviation `scale` to the gating weights.
    /// Zero-initialized gates are an exact fixed point of training, so a small
    /// perturbation is needed for modes to differentiate.
    pub fn perturb_gating(&mut self, scale: f64, rng: &mut Rng) -> Result<()> {
        let weight = match &mut self.gating {
            Gating::None => return Ok(()),
            Gating::Sample(p) => &mut p.weight,
            Gating::Channel(p) => &mut p.weight,
        };
        let noise = Tensor::randn(weight.shape(), rng)?.scale(scale);
        *weight = weight.add(&noise)?;
        Ok(())
    }

    pub fn config(&self) -> &NormConfig {
        &self.config
    }

    pub fn kind(&self) -> NormKind {
        self.config.kind
    }

    pub fn modes(&self) -> usize {
        self.config.modes
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn stats(&self) -> Option<&ModeStats> {
        self.stats.as_ref()
    }

    pub fn stats_mut(&mut self) -> Option<&mut ModeStats> {
        self.stats.as_mut()
    }

    pub fn grads(&self) -> &NormGrads {
        &self.grads
    }

    /// Gates of the last training forward, if the layer is gated.
    pub fn last_gates(&self) -> Option<&GateMatrix> {
        match self.cache.as_ref()? {
            Cache::Mode(c) => Some(&c.gates),
            Cache::ModeGroup(c) => Some(&c.gates),
            Cache::Partition(_) => None,
        }
    }

    /// Pre-affine tensor `x̂` of the last training forward.
    pub fn last_normalized(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(Cache::xhat)
    }

    fn pooling(&self) -> Result<Pooling> {
        Ok(match self.config.kind {
            NormKind::Batch => Pooling::PerChannel,
            NormKind::Instance => Pooling::PerSampleChannel,
            NormKind::Layer => Pooling::PerSample,
            NormKind::Group => {
                Pooling::PerSampleGroup(GroupSpec::new(self.config.channels, self.config.groups)?)
            }
            kind => {
                return Err(Error::InvalidConfig(format!("{kind} does not use fixed pooling")))
            }
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.channels],
                got: vec![c],
            });
        }
        x.ensure_finite("normalization input")
    }

    /// Forward according to the current phase. Training updates running
    /// statistics and caches what backward needs; evaluation mutates nothing.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self.phase {
            Phase::Train => self.forward_train(x),
            Phase::Eval => Ok(self.infer(x)?.0),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let eps = self.config.eps;
        let lambda = self.config.lambda;
        let cache = match (&self.config.kind, &self.gating) {
            (NormKind::Mode, Gating::Sample(params)) => {
                let cache = mode::forward_train(x, params, eps)?;
                let stats = self.stats.as_mut().ok_or(Error::UninitializedStats)?;
                update_running(stats, &cache.stats, lambda)?;
                Cache::Mode(cache)
            }
            (NormKind::ModeGroup, Gating::Channel(params)) => {
                Cache::ModeGroup(mode_group::forward(x, params, eps)?)
            }
            (NormKind::Batch, _) => {
                let cache = partition::forward(x, Pooling::PerChannel, eps)?;
                let c = self.config.channels;
                let m2: Vec<f64> = cache.mean.iter().zip(&cache.var).map(|(m, v)| v + m * m).collect();
                let batch = BatchModeStats {
                    m1: Tensor::new(&[1, c], cache.mean.clone())?,
                    m2: Tensor::new(&[1, c], m2)?,
                    counts: Tensor::full(&[1], x.shape()[0] as f64)?,
                    floored: vec![false],
                };
                let stats = self.stats.as_mut().ok_or(Error::UninitializedStats)?;
                update_running(stats, &batch, lambda)?;
                Cache::Partition(cache)
            }
            _ => Cache::Partition(partition::forward(x, self.pooling()?, eps)?),
        };
        let y = self.affine.apply(cache.xhat())?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Inference forward; returns the output and, for gated layers, the gates.
    pub fn infer(&self, x: &Tensor) -> Result<(Tensor, Option<GateMatrix>)> {
        self.check_input(x)?;
        let eps = self.config.eps;
        let (xhat, gates) = match (&self.config.kind, &self.gating) {
            (NormKind::Mode, Gating::Sample(params)) => {
                let stats = self.stats.as_ref().ok_or(Error::UninitializedStats)?;
                let (xhat, gates) = mode::forward_eval(x, params, stats, eps)?;
                (xhat, Some(gates))
            }
            (NormKind::ModeGroup, Gating::Channel(params)) => {
                let cache = mode_group::forward(x, params, eps)?;
                (cache.xhat, Some(cache.gates))
            }
            (NormKind::Batch, _) => {
                let stats = self.stats.as_ref().ok_or(Error::UninitializedStats)?;
                if !stats.initialized {
                    return Err(Error::UninitializedStats);
                }
                let c = self.config.channels;
                let mean: Vec<f64> = stats.run_m1.data()[..c].to_vec();
                let inv: Vec<f64> = (0..c)
                    .map(|ch| inv_std(stats.run_m2.data()[ch] - mean[ch] * mean[ch], eps).0)
                    .collect();
                (partition::normalize_with(x, Pooling::PerChannel, &mean, &inv)?, None)
            }
            _ => (partition::forward(x, self.pooling()?, eps)?.xhat, None),
        };
        Ok((self.affine.apply(&xhat)?, gates))
    }

    /// Backward of the last training forward. Stores parameter gradients
    /// (see [`NormLayer::grads`]) and returns `dL/dx`.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        let (dxhat, dalpha, dbeta) = self.affine.backward(dy, cache.xhat())?;
        self.grads.alpha = dalpha;
        self.grads.beta = dbeta;
        let dx = match (&cache, &self.gating) {
            (Cache::Partition(c), _) => partition::backward(&dxhat, c)?,
            (Cache::Mode(c), Gating::Sample(params)) => {
                let (dx, g) = mode::backward(&dxhat, c, params)?;
                self.grads.gate_weight = Some(g.weight);
                self.grads.gate_bias = Some(g.bias);
                dx
            }
            (Cache::ModeGroup(c), Gating::Channel(params)) => {
                let (dx, g) = mode_group::backward(&dxhat, c, params)?;
                self.grads.gate_weight = Some(g.weight);
                self.grads.gate_bias = Some(g.bias);
                dx
            }
            _ => return Err(Error::MissingCache),
        };
        self.cache = Some(cache);
        Ok(dx)
    }

    /// Learnable tensors paired with their latest gradients.
    pub fn params_and_grads(&mut self) -> Vec<(&'static str, &mut Tensor, &Tensor)> {
        let mut out = vec![
            ("alpha", &mut self.affine.alpha, &self.grads.alpha),
            ("beta", &mut self.affine.beta, &self.grads.beta),
        ];
        let (weight, bias) = match &mut self.gating {
            Gating::None => return out,
            Gating::Sample(p) => (&mut p.weight, &mut p.bias),
            Gating::Channel(p) => (&mut p.weight, &mut p.bias),
        };
        if let (Some(gw), Some(gb)) = (&self.grads.gate_weight, &self.grads.gate_bias) {
            out.push(("gate_weight", weight, gw));
            out.push(("gate_bias", bias, gb));
        }
        out
    }

    /// Every persistent tensor: parameters, then running statistics. The
    /// initialization flag is stored as a one-element tensor.
    pub fn named_state(&self) -> Vec<(&'static str, Tensor)> {
        let mut out = vec![("alpha", self.affine.alpha.clone()), ("beta", self.affine.beta.clone())];
        match &self.gating {
            Gating::None => {}
            Gating::Sample(p) => {
                out.push(("gate_weight", p.weight.clone()));
                out.push(("gate_bias", p.bias.clone()));
            }
            Gating::Channel(p) => {
                out.push(("gate_weight", p.weight.clone()));
                out.push(("gate_bias", p.bias.clone()));
            }
        }
        if let Some(stats) = &self.stats {
            out.push(("run_m1", stats.run_m1.clone()));
            out.push(("run_m2", stats.run_m2.clone()));
            let flag = if stats.initialized { 1.0 } else { 0.0 };
            out.push(("stats_initialized", Tensor::full(&[1], flag).expect("valid shape")));
        }
        out
    }

    /// Restore one tensor produced by [`NormLayer::named_state`].
    pub fn load_state(&mut self, name: &str, value: Tensor) -> Result<()> {
        let target: &mut Tensor = match (name, &mut self.gating, &mut self.stats) {
            ("alpha", _, _) => &mut self.affine.alpha,
            ("beta", _, _) => &mut self.affine.beta,
            ("gate_weight", Gating::Sample(p), _) => &mut p.weight,
            ("gate_weight", Gating::Channel(p), _) => &mut p.weight,
            ("gate_bias", Gating::Sample(p), _) => &mut p.bias,
            ("gate_bias", Gating::Channel(p), _) => &mut p.bias,
            ("run_m1", _, Some(s)) => &mut s.run_m1,
            ("run_m2", _, Some(s)) => &mut s.run_m2,
            ("stats_initialized", _, Some(s)) => {
                if value.numel() != 1 {
                    return Err(Error::mismatch(&[1], value.shape()));
                }
                s.initialized = value.data()[0] != 0.0;
                return Ok(());
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{} layer has no tensor named {name:?}",
                    self.config.kind
                )))
            }
        };
        if target.shape() != value.shape() {
            return Err(Error::mismatch(target.shape(), value.shape()));
        }
        *target = value;
        Ok(())
    }
}
