//! Normalization layers: batch, instance, layer and group norm baselines,
//! mode normalization (gated per-sample mixture of batch statistics) and
//! mode group normalization (gated per-channel mixture within a sample).
//!
//! All layers take `N×C×H×W` input and apply a per-channel affine map
//! `α ⊙ x̂ + β` to the normalized tensor `x̂`. Variances are biased (divided
//! by the effective count) and guarded by `ε` before the square root.

mod layer;
mod mode;
mod mode_group;
mod partition;
mod stats;

use std::fmt;
use std::str::FromStr;

pub use layer::{Gating, NormGrads, NormLayer};
pub use mode::{mn_stats, BatchModeStats};
pub use partition::GroupSpec;
pub use stats::{update_running, ModeStats};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Effective counts below this are treated as an empty mode for the pass.
pub const COUNT_FLOOR: f64 = 1e-6;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    Batch,
    Instance,
    Layer,
    Group,
    Mode,
    ModeGroup,
}

impl NormKind {
    pub const ALL: [NormKind; 6] = [
        NormKind::Batch,
        NormKind::Instance,
        NormKind::Layer,
        NormKind::Group,
        NormKind::Mode,
        NormKind::ModeGroup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Batch => "bn",
            NormKind::Instance => "in",
            NormKind::Layer => "ln",
            NormKind::Group => "gn",
            NormKind::Mode => "mn",
            NormKind::ModeGroup => "mgn",
        }
    }

    /// Kinds whose inference path reads running statistics.
    pub fn has_running_stats(self) -> bool {
        matches!(self, NormKind::Batch | NormKind::Mode)
    }

    pub fn is_gated(self) -> bool {
        matches!(self, NormKind::Mode | NormKind::ModeGroup)
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown norm kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    pub kind: NormKind,
    pub channels: usize,
    /// Number of modes `K` (gated kinds only; 1 otherwise).
    pub modes: usize,
    /// Channel groups (group norm only).
    pub groups: usize,
    /// Running-estimate memory in `(0, 1]`.
    pub lambda: f64,
    pub eps: f64,
}

impl NormConfig {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        Self {
            kind,
            channels,
            modes: 1,
            groups: 1,
            lambda: DEFAULT_LAMBDA,
            eps: DEFAULT_EPS,
        }
    }

    pub fn with_modes(mut self, modes: usize) -> Self {
        self.modes = modes;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be at least 1".into()));
        }
        if self.modes == 0 {
            return Err(Error::InvalidConfig("mode count K must be at least 1".into()));
        }
        validate_lambda(self.lambda)?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.kind == NormKind::Group {
            GroupSpec::new(self.channels, self.groups)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("lambda must lie in (0, 1], got {lambda}")))
    }
}

/// Per-channel scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl AffineParams {
    /// `α = 1`, `β = 0`.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Self {
            alpha: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
        })
    }

    pub fn channels(&self) -> usize {
        self.alpha.numel()
    }

    /// `y = α_c x̂ + β_c` over an `N×C×H×W` tensor.
    pub fn apply(&self, xhat: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = xhat.dims4()?;
        if c != self.channels() {
            return Err(Error::mismatch(&[c], self.alpha.shape()));
        }
        let s = h * w;
        let mut y = xhat.clone();
        for (i, window) in y.data_mut().chunks_mut(s).enumerate() {
            let (a, b) = (self.alpha.data()[i % c], self.beta.data()[i % c]);
            window.iter_mut().for_each(|v| *v = a * *v + b);
        }
        Ok(y)
    }

    /// Returns `(dx̂, dα, dβ)`.
    pub fn backward(&self, dy: &Tensor, xhat: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (_, c, h, w) = dy.dims4()?;
        if dy.shape() != xhat.shape() {
            return Err(Error::mismatch(xhat.shape(), dy.shape()));
        }
        let s = h * w;
        let mut dxhat = dy.clone();
        let mut dalpha = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, (dwin, xwin)) in dxhat
            .data_mut()
            .chunks_mut(s)
            .zip(xhat.data().chunks(s))
            .enumerate()
        {
            let ch = i % c;
            let a = self.alpha.data()[ch];
            for (d, &xh) in dwin.iter_mut().zip(xwin) {
                dalpha[ch] += *d * xh;
                dbeta[ch] += *d;
                *d *= a;
            }
        }
        Ok((dxhat, Tensor::new(&[c], dalpha)?, Tensor::new(&[c], dbeta)?))
    }
}

/// `1/√(max(v, 0) + ε)` and whether the clamp was active.
pub(crate) fn inv_std(var: f64, eps: f64) -> (f64, bool) {
    if var > 0.0 {
        (1.0 / (var + eps).sqrt(), false)
    } else {
        (1.0 / eps.sqrt(), true)
    }
}
