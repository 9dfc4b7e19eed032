//! Seeded multi-modal classification data. Each mixture component shifts
//! and rescales a shared set of class templates, so labels carry the same
//! meaning in every mode while feature statistics differ between modes.

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub modes: usize,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Shift magnitude `s`; mode `m` adds `s` to every pixel of channel `m`.
    pub separation: f64,
    /// Ratio of the largest to the smallest mode scale. Scales are spaced
    /// geometrically from 1.
    pub scale_ratio: f64,
    /// Mixture weights `π`, one per mode.
    pub weights: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            modes: 2,
            classes: 4,
            train: 8000,
            test: 2000,
            channels: 4,
            height: 4,
            width: 4,
            separation: 6.0,
            scale_ratio: 2.0,
            weights: vec![0.5, 0.5],
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Default geometry with `modes` equally weighted components.
    pub fn with_modes(modes: usize) -> Self {
        Self {
            modes,
            weights: vec![1.0 / modes.max(1) as f64; modes],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.modes == 0 || self.classes == 0 {
            return bad(format!("modes ({}) and classes ({}) must be >= 1", self.modes, self.classes));
        }
        if self.train == 0 || self.test == 0 {
            return bad("train and test splits must be non-empty".into());
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("channels, height and width must be >= 1".into());
        }
        if self.modes > self.channels {
            return bad(format!(
                "{} modes need at least as many channels for their shift directions, got {}",
                self.modes, self.channels
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be >= 0, got {}", self.separation));
        }
        if !(self.scale_ratio > 0.0 && self.scale_ratio.is_finite()) {
            return bad(format!("scale ratio must be > 0, got {}", self.scale_ratio));
        }
        if self.weights.len() != self.modes {
            return bad(format!("{} mixture weights for {} modes", self.weights.len(), self.modes));
        }
        if self.weights.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return bad(format!("mixture weights must be non-negative, got {:?}", self.weights));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights must sum to 1, got {total}"));
        }
        Ok(())
    }

    /// Multiplicative scale of mode `m`.
    pub fn scale(&self, m: usize) -> f64 {
        if self.modes == 1 {
            1.0
        } else {
            self.scale_ratio.powf(m as f64 / (self.modes - 1) as f64)
        }
    }
}

fn draw_mode(weights: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (m, &p) in weights.iter().enumerate() {
        acc += p;
        if u < acc {
            return m;
        }
    }
    // Rounding in the cumulative sum: fall back to the last non-empty mode.
    weights.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draw `(train, test)` splits. Class templates come first from the seeded
/// stream, then training samples, then test samples.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let plane = h * w;
    let dim = c * plane;
    let templates = Tensor::randn(&[cfg.classes, dim], &mut rng)?;

    let mut split = |n: usize| -> Result<Dataset> {
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        let mut modes = Vec::with_capacity(n);
        for _ in 0..n {
            let m = draw_mode(&cfg.weights, &mut rng);
            let y = rng.below(cfg.classes);
            let scale = cfg.scale(m);
            let template = &templates.data()[y * dim..(y + 1) * dim];
            for (j, &t) in template.iter().enumerate() {
                let shift = if j / plane == m { cfg.separation } else { 0.0 };
                features.push(scale * (t + rng.normal()) + shift);
            }
            labels.push(y);
            modes.push(m);
        }
        Dataset::new(Tensor::new(&[n, c, h, w], features)?, labels, Some(modes), cfg.classes)
    };
    let train = split(cfg.train)?;
    let test = split(cfg.test)?;
    Ok((train, test))
}
