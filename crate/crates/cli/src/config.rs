//! Run configuration and its `key=value` echo stored in checkpoints.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use modenorm::norm::{NormConfig, NormKind, DEFAULT_EPS, DEFAULT_LAMBDA};
use modenorm::nn::{default_milestones, SgdConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth,
    Idx(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub norm: NormKind,
    pub modes: usize,
    pub groups: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub eps: f64,
    pub seed: u64,
    pub data: DataSource,
    /// Epochs at which the learning rate drops by 10×. `None` uses 65% and
    /// 80% of the run.
    pub milestones: Option<Vec<usize>>,
    pub hidden: Vec<usize>,
    /// Standard deviation of the noise added to zero-initialized gating
    /// weights before training.
    pub gate_noise: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            norm: NormKind::Mode,
            modes: 2,
            groups: 2,
            batch_size: 128,
            epochs: 15,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lambda: DEFAULT_LAMBDA,
            eps: DEFAULT_EPS,
            seed: 0,
            data: DataSource::Synth,
            milestones: None,
            hidden: vec![32, 32],
            gate_noise: 1e-3,
            out: PathBuf::from("runs"),
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("cannot parse {v:?} in list {s:?}")))
        })
        .collect()
}

impl RunConfig {
    pub fn milestones(&self) -> Vec<usize> {
        self.milestones
            .clone()
            .unwrap_or_else(|| default_milestones(self.epochs))
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Norm configuration with `channels` filled in per layer by the model.
    pub fn norm_config(&self, channels: usize) -> NormConfig {
        NormConfig::new(self.norm, channels)
            .with_modes(self.modes)
            .with_groups(self.groups)
            .with_lambda(self.lambda)
            .with_eps(self.eps)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.modes == 0 {
            return bad("modes must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and positive, got {:?}", self.hidden));
        }
        if !(self.gate_noise >= 0.0 && self.gate_noise.is_finite()) {
            return bad(format!("gate noise must be >= 0, got {}", self.gate_noise));
        }
        let ms = self.milestones();
        if ms.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("milestones must be sorted, got {ms:?}"));
        }
        self.sgd().validate()?;
        for &h in &self.hidden {
            self.norm_config(h).validate()?;
        }
        Ok(())
    }

    /// One `key=value` line per field, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let data = match &self.data {
            DataSource::Synth => "synth".to_string(),
            DataSource::Idx(dir) => format!("idx:{}", dir.display()),
        };
        [
            ("norm", self.norm.to_string()),
            ("modes", self.modes.to_string()),
            ("groups", self.groups.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lambda", self.lambda.to_string()),
            ("eps", self.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("data", data),
            ("milestones", join(&self.milestones())),
            ("hidden", join(&self.hidden)),
            ("gate_noise", self.gate_noise.to_string()),
            ("out", self.out.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn echo_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.echo() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Rebuild a configuration from echo pairs; unknown keys are ignored so
    /// that checkpoints may carry extra metadata.
    pub fn from_echo(pairs: &[(String, String)]) -> Result<Self> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CliError::Checkpoint(format!("bad value {v:?} for {key}")))
        }
        let mut cfg = RunConfig::default();
        for (k, v) in pairs {
            match k.as_str() {
                "norm" => cfg.norm = v.parse()?,
                "modes" => cfg.modes = num(k, v)?,
                "groups" => cfg.groups = num(k, v)?,
                "batch_size" => cfg.batch_size = num(k, v)?,
                "epochs" => cfg.epochs = num(k, v)?,
                "lr" => cfg.lr = num(k, v)?,
                "momentum" => cfg.momentum = num(k, v)?,
                "weight_decay" => cfg.weight_decay = num(k, v)?,
                "lambda" => cfg.lambda = num(k, v)?,
                "eps" => cfg.eps = num(k, v)?,
                "seed" => cfg.seed = num(k, v)?,
                "data" => {
                    cfg.data = match v.strip_prefix("idx:") {
                        Some(dir) => DataSource::Idx(dir.into()),
                        None => DataSource::Synth,
                    }
                }
                "milestones" => cfg.milestones = Some(parse_list(v)?),
                "hidden" => cfg.hidden = parse_list(v)?,
                "gate_noise" => cfg.gate_noise = num(k, v)?,
                "out" => cfg.out = v.into(),
                _ => {}
            }
        }
        Ok(cfg)
    }
}
