//! Randomized gradient certification for every layer with a backward pass.
//! Each instance draws its own shapes, inputs and parameters (including
//! non-zero gating parameters) from the seed and checks every input and
//! parameter tensor against central differences of `L = Σ w ⊙ y`.

use std::fmt;
use std::str::FromStr;

use super::{check, numeric_grad, GradTolerance, SuiteReport};
use crate::error::{Error, Result};
use crate::gating::{ChannelGatingParams, SampleGatingParams};
use crate::nn::{softmax_xent, DenseLayer, Layer, Model, ModelSpec, Relu};
use crate::norm::{Gating, NormConfig, NormKind, NormLayer, Phase};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Norm(NormKind),
    Dense,
    Relu,
    Xent,
    Model,
}

impl Target {
    pub const ALL: [Target; 10] = [
        Target::Norm(NormKind::Batch),
        Target::Norm(NormKind::Instance),
        Target::Norm(NormKind::Layer),
        Target::Norm(NormKind::Group),
        Target::Norm(NormKind::Mode),
        Target::Norm(NormKind::ModeGroup),
        Target::Dense,
        Target::Relu,
        Target::Xent,
        Target::Model,
    ];
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Norm(kind) => write!(f, "{kind}"),
            Target::Dense => f.write_str("dense"),
            Target::Relu => f.write_str("relu"),
            Target::Xent => f.write_str("xent"),
            Target::Model => f.write_str("model"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Target::Dense),
            "relu" => Ok(Target::Relu),
            "xent" => Ok(Target::Xent),
            "model" => Ok(Target::Model),
            other => other.parse().map(Target::Norm).map_err(|_| {
                Error::InvalidConfig(format!(
                    "unknown gradcheck target {other:?} (expected bn, in, ln, gn, mn, mgn, dense, relu, xent or model)"
                ))
            }),
        }
    }
}

/// Hook applied to every analytic gradient before comparison. Used as a
/// negative control: a corrupted analytic gradient must fail the check.
pub type Corruption = fn(&mut Tensor);

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub tol: GradTolerance,
    /// Relative tolerance for the composed model, whose loss passes through
    /// several layers of rounding.
    pub model_rtol: f64,
    pub corrupt: Option<Corruption>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            tol: GradTolerance::default(),
            model_rtol: 1e-4,
            corrupt: None,
        }
    }
}

fn compare(report: &mut SuiteReport, name: &str, mut analytic: Tensor, numeric: &Tensor, opts: &SuiteOptions) -> Result<()> {
    if let Some(corrupt) = opts.corrupt {
        corrupt(&mut analytic);
    }
    report.push(name, check(&analytic, numeric, opts.tol.rtol, opts.tol.atol)?);
    Ok(())
}

/// Conditioning floor for gated instances, `100·ε` at the default ε.
const MIN_MODE_VARIANCE: f64 = 1e-3;

fn dims(rng: &mut Rng) -> (usize, usize, usize, usize) {
    (2 + rng.below(3), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3))
}

/// Gaussian input with a random offset per (sample, channel), so that pooled
/// channel values, and with them the gates, differ between samples and
/// channels.
fn input(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    let mut x = Tensor::randn(shape, rng)?;
    let per = x.numel() / (shape[0] * shape[1]);
    for chunk in x.data_mut().chunks_mut(per) {
        let offset = rng.normal();
        for v in chunk {
            *v += offset;
        }
    }
    Ok(x)
}

fn randomize_affine(layer: &mut NormLayer, rng: &mut Rng) -> Result<()> {
    let c = layer.config().channels;
    layer.affine.alpha = Tensor::rand_uniform(&[c], 0.5, 1.5, rng)?;
    layer.affine.beta = Tensor::randn(&[c], rng)?;
    Ok(())
}

fn random_norm(kind: NormKind, rng: &mut Rng) -> Result<(NormLayer, Tensor)> {
    let (n, mut c, h, w) = dims(rng);
    if kind == NormKind::ModeGroup && c == 1 {
        // A single channel makes every mode variance identically zero, which
        // sits on the clamp at 0 where the output is not differentiable.
        c = 2;
    }
    let divisors: Vec<usize> = (1..=c).filter(|g| c % g == 0).collect();
    let groups = divisors[rng.below(divisors.len())];
    let modes = 1 + rng.below(3);
    let mut layer = NormLayer::new(NormConfig::new(kind, c).with_modes(modes).with_groups(groups))?;
    randomize_affine(&mut layer, rng)?;
    layer.gating = match layer.gating {
        Gating::None => Gating::None,
        Gating::Sample(_) => Gating::Sample(SampleGatingParams::random(modes, c, 1.0, rng)?),
        Gating::Channel(_) => Gating::Channel(ChannelGatingParams::random(modes, 1.0, rng)?),
    };
    // Gated variances comparable to ε amplify rounding in the loss by
    // (σ² + ε)^(-3/2), beyond what central differences at h = 1e-6 resolve.
    // Redraw the input until every gated variance is well above ε.
    loop {
        let x = input(&[n, c, h, w], rng)?;
        if min_mode_variance(&layer, &x)? >= MIN_MODE_VARIANCE {
            return Ok((layer, x));
        }
    }
}

/// Smallest gated variance of a mode or mode group layer on `x`: per
/// (mode, channel) for sample gating, per (sample, mode) for channel gating.
fn min_mode_variance(layer: &NormLayer, x: &Tensor) -> Result<f64> {
    let pooled = crate::gating::pool_spatial(x)?;
    let params = match &layer.gating {
        Gating::None => return Ok(f64::INFINITY),
        Gating::Sample(params) => {
            let gates = crate::gating::gate_samples(&pooled, params)?;
            let stats = crate::norm::mn_stats(x, &gates)?;
            let var = stats.m1.data().iter().zip(stats.m2.data()).map(|(a, b)| b - a * a);
            return Ok(var.fold(f64::INFINITY, f64::min));
        }
        Gating::Channel(params) => params,
    };
    let gates = crate::gating::gate_channels(&pooled, params)?;
    let (n, c) = pooled.dims2()?;
    let mut min = f64::INFINITY;
    for i in 0..n {
        for k in 0..params.modes() {
            let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for ch in 0..c {
                let (g, v) = (gates.get(i * c + ch, k), pooled.data()[i * c + ch]);
                mass += g;
                m1 += g * v;
                m2 += g * v * v;
            }
            min = min.min(m2 / mass - (m1 / mass).powi(2));
        }
    }
    Ok(min)
}

fn check_norm(kind: NormKind, rng: &mut Rng, opts: &SuiteOptions) -> Result<SuiteReport> {
    let (layer0, x) = random_norm(kind, rng)?;
    let w = Tensor::randn(x.shape(), rng)?;
    let loss = |layer: &NormLayer, x: &Tensor| -> Result<f64> {
        let mut l = layer.clone();
        l.set_phase(Phase::Train);
        Ok(l.forward_train(x)?.mul(&w)?.sum())
    };
    let h = opts.tol.h;
    let mut report = SuiteReport::default();

    let mut layer = layer0.clone();
    layer.forward_train(&x)?;
    let dx = layer.backward(&w)?;
    compare(&mut report, "x", dx, &numeric_grad(|t| loss(&layer0, t), &x, h)?, opts)?;

    let analytic: Vec<(String, Tensor, Tensor)> = layer
        .params_and_grads()
        .into_iter()
        .map(|(name, p, g)| (name.to_string(), p.clone(), g.clone()))
        .collect();
    for (name, p, g) in analytic {
        let numeric = numeric_grad(
            |t| {
                let mut l = layer0.clone();
                l.load_state(&name, t.clone())?;
                loss(&l, &x)
            },
            &p,
            h,
        )?;
        compare(&mut report, &name, g, &numeric, opts)?;
    }
    Ok(report)
}

fn check_dense(rng: &mut Rng, opts: &SuiteOptions) -> Result<SuiteReport> {
    let (n, fin, fout) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
    let mut layer = DenseLayer::new(fin, fout, rng)?;
    layer.bias = Tensor::randn(&[fout], rng)?;
    let x = Tensor::randn(&[n, fin], rng)?;
    let w = Tensor::randn(&[n, fout], rng)?;
    let loss = |l: &DenseLayer, x: &Tensor| -> Result<f64> { Ok(l.infer(x)?.mul(&w)?.sum()) };
    let h = opts.tol.h;

    let mut trained = layer.clone();
    trained.forward(&x)?;
    let dx = trained.backward(&w)?;
    let mut report = SuiteReport::default();
    compare(&mut report, "x", dx, &numeric_grad(|t| loss(&layer, t), &x, h)?, opts)?;
    let nw = numeric_grad(
        |t| loss(&DenseLayer::from_params(t.clone(), layer.bias.clone())?, &x),
        &layer.weight,
        h,
    )?;
    compare(&mut report, "weight", trained.grad_weight, &nw, opts)?;
    let nb = numeric_grad(
        |t| loss(&DenseLayer::from_params(layer.weight.clone(), t.clone())?, &x),
        &layer.bias,
        h,
    )?;
    compare(&mut report, "bias", trained.grad_bias, &nb, opts)?;
    Ok(report)
}

fn check_relu(rng: &mut Rng, opts: &SuiteOptions) -> Result<SuiteReport> {
    let n = 1 + rng.below(4);
    // Keep every coordinate at least 1e-3 away from the kink.
    let x = Tensor::randn(&[n, 6], rng)?.map(|v| if v.abs() < 1e-3 { v.signum() * 1e-3 + v } else { v });
    let w = Tensor::randn(&[n, 6], rng)?;
    let mut relu = Relu::default();
    relu.forward(&x);
    let dx = relu.backward(&w)?;
    let numeric = numeric_grad(|t| Ok(Relu::infer(t).mul(&w)?.sum()), &x, opts.tol.h)?;
    let mut report = SuiteReport::default();
    compare(&mut report, "x", dx, &numeric, opts)?;
    Ok(report)
}

fn check_xent(rng: &mut Rng, opts: &SuiteOptions) -> Result<SuiteReport> {
    let (n, classes) = (1 + rng.below(6), 2 + rng.below(9));
    let logits = Tensor::randn(&[n, classes], rng)?.scale(2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    let (_, analytic) = softmax_xent(&logits, &labels)?;
    let numeric = numeric_grad(|t| Ok(softmax_xent(t, &labels)?.0), &logits, opts.tol.h)?;
    let mut report = SuiteReport::default();
    compare(&mut report, "logits", analytic, &numeric, opts)?;
    Ok(report)
}

/// `Dense → Norm → ReLU → Dense → softmax-xent`, with the norm kind chosen
/// by the seed.
fn check_model(seed: u64, rng: &mut Rng, opts: &SuiteOptions) -> Result<SuiteReport> {
    let kind = NormKind::ALL[seed as usize % NormKind::ALL.len()];
    let (n, c, hh, ww) = (2 + rng.below(3), 2, 1 + rng.below(2), 1 + rng.below(2));
    let hidden = 2 + 2 * rng.below(3);
    let classes = 2 + rng.below(3);
    let norm = NormConfig::new(kind, c).with_modes(2).with_groups(2);
    let spec = ModelSpec {
        input_norm: false,
        ..ModelSpec::new([c, hh, ww], vec![hidden], classes, norm)
    };
    let mut model0 = Model::new(spec, rng)?;
    model0.perturb_gating(1.0, rng)?;
    // Size-one statistic windows output β; a zero β would sit on the ReLU kink.
    for layer in model0.norm_layers_mut() {
        randomize_affine(layer, rng)?;
    }
    let x = loop {
        let x = input(&[n, c, hh, ww], rng)?;
        let (Layer::Dense(first), Layer::Norm(norm)) = (&model0.layers[0], &model0.layers[1]) else {
            unreachable!("model starts with dense then norm");
        };
        let pre = first.infer(&x.clone().reshape(&[n, c * hh * ww])?)?.reshape(&[n, hidden, 1, 1])?;
        if min_mode_variance(norm, &pre)? >= MIN_MODE_VARIANCE {
            break x;
        }
    };
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    let loss = |m: &Model, x: &Tensor| -> Result<f64> {
        let mut m = m.clone();
        Ok(softmax_xent(&m.forward(x)?, &labels)?.0)
    };
    let h = opts.tol.h;

    let mut model = model0.clone();
    let (_, dlogits) = softmax_xent(&model.forward(&x)?, &labels)?;
    let dx = model.backward(&dlogits)?;
    let mut report = SuiteReport::default();
    compare(&mut report, "x", dx, &numeric_grad(|t| loss(&model0, t), &x, h)?, opts)?;
    let analytic: Vec<(String, Tensor, Tensor)> = model
        .params_and_grads()
        .into_iter()
        .map(|(name, p, g)| (name, p.clone(), g.clone()))
        .collect();
    for (name, p, g) in analytic {
        let numeric = numeric_grad(
            |t| {
                let mut m = model0.clone();
                m.load_state(&name, t.clone())?;
                loss(&m, &x)
            },
            &p,
            h,
        )?;
        compare(&mut report, &name, g, &numeric, opts)?;
    }
    Ok(report)
}

/// Check one randomized instance of `target`.
pub fn run_instance(target: Target, seed: u64, opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut rng = Rng::new(seed);
    match target {
        Target::Norm(kind) => check_norm(kind, &mut rng, opts),
        Target::Dense => check_dense(&mut rng, opts),
        Target::Relu => check_relu(&mut rng, opts),
        Target::Xent => check_xent(&mut rng, opts),
        Target::Model => {
            let opts = SuiteOptions {
                tol: GradTolerance {
                    rtol: opts.model_rtol,
                    ..opts.tol
                },
                ..*opts
            };
            check_model(seed, &mut rng, &opts)
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstanceResult {
    pub target: Target,
    pub seed: u64,
    pub report: SuiteReport,
}

/// Every target over seeds `first..first + count`.
pub fn run_suite(targets: &[Target], first: u64, count: u64, opts: &SuiteOptions) -> Result<Vec<InstanceResult>> {
    let mut out = Vec::new();
    for &target in targets {
        for seed in first..first + count {
            let report = run_instance(target, seed, opts)?;
            out.push(InstanceResult { target, seed, report });
        }
    }
    Ok(out)
}
