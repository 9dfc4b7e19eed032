//! Softmax gating networks that assign samples (or channels) to modes.
//!
//! Two flavours share the same softmax core:
//! * sample gating: an affine map from the spatially pooled channel vector of
//!   a sample to `K` logits (`weight: K×C`, `bias: K`);
//! * channel gating: a per-scalar affine map from one pooled channel value
//!   to `K` logits (`weight: K`, `bias: K`).

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Tolerance on row sums accepted by [`GateMatrix::new`].
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGatingParams {
    /// `K×C` logit weights.
    pub weight: Tensor,
    /// `K` logit offsets.
    pub bias: Tensor,
}

impl SampleGatingParams {
    /// Zero weights and biases: every sample gets uniform gates.
    pub fn zeros(modes: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(&[modes, channels])?,
            bias: Tensor::zeros(&[modes])?,
        })
    }

    /// Normal weights with standard deviation `scale`, zero bias.
    pub fn random(modes: usize, channels: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: Tensor::randn(&[modes, channels], rng)?.scale(scale),
            bias: Tensor::zeros(&[modes])?,
        })
    }

    pub fn modes(&self) -> usize {
        self.bias.numel()
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGatingParams {
    /// `K` per-scalar slopes.
    pub weight: Tensor,
    /// `K` logit offsets.
    pub bias: Tensor,
}

impl ChannelGatingParams {
    pub fn zeros(modes: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(&[modes])?,
            bias: Tensor::zeros(&[modes])?,
        })
    }

    pub fn random(modes: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: Tensor::randn(&[modes], rng)?.scale(scale),
            bias: Tensor::zeros(&[modes])?,
        })
    }

    pub fn modes(&self) -> usize {
        self.bias.numel()
    }
}

/// Row-stochastic `R×K` assignment weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    g: Tensor,
}

impl GateMatrix {
    /// Validates that entries lie in `[0, 1]` and rows sum to one.
    pub fn new(g: Tensor) -> Result<Self> {
        let (_, k) = g.dims2()?;
        for (r, row) in g.data().chunks(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "gate row {r} is not a probability vector: {row:?}"
                )));
            }
        }
        Ok(Self { g })
    }

    /// Uniform `1/K` gates for `rows` rows.
    pub fn uniform(rows: usize, modes: usize) -> Result<Self> {
        Ok(Self {
            g: Tensor::full(&[rows, modes], 1.0 / modes as f64)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.g.shape()[0]
    }

    pub fn modes(&self) -> usize {
        self.g.shape()[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.modes();
        &self.g.data()[r * k..(r + 1) * k]
    }

    pub fn get(&self, r: usize, k: usize) -> f64 {
        self.g.data()[r * self.modes() + k]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.g
    }

    /// Mean gate mass per mode over all rows.
    pub fn usage(&self) -> Vec<f64> {
        let k = self.modes();
        let mut usage = vec![0.0; k];
        for row in self.g.data().chunks(k) {
            for (u, g) in usage.iter_mut().zip(row) {
                *u += g;
            }
        }
        let rows = self.rows() as f64;
        usage.iter_mut().for_each(|u| *u /= rows);
        usage
    }

    /// Index of the largest gate in each row (first wins on ties).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| {
                self.row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &g)| {
                        if g > best.1 {
                            (k, g)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

/// Mean over height and width: `N×C×H×W -> N×C`.
pub fn pool_spatial(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let s = h * w;
    let pooled = x
        .data()
        .chunks(s)
        .map(|window| window.iter().sum::<f64>() / s as f64)
        .collect();
    Tensor::new(&[n, c], pooled)
}

/// Backward of [`pool_spatial`]: spreads each pooled gradient evenly over
/// its spatial window and adds it into `dx`.
pub fn pool_spatial_backward_into(dpooled: &Tensor, dx: &mut Tensor) -> Result<()> {
    let (n, c, h, w) = dx.dims4()?;
    if dpooled.shape() != [n, c] {
        return Err(Error::mismatch(&[n, c], dpooled.shape()));
    }
    let s = h * w;
    let inv = 1.0 / s as f64;
    for (window, &d) in dx.data_mut().chunks_mut(s).zip(dpooled.data()) {
        window.iter_mut().for_each(|v| *v += d * inv);
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<GateMatrix> {
    let (_, k) = logits.dims2()?;
    logits.ensure_finite("gating logits")?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    Ok(GateMatrix {
        g: Tensor::new(logits.shape(), out)?,
    })
}

/// Gradient of a loss w.r.t. softmax logits given its gradient w.r.t. the
/// gates: `dz_k = g_k (dg_k - Σ_j g_j dg_j)`.
pub fn softmax_backward(gates: &GateMatrix, dgates: &Tensor) -> Result<Tensor> {
    if dgates.shape() != gates.as_tensor().shape() {
        return Err(Error::mismatch(gates.as_tensor().shape(), dgates.shape()));
    }
    let k = gates.modes();
    let mut out = Vec::with_capacity(dgates.numel());
    for (g, dg) in gates.as_tensor().data().chunks(k).zip(dgates.data().chunks(k)) {
        let dot: f64 = g.iter().zip(dg).map(|(a, b)| a * b).sum();
        out.extend(g.iter().zip(dg).map(|(gi, dgi)| gi * (dgi - dot)));
    }
    Tensor::new(dgates.shape(), out)
}

/// Logits `xp · Wᵀ + b` then softmax, one row per sample.
pub fn gate_samples(xp: &Tensor, params: &SampleGatingParams) -> Result<GateMatrix> {
    let (n, c) = xp.dims2()?;
    let k = params.modes();
    if params.weight.shape() != [k, c] {
        return Err(Error::mismatch(&[k, c], params.weight.shape()));
    }
    let mut logits = xp.matmul(&params.weight.transpose()?)?;
    for row in logits.data_mut().chunks_mut(k) {
        for (z, b) in row.iter_mut().zip(params.bias.data()) {
            *z += b;
        }
    }
    debug_assert_eq!(logits.shape(), [n, k]);
    softmax_rows(&logits)
}

/// Per-scalar logits `weight_k · x_r + bias_k` then softmax, one row per
/// entry of `xp` (any shape; rows follow flat order).
pub fn gate_channels(xp: &Tensor, params: &ChannelGatingParams) -> Result<GateMatrix> {
    let k = params.modes();
    let mut logits = Vec::with_capacity(xp.numel() * k);
    for &v in xp.data() {
        logits.extend(
            params
                .weight
                .data()
                .iter()
                .zip(params.bias.data())
                .map(|(w, b)| w * v + b),
        );
    }
    softmax_rows(&Tensor::new(&[xp.numel(), k], logits)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGateGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGateGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Reverse pass of [`gate_samples`] given `dL/dG`.
pub fn gate_samples_backward(
    dgates: &Tensor,
    xp: &Tensor,
    gates: &GateMatrix,
    params: &SampleGatingParams,
) -> Result<SampleGateGrads> {
    let dlogits = softmax_backward(gates, dgates)?;
    let input = dlogits.matmul(&params.weight)?;
    let weight = dlogits.transpose()?.matmul(xp)?;
    let bias = dlogits.reduce(&[0], crate::tensor::Reduction::Sum)?;
    Ok(SampleGateGrads {
        input,
        weight,
        bias,
    })
}

/// Reverse pass of [`gate_channels`] given `dL/dG`.
pub fn gate_channels_backward(
    dgates: &Tensor,
    xp: &Tensor,
    gates: &GateMatrix,
    params: &ChannelGatingParams,
) -> Result<ChannelGateGrads> {
    let k = params.modes();
    let dlogits = softmax_backward(gates, dgates)?;
    let mut dinput = Vec::with_capacity(xp.numel());
    let mut dweight = vec![0.0; k];
    let mut dbias = vec![0.0; k];
    for (&v, dz) in xp.data().iter().zip(dlogits.data().chunks(k)) {
        let mut acc = 0.0;
        for j in 0..k {
            acc += dz[j] * params.weight.data()[j];
            dweight[j] += dz[j] * v;
            dbias[j] += dz[j];
        }
        dinput.push(acc);
    }
    Ok(ChannelGateGrads {
        input: Tensor::new(xp.shape(), dinput)?,
        weight: Tensor::new(&[k], dweight)?,
        bias: Tensor::new(&[k], dbias)?,
    })
}
