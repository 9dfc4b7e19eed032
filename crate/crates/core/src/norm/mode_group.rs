//! Mode group normalization. Per sample, spatially pooled channel values are
//! gated into `K` modes, each mode gets scalar moments from its gated
//! channels, and the full tensor is normalized with the mode average
//!
//! `x̂ = (1/K) Σ_k (x − μ_k) / √(σ_k² + ε)`.
//!
//! No batch coupling and no running state: training and inference run the
//! same computation.

use super::{inv_std, COUNT_FLOOR};
use crate::error::{Error, Result};
use crate::gating::{
    gate_channels, gate_channels_backward, pool_spatial, pool_spatial_backward_into,
    ChannelGateGrads, ChannelGatingParams, GateMatrix,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) struct ModeGroupCache {
    pub x: Tensor,
    pub pooled: Tensor,
    /// `(N·C)×K`, rows in sample-major order.
    pub gates: GateMatrix,
    /// `N×K` scalar moments and effective channel counts `C_k`.
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub counts: Vec<f64>,
    pub floored: Vec<bool>,
    pub inv: Vec<f64>,
    pub clamped: Vec<bool>,
    pub xhat: Tensor,
}

pub(crate) fn forward(x: &Tensor, params: &ChannelGatingParams, eps: f64) -> Result<ModeGroupCache> {
    let (n, c, h, w) = x.dims4()?;
    x.ensure_finite("mode group norm input")?;
    let s = h * w;
    let k = params.modes();
    let pooled = pool_spatial(x)?;
    let gates = gate_channels(&pooled, params)?;
    let p = pooled.data();

    let mut m1 = vec![0.0; n * k];
    let mut m2 = vec![0.0; n * k];
    let mut counts = vec![0.0; n * k];
    let mut floored = vec![false; n * k];
    for i in 0..n {
        let row = &p[i * c..(i + 1) * c];
        for j in 0..k {
            let nk = i * k + j;
            for (ch, &v) in row.iter().enumerate() {
                let g = gates.get(i * c + ch, j);
                counts[nk] += g;
                m1[nk] += g * v;
                m2[nk] += g * v * v;
            }
            if counts[nk] < COUNT_FLOOR {
                floored[nk] = true;
                m1[nk] = row.iter().sum::<f64>() / c as f64;
                m2[nk] = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
            } else {
                m1[nk] /= counts[nk];
                m2[nk] /= counts[nk];
            }
        }
    }
    let (inv, clamped): (Vec<f64>, Vec<bool>) = m1
        .iter()
        .zip(&m2)
        .map(|(a, b)| inv_std(b - a * a, eps))
        .unzip();

    let inv_k = 1.0 / k as f64;
    let mut xhat = vec![0.0; x.numel()];
    for (idx, (out, xin)) in xhat.chunks_mut(s).zip(x.data().chunks(s)).enumerate() {
        let i = idx / c;
        for (o, &v) in out.iter_mut().zip(xin) {
            let mut acc = 0.0;
            for j in 0..k {
                acc += (v - m1[i * k + j]) * inv[i * k + j];
            }
            *o = acc * inv_k;
        }
    }

    Ok(ModeGroupCache {
        x: x.clone(),
        pooled,
        gates,
        m1,
        m2,
        counts,
        floored,
        inv,
        clamped,
        xhat: Tensor::new(x.shape(), xhat)?,
    })
}

pub(crate) fn backward(
    dxhat: &Tensor,
    cache: &ModeGroupCache,
    params: &ChannelGatingParams,
) -> Result<(Tensor, ChannelGateGrads)> {
    let (n, c, h, w) = dxhat.dims4()?;
    if dxhat.shape() != cache.x.shape() {
        return Err(Error::mismatch(cache.x.shape(), dxhat.shape()));
    }
    let s = h * w;
    let k = params.modes();
    let inv_k = 1.0 / k as f64;
    let x = cache.x.data();
    let d = dxhat.data();
    let p = cache.pooled.data();

    let mut dx = vec![0.0; x.len()];
    let mut dpooled = vec![0.0; n * c];
    let mut dg = vec![0.0; n * c * k];

    for i in 0..n {
        let block = i * c * s..(i + 1) * c * s;
        let (dw, xw) = (&d[block.clone()], &x[block.clone()]);
        let sum_d: f64 = dw.iter().sum();
        let sum_dx: f64 = dw.iter().zip(xw).map(|(a, b)| a * b).sum();

        let coef: f64 = (0..k).map(|j| cache.inv[i * k + j]).sum::<f64>() * inv_k;
        for (o, &dd) in dx[block].iter_mut().zip(dw) {
            *o += dd * coef;
        }

        for j in 0..k {
            let nk = i * k + j;
            let (mu, inv) = (cache.m1[nk], cache.inv[nk]);
            let dmu = -inv_k * inv * sum_d;
            let dinv = inv_k * (sum_dx - mu * sum_d);
            let dv = if cache.clamped[nk] {
                0.0
            } else {
                -0.5 * dinv * inv.powi(3)
            };
            let dm1 = dmu - 2.0 * mu * dv;
            let dm2 = dv;
            for ch in 0..c {
                let v = p[i * c + ch];
                if cache.floored[nk] {
                    dpooled[i * c + ch] += (dm1 + 2.0 * dm2 * v) / c as f64;
                } else {
                    let g = cache.gates.get(i * c + ch, j);
                    let ck = cache.counts[nk];
                    dpooled[i * c + ch] += g * (dm1 + 2.0 * dm2 * v) / ck;
                    dg[(i * c + ch) * k + j] +=
                        (dm1 * (v - mu) + dm2 * (v * v - cache.m2[nk])) / ck;
                }
            }
        }
    }

    let dgates = Tensor::new(&[n * c, k], dg)?;
    let flat_pooled = cache.pooled.clone().reshape(&[n * c])?;
    let mut gate_grads = gate_channels_backward(&dgates, &flat_pooled, &cache.gates, params)?;
    for (dp, gi) in dpooled.iter_mut().zip(gate_grads.input.data()) {
        *dp += gi;
    }
    let dpooled = Tensor::new(&[n, c], dpooled)?;
    let mut dx = Tensor::new(dxhat.shape(), dx)?;
    pool_spatial_backward_into(&dpooled, &mut dx)?;
    gate_grads.input = dpooled;
    Ok((dx, gate_grads))
}
