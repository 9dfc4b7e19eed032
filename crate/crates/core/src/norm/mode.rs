//! Mode normalization: each sample is normalized by a gate-weighted vote
//! over `K` per-mode estimators,
//!
//! `x̂_n = Σ_k g_nk (x_n − μ_k) / √(σ_k² + ε)`,
//!
//! where `μ_k, σ_k²` are per-channel moments weighted by the gates
//! (training) or their running averages (inference).

use super::{inv_std, ModeStats, COUNT_FLOOR};
use crate::error::{Error, Result};
use crate::gating::{
    gate_samples, gate_samples_backward, pool_spatial, pool_spatial_backward_into, GateMatrix,
    SampleGateGrads, SampleGatingParams,
};
use crate::tensor::Tensor;

/// Gate-weighted raw moments of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchModeStats {
    /// `K×C` weighted means.
    pub m1: Tensor,
    /// `K×C` weighted second moments.
    pub m2: Tensor,
    /// `K` effective counts `N_k = Σ_n g_nk`.
    pub counts: Tensor,
    /// Modes whose count fell below [`COUNT_FLOOR`]; their moments were
    /// replaced by the unweighted batch moments.
    pub floored: Vec<bool>,
}

/// Weighted moments of an `N×C×H×W` batch under `N×K` gates.
pub fn mn_stats(x: &Tensor, gates: &GateMatrix) -> Result<BatchModeStats> {
    let pooled = pool_spatial(x)?;
    let sq_pooled = pool_spatial(&x.map(|v| v * v))?;
    weighted_moments(&pooled, &sq_pooled, gates)
}

fn weighted_moments(pooled: &Tensor, sq_pooled: &Tensor, gates: &GateMatrix) -> Result<BatchModeStats> {
    let (n, c) = pooled.dims2()?;
    if gates.rows() != n {
        return Err(Error::mismatch(&[n, gates.modes()], gates.as_tensor().shape()));
    }
    let k = gates.modes();
    let p = pooled.data();
    let q = sq_pooled.data();
    let mut counts = vec![0.0; k];
    let mut m1 = vec![0.0; k * c];
    let mut m2 = vec![0.0; k * c];
    for i in 0..n {
        for j in 0..k {
            let g = gates.get(i, j);
            counts[j] += g;
            for ch in 0..c {
                m1[j * c + ch] += g * p[i * c + ch];
                m2[j * c + ch] += g * q[i * c + ch];
            }
        }
    }
    let mut floored = vec![false; k];
    for j in 0..k {
        if counts[j] < COUNT_FLOOR {
            floored[j] = true;
            for ch in 0..c {
                m1[j * c + ch] = (0..n).map(|i| p[i * c + ch]).sum::<f64>() / n as f64;
                m2[j * c + ch] = (0..n).map(|i| q[i * c + ch]).sum::<f64>() / n as f64;
            }
        } else {
            for ch in 0..c {
                m1[j * c + ch] /= counts[j];
                m2[j * c + ch] /= counts[j];
            }
        }
    }
    Ok(BatchModeStats {
        m1: Tensor::new(&[k, c], m1)?,
        m2: Tensor::new(&[k, c], m2)?,
        counts: Tensor::new(&[k], counts)?,
        floored,
    })
}

/// Normalized tensor plus the per-`(k, c)` inverse std devs used.
fn normalize(
    x: &Tensor,
    gates: &GateMatrix,
    m1: &Tensor,
    m2: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<bool>)> {
    let (_, c, h, w) = x.dims4()?;
    let s = h * w;
    let k = gates.modes();
    let (inv, clamped): (Vec<f64>, Vec<bool>) = m1
        .data()
        .iter()
        .zip(m2.data())
        .map(|(a, b)| inv_std(b - a * a, eps))
        .unzip();
    let mu = m1.data();
    let mut xhat = vec![0.0; x.numel()];
    for (idx, (out, xin)) in xhat.chunks_mut(s).zip(x.data().chunks(s)).enumerate() {
        let (i, ch) = (idx / c, idx % c);
        for (o, &v) in out.iter_mut().zip(xin) {
            let mut acc = 0.0;
            for j in 0..k {
                acc += gates.get(i, j) * (v - mu[j * c + ch]) * inv[j * c + ch];
            }
            *o = acc;
        }
    }
    Ok((Tensor::new(x.shape(), xhat)?, inv, clamped))
}

#[derive(Debug, Clone)]
pub(crate) struct ModeCache {
    pub x: Tensor,
    pub pooled: Tensor,
    pub sq_pooled: Tensor,
    pub gates: GateMatrix,
    pub stats: BatchModeStats,
    pub inv: Vec<f64>,
    pub clamped: Vec<bool>,
    pub xhat: Tensor,
}

/// Training pass: gates and moments both come from the batch.
pub(crate) fn forward_train(x: &Tensor, params: &SampleGatingParams, eps: f64) -> Result<ModeCache> {
    x.dims4()?;
    x.ensure_finite("mode norm input")?;
    let pooled = pool_spatial(x)?;
    let sq_pooled = pool_spatial(&x.map(|v| v * v))?;
    let gates = gate_samples(&pooled, params)?;
    let stats = weighted_moments(&pooled, &sq_pooled, &gates)?;
    let (xhat, inv, clamped) = normalize(x, &gates, &stats.m1, &stats.m2, eps)?;
    Ok(ModeCache {
        x: x.clone(),
        pooled,
        sq_pooled,
        gates,
        stats,
        inv,
        clamped,
        xhat,
    })
}

/// Inference pass: gates from the sample, moments from the running averages.
pub(crate) fn forward_eval(
    x: &Tensor,
    params: &SampleGatingParams,
    stats: &ModeStats,
    eps: f64,
) -> Result<(Tensor, GateMatrix)> {
    if !stats.initialized {
        return Err(Error::UninitializedStats);
    }
    x.ensure_finite("mode norm input")?;
    let gates = gate_samples(&pool_spatial(x)?, params)?;
    let (xhat, _, _) = normalize(x, &gates, &stats.run_m1, &stats.run_m2, eps)?;
    Ok((xhat, gates))
}

/// Gradient w.r.t. the input and gating parameters given `dL/dx̂`, through
/// the direct path, the moments `μ_k(x, g)`, `σ_k(x, g)` and the gates.
pub(crate) fn backward(
    dxhat: &Tensor,
    cache: &ModeCache,
    params: &SampleGatingParams,
) -> Result<(Tensor, SampleGateGrads)> {
    let (n, c, h, w) = dxhat.dims4()?;
    if dxhat.shape() != cache.x.shape() {
        return Err(Error::mismatch(cache.x.shape(), dxhat.shape()));
    }
    let s = h * w;
    let k = cache.gates.modes();
    let x = cache.x.data();
    let d = dxhat.data();
    let mu = cache.stats.m1.data();
    let m2 = cache.stats.m2.data();
    let counts = cache.stats.counts.data();

    let mut dx = vec![0.0; x.len()];
    let mut dmu = vec![0.0; k * c];
    let mut dinv = vec![0.0; k * c];
    let mut dg = vec![0.0; n * k];

    // Direct path and gradients reaching μ_k, 1/σ_k and the gates as voting weights.
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * s;
            let (dw, xw) = (&d[off..off + s], &x[off..off + s]);
            let sum_d: f64 = dw.iter().sum();
            let sum_dx: f64 = dw.iter().zip(xw).map(|(a, b)| a * b).sum();
            let mut coef = 0.0;
            for j in 0..k {
                let kc = j * c + ch;
                let g = cache.gates.get(i, j);
                let inv = cache.inv[kc];
                let centered = sum_dx - mu[kc] * sum_d;
                coef += g * inv;
                dmu[kc] -= g * inv * sum_d;
                dinv[kc] += g * centered;
                dg[i * k + j] += inv * centered;
            }
            for (o, &dd) in dx[off..off + s].iter_mut().zip(dw) {
                *o += dd * coef;
            }
        }
    }

    // σ² = ⟨x²⟩ − ⟨x⟩², inv = (σ² + ε)^(-1/2).
    let mut dm1 = vec![0.0; k * c];
    let mut dm2 = vec![0.0; k * c];
    for kc in 0..k * c {
        let dv = if cache.clamped[kc] {
            0.0
        } else {
            -0.5 * dinv[kc] * cache.inv[kc].powi(3)
        };
        dm1[kc] = dmu[kc] - 2.0 * mu[kc] * dv;
        dm2[kc] = dv;
    }

    // Moments are gate-weighted pooled averages.
    let p = cache.pooled.data();
    let q = cache.sq_pooled.data();
    for i in 0..n {
        for ch in 0..c {
            let (mut lin, mut quad) = (0.0, 0.0);
            for j in 0..k {
                let kc = j * c + ch;
                let weight = if cache.stats.floored[j] {
                    1.0 / n as f64
                } else {
                    let g = cache.gates.get(i, j);
                    dg[i * k + j] += (dm1[kc] * (p[i * c + ch] - mu[kc])
                        + dm2[kc] * (q[i * c + ch] - m2[kc]))
                        / counts[j];
                    g / counts[j]
                };
                lin += weight * dm1[kc];
                quad += weight * 2.0 * dm2[kc];
            }
            let off = (i * c + ch) * s;
            let (lin, quad) = (lin / s as f64, quad / s as f64);
            for (o, &v) in dx[off..off + s].iter_mut().zip(&x[off..off + s]) {
                *o += lin + quad * v;
            }
        }
    }

    let dgates = Tensor::new(&[n, k], dg)?;
    let gate_grads = gate_samples_backward(&dgates, &cache.pooled, &cache.gates, params)?;
    let mut dx = Tensor::new(dxhat.shape(), dx)?;
    pool_spatial_backward_into(&gate_grads.input, &mut dx)?;
    Ok((dx, gate_grads))
}
