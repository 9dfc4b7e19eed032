//! Normalization over a fixed partition of the input into statistic buckets.
//!
//! Batch, instance, layer and group norm differ only in which `(n, c)`
//! spatial windows share a mean and variance:
//!
//! | kind  | bucket of `(n, c)`      |
//! |-------|-------------------------|
//! | batch | `c`                     |
//! | inst. | `(n, c)`                |
//! | layer | `n`                     |
//! | group | `(n, c / (C / groups))` |

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Contiguous channel groups of equal size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpec {
    channels: usize,
    groups: usize,
}

impl GroupSpec {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "groups ({groups}) must divide channels ({channels})"
            )));
        }
        Ok(Self { channels, groups })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group_size(&self) -> usize {
        self.channels / self.groups
    }

    pub fn group_of(&self, channel: usize) -> usize {
        channel / self.group_size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pooling {
    PerChannel,
    PerSampleChannel,
    PerSample,
    PerSampleGroup(GroupSpec),
}

impl Pooling {
    fn buckets(self, n: usize, c: usize) -> usize {
        match self {
            Pooling::PerChannel => c,
            Pooling::PerSampleChannel => n * c,
            Pooling::PerSample => n,
            Pooling::PerSampleGroup(spec) => n * spec.groups(),
        }
    }

    fn bucket(self, n_idx: usize, c_idx: usize, c: usize) -> usize {
        match self {
            Pooling::PerChannel => c_idx,
            Pooling::PerSampleChannel => n_idx * c + c_idx,
            Pooling::PerSample => n_idx,
            Pooling::PerSampleGroup(spec) => n_idx * spec.groups() + spec.group_of(c_idx),
        }
    }
}

/// Batch-derived statistics and the normalized tensor, kept for backward.
#[derive(Debug, Clone)]
pub(crate) struct PartitionCache {
    pub xhat: Tensor,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub count: Vec<f64>,
    pooling: Pooling,
}

/// Two-pass mean and biased variance per bucket, then `(x - μ)/√(σ² + ε)`.
pub(crate) fn forward(x: &Tensor, pooling: Pooling, eps: f64) -> Result<PartitionCache> {
    let (n, c, h, w) = x.dims4()?;
    let s = h * w;
    let nb = pooling.buckets(n, c);
    let mut sum = vec![0.0; nb];
    let mut count = vec![0.0; nb];
    for (i, window) in x.data().chunks(s).enumerate() {
        let b = pooling.bucket(i / c, i % c, c);
        sum[b] += window.iter().sum::<f64>();
        count[b] += s as f64;
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, n)| s / n).collect();
    let mut sq = vec![0.0; nb];
    for (i, window) in x.data().chunks(s).enumerate() {
        let b = pooling.bucket(i / c, i % c, c);
        sq[b] += window.iter().map(|v| (v - mean[b]).powi(2)).sum::<f64>();
    }
    let var: Vec<f64> = sq.iter().zip(&count).map(|(q, n)| q / n).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let xhat = normalize_with(x, pooling, &mean, &inv_std)?;
    Ok(PartitionCache {
        xhat,
        mean,
        var,
        inv_std,
        count,
        pooling,
    })
}

/// `(x - mean[b]) * inv_std[b]` with externally supplied statistics.
pub(crate) fn normalize_with(
    x: &Tensor,
    pooling: Pooling,
    mean: &[f64],
    inv_std: &[f64],
) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let s = h * w;
    let mut xhat = x.clone();
    for (i, window) in xhat.data_mut().chunks_mut(s).enumerate() {
        let b = pooling.bucket(i / c, i % c, c);
        window.iter_mut().for_each(|v| *v = (*v - mean[b]) * inv_std[b]);
    }
    Ok(xhat)
}

/// `dx = inv_std / m · (m·dx̂ − Σ dx̂ − x̂ · Σ dx̂·x̂)` per bucket.
pub(crate) fn backward(dxhat: &Tensor, cache: &PartitionCache) -> Result<Tensor> {
    let (_, c, h, w) = dxhat.dims4()?;
    if dxhat.shape() != cache.xhat.shape() {
        return Err(Error::mismatch(cache.xhat.shape(), dxhat.shape()));
    }
    let s = h * w;
    let nb = cache.mean.len();
    let mut sum_d = vec![0.0; nb];
    let mut sum_dx = vec![0.0; nb];
    for (i, (dwin, xwin)) in dxhat.data().chunks(s).zip(cache.xhat.data().chunks(s)).enumerate() {
        let b = cache.pooling.bucket(i / c, i % c, c);
        for (d, xh) in dwin.iter().zip(xwin) {
            sum_d[b] += d;
            sum_dx[b] += d * xh;
        }
    }
    let mut dx = dxhat.clone();
    for (i, (dwin, xwin)) in dx.data_mut().chunks_mut(s).zip(cache.xhat.data().chunks(s)).enumerate() {
        let b = cache.pooling.bucket(i / c, i % c, c);
        let m = cache.count[b];
        let k = cache.inv_std[b] / m;
        for (d, xh) in dwin.iter_mut().zip(xwin) {
            *d = k * (m * *d - sum_d[b] - xh * sum_dx[b]);
        }
    }
    Ok(dx)
}
