#![allow(dead_code)]

use modenorm::gating::SampleGatingParams;
use modenorm::norm::{Gating, NormConfig, NormKind, NormLayer};
use modenorm::{Rng, Tensor};

pub fn layer(kind: NormKind, c: usize, modes: usize, groups: usize) -> NormLayer {
    NormLayer::new(NormConfig::new(kind, c).with_modes(modes).with_groups(groups)).unwrap()
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut Rng::new(seed)).unwrap()
}

pub fn idx4(shape: &[usize], n: usize, c: usize, h: usize, w: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + h) * shape[3] + w
}

/// Mode norm with two modes whose gates are exactly one-hot on the sign of
/// the pooled first channel.
pub fn hard_two_mode(c: usize) -> NormLayer {
    let mut l = layer(NormKind::Mode, c, 2, 1);
    let mut w = vec![0.0; 2 * c];
    w[0] = 1e4;
    w[c] = -1e4;
    l.gating = Gating::Sample(SampleGatingParams {
        weight: Tensor::new(&[2, c], w).unwrap(),
        bias: Tensor::zeros(&[2]).unwrap(),
    });
    l
}

/// `n` samples; the first half has its first channel shifted up by `shift`,
/// the second half down by `shift`.
pub fn two_cluster_batch(n: usize, c: usize, hw: usize, shift: f64, seed: u64) -> Tensor {
    let mut x = randn(&[n, c, hw, hw], seed);
    let s = hw * hw;
    for i in 0..n {
        let sign = if i < n / 2 { 1.0 } else { -1.0 };
        for v in &mut x.data_mut()[i * c * s..i * c * s + s] {
            *v = (*v * 0.3) + sign * shift;
        }
    }
    x
}

pub fn slice_samples(x: &Tensor, range: std::ops::Range<usize>) -> Tensor {
    let (_, c, h, w) = x.dims4().unwrap();
    let per = c * h * w;
    let data = x.data()[range.start * per..range.end * per].to_vec();
    Tensor::new(&[range.len(), c, h, w], data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
