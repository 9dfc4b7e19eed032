//! Dense row-major `f64` tensors and the seeded generator used to fill them.
//!
//! Only what the normalization layers and the small training stack need:
//! construction, elementwise arithmetic on equal shapes, 2-D matmul and
//! sum/mean reductions over arbitrary axis sets.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic random source. Equal seeds give equal streams.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `(0, 1]`, safe to take the log of.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Standard normal draw via Box–Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape(shape, "rank must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(Error::shape(shape, "dimensions must be positive"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel = check_shape(shape)?;
        if data.len() != numel {
            return Err(Error::shape(
                shape,
                format!("data length {} does not match element count {numel}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let numel = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    /// Zeros with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(&[values.len()], values.to_vec())
    }

    pub fn randn(shape: &[usize], rng: &mut Rng) -> Result<Self> {
        let numel = check_shape(shape)?;
        let data = (0..numel).map(|_| rng.normal()).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform samples in `[low, high)`.
    pub fn rand_uniform(shape: &[usize], low: f64, high: f64, rng: &mut Rng) -> Result<Self> {
        let numel = check_shape(shape)?;
        let data = (0..numel)
            .map(|_| low + (high - low) * rng.uniform())
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != self.data.len() {
            return Err(Error::mismatch(shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Shape as `(N, C, H, W)`; errors unless rank is 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(&self.shape, "expected a 4-D N×C×H×W tensor")),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(&self.shape, "expected a 2-D tensor")),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(&self.shape, &other.shape));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Elementwise quotient. Any exact zero in the divisor is an error.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other)?;
        if let Some(index) = other.data.iter().position(|&v| v == 0.0) {
            return Err(Error::DivisionByZero { index });
        }
        self.zip_with(other, |a, b| a / b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Textbook `M×P · P×Q` product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, p) = self.dims2()?;
        let (p2, q) = other.dims2()?;
        if p != p2 {
            return Err(Error::mismatch(&[p, q], &other.shape));
        }
        let mut out = vec![0.0; m * q];
        for i in 0..m {
            let row = &mut out[i * q..(i + 1) * q];
            for k in 0..p {
                let a = self.data[i * p + k];
                let b_row = &other.data[k * q..(k + 1) * q];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(&[m, q], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(&[c, r], out)
    }

    /// Reduce over `axes`; reduced axes are dropped from the result. Reducing
    /// every axis yields a one-element tensor of shape `[1]`.
    pub fn reduce(&self, axes: &[usize], kind: Reduction) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &axis in axes {
            if axis >= rank {
                return Err(Error::AxisOutOfRange { axis, rank });
            }
            reduced[axis] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let out_len: usize = out_shape.iter().product();
        let count = self.data.len() / out_len;

        let mut out = vec![0.0; out_len];
        let mut index = vec![0usize; rank];
        for &v in &self.data {
            let mut flat = 0;
            for axis in 0..rank {
                if !reduced[axis] {
                    flat = flat * self.shape[axis] + index[axis];
                }
            }
            out[flat] += v;
            for axis in (0..rank).rev() {
                index[axis] += 1;
                if index[axis] < self.shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        if kind == Reduction::Mean {
            let inv = count as f64;
            out.iter_mut().for_each(|v| *v /= inv);
        }
        Tensor::new(&out_shape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::tensor::Rng;

    #[test]
    fn constructors() {
        let z = Tensor::zeros(&[2, 3]).unwrap();
        assert_eq!(z.numel(), 6);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(Tensor::full(&[1], 7.5).unwrap().data(), &[7.5]);
        assert_eq!(Tensor::ones(&[2, 2]).unwrap().sum(), 4.0);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(matches!(Tensor::zeros(&[2, 0]), Err(Error::InvalidShape { .. })));
        assert!(matches!(Tensor::zeros(&[]), Err(Error::InvalidShape { .. })));
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn randn_is_seed_deterministic() {
        let a = Tensor::randn(&[4, 5], &mut Rng::new(11)).unwrap();
        let b = Tensor::randn(&[4, 5], &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        let c = Tensor::randn(&[4, 5], &mut Rng::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn randn_moments() {
        let t = Tensor::randn(&[100_000], &mut Rng::new(3)).unwrap();
        let mean = t.mean();
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.numel() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn randn_stream_is_byte_identical() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..10_000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn matmul_examples() {
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);

        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::ones(&[2, 1]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);

        assert!(matches!(a.matmul(&b.transpose().unwrap()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(5);
        let a = Tensor::randn(&[5, 4], &mut rng).unwrap();
        let b = Tensor::randn(&[4, 3], &mut rng).unwrap();
        let got = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.data()[i * 4 + k] * b.data()[k * 3 + j];
                }
                assert_eq!(got.data()[i * 3 + j], acc);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let ones = Tensor::ones(&[4, 4]).unwrap();
        let m = ones.reduce(&[0, 1], Reduction::Mean).unwrap();
        assert_eq!(m.data(), &[1.0]);

        let t = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.reduce(&[0], Reduction::Sum).unwrap().data(), &[4.0, 6.0]);
        assert!(matches!(
            t.reduce(&[2], Reduction::Sum),
            Err(Error::AxisOutOfRange { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn reduce_nchw_matches_flat_loop() {
        let (n, c, h, w) = (3, 4, 2, 5);
        let x = Tensor::randn(&[n, c, h, w], &mut Rng::new(8)).unwrap();
        let got = x.reduce(&[0, 2, 3], Reduction::Mean).unwrap();
        assert_eq!(got.shape(), &[c]);
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..n {
                for s in 0..h * w {
                    acc += x.data()[(i * c + ch) * h * w + s];
                }
            }
            let expected = acc / (n * h * w) as f64;
            assert!((got.data()[ch] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let a = Tensor::ones(&[3]).unwrap();
        let b = Tensor::from_slice(&[1.0, 0.0, 2.0]).unwrap();
        assert!(matches!(a.div(&b), Err(Error::DivisionByZero { index: 1 })));
        assert_eq!(a.div(&Tensor::full(&[3], 2.0).unwrap()).unwrap().data(), &[0.5; 3]);
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..5)
    }

    proptest! {
        #[test]
        fn reduce_shape_and_mean_sum_relation(shape in shape_strategy(), seed in 0u64..1000, mask in 0u8..16) {
            let x = Tensor::randn(&shape, &mut Rng::new(seed)).unwrap();
            let axes: Vec<usize> = (0..shape.len()).filter(|a| mask & (1 << a) != 0).collect();
            let sum = x.reduce(&axes, Reduction::Sum).unwrap();
            let mean = x.reduce(&axes, Reduction::Mean).unwrap();
            let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).map(|a| shape[a]).collect();
            let expected_shape = if kept.is_empty() { vec![1] } else { kept };
            prop_assert_eq!(sum.shape(), expected_shape.as_slice());
            let count: usize = axes.iter().map(|&a| shape[a]).product();
            for (s, m) in sum.data().iter().zip(mean.data()) {
                let r = s / count as f64;
                prop_assert!((m - r).abs() <= 1e-12 * r.abs().max(1.0));
            }
        }

        #[test]
        fn elementwise_and_matmul_shapes(m in 1usize..5, p in 1usize..5, q in 1usize..5, seed in 0u64..100) {
            let mut rng = Rng::new(seed);
            let a = Tensor::randn(&[m, p], &mut rng).unwrap();
            let b = Tensor::randn(&[p, q], &mut rng).unwrap();
            let prod = a.matmul(&b).unwrap();
            let sum = a.add(&a).unwrap();
            let had = a.mul(&a).unwrap();
            prop_assert_eq!(prod.shape(), &[m, q]);
            prop_assert_eq!(sum.shape(), &[m, p]);
            prop_assert_eq!(had.shape(), &[m, p]);
            let mut eye = vec![0.0; p * p];
            for i in 0..p { eye[i * p + i] = 1.0; }
            let eye = Tensor::new(&[p, p], eye).unwrap();
            prop_assert_eq!(a.matmul(&eye).unwrap(), a);
        }
    }
}
