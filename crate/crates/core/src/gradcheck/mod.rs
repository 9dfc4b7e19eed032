//! Central finite-difference oracle for certifying backward passes.

mod suite;

pub use suite::{run_instance, run_suite, Corruption, InstanceResult, SuiteOptions, Target};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradTolerance {
    /// Finite-difference step.
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self {
            h: 1e-6,
            rtol: 1e-5,
            atol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat indices where `|a - n| > atol + rtol * max(|a|, |n|)`.
    pub failing: Vec<usize>,
    pub passed: bool,
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn numeric_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad)
}

/// Compare an analytic gradient against a numeric estimate.
pub fn check(analytic: &Tensor, numeric: &Tensor, rtol: f64, atol: f64) -> Result<GradReport> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::mismatch(analytic.shape(), numeric.shape()));
    }
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        failing: Vec::new(),
        passed: true,
    };
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        report.max_abs_err = report.max_abs_err.max(diff);
        report.max_rel_err = report.max_rel_err.max(rel);
        // NaN never satisfies the bound, so it lands in `failing`.
        if !(diff <= atol + rtol * scale) {
            report.failing.push(i);
        }
    }
    report.passed = report.failing.is_empty();
    Ok(report)
}

/// Reports for several named tensors of one instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<(String, GradReport)>,
}

impl SuiteReport {
    pub fn push(&mut self, name: impl Into<String>, report: GradReport) {
        self.entries.push((name.into(), report));
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|(_, r)| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: SuiteReport) {
        self.entries.extend(other.entries);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn quadratic_and_constant() {
        let x = Tensor::from_slice(&[1.0, 2.0]).unwrap();
        let g = numeric_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-6).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);

        let g = numeric_grad(|_| Ok(3.5), &x, 1e-6).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_step_and_non_finite_objective() {
        let x = Tensor::from_slice(&[1.0]).unwrap();
        assert!(numeric_grad(|_| Ok(0.0), &x, 0.0).is_err());
        assert!(matches!(numeric_grad(|_| Ok(f64::NAN), &x, 1e-6), Err(Error::NonFinite(_))));
    }

    #[test]
    fn check_reports_failures() {
        let a = Tensor::from_slice(&[1.0, -2.0, 3.0]).unwrap();
        let r = check(&a, &a, 1e-5, 1e-8).unwrap();
        assert!(r.passed);
        assert_eq!((r.max_abs_err, r.max_rel_err), (0.0, 0.0));

        let mut broken = a.clone();
        broken.data_mut()[1] += 1.0;
        let r = check(&broken, &a, 1e-5, 1e-8).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failing, vec![1]);
        assert!(check(&a, &Tensor::zeros(&[2]).unwrap(), 1e-5, 1e-8).is_err());
    }

    proptest! {
        #[test]
        fn exact_on_quadratics(seed in 0u64..200) {
            // f(x) = ½ xᵀA x + bᵀx + c; gradient = ½(A + Aᵀ)x + b.
            let mut rng = Rng::new(seed);
            let n = 4;
            let a = Tensor::randn(&[n, n], &mut rng).unwrap();
            let b = Tensor::randn(&[n], &mut rng).unwrap();
            let x = Tensor::randn(&[n], &mut rng).unwrap();
            let f = |t: &Tensor| -> Result<f64> {
                let mut acc = 0.7;
                for i in 0..n {
                    acc += b.data()[i] * t.data()[i];
                    for j in 0..n {
                        acc += 0.5 * t.data()[i] * a.data()[i * n + j] * t.data()[j];
                    }
                }
                Ok(acc)
            };
            let g = numeric_grad(f, &x, 1e-5).unwrap();
            for i in 0..n {
                let mut exact = b.data()[i];
                for j in 0..n {
                    exact += 0.5 * (a.data()[i * n + j] + a.data()[j * n + i]) * x.data()[j];
                }
                prop_assert!((g.data()[i] - exact).abs() <= 1e-9);
            }
        }

        #[test]
        fn check_is_symmetric(seed in 0u64..500, noise in 0.0f64..1e-4) {
            let mut rng = Rng::new(seed);
            let a = Tensor::randn(&[6], &mut rng).unwrap();
            let n = a.add(&Tensor::randn(&[6], &mut rng).unwrap().scale(noise)).unwrap();
            let ab = check(&a, &n, 1e-5, 1e-8).unwrap();
            let ba = check(&n, &a, 1e-5, 1e-8).unwrap();
            prop_assert_eq!(ab.passed, ba.passed);
            prop_assert_eq!(ab.failing, ba.failing);
        }
    }
}
