use crate::error::{Error, Result};
use crate::tensor::{Reduction, Rng, Tensor};

/// Fully connected layer `y = x Wᵀ + b` on `N×in` batches.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `out×in`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    input: Option<Tensor>,
}

impl DenseLayer {
    /// Weights uniform in `±√(6/(in+out))`, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Tensor::rand_uniform(&[outputs, inputs], -limit, limit, rng)?;
        Self::from_params(weight, Tensor::zeros(&[outputs])?)
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (outputs, _) = weight.dims2()?;
        if bias.shape() != [outputs] {
            return Err(Error::mismatch(&[outputs], bias.shape()));
        }
        Ok(Self {
            grad_weight: weight.zeros_like(),
            grad_bias: bias.zeros_like(),
            weight,
            bias,
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (_, inputs) = x.dims2()?;
        if inputs != self.inputs() {
            return Err(Error::mismatch(&[x.shape()[0], self.inputs()], x.shape()));
        }
        let mut y = x.matmul(&self.weight.transpose()?)?;
        let out = self.outputs();
        for row in y.data_mut().chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Stores `dW = dyᵀ x`, `db = Σ_n dy` and returns `dx = dy W`.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(Error::MissingCache)?;
        self.grad_weight = dy.transpose()?.matmul(x)?;
        self.grad_bias = dy.reduce(&[0], Reduction::Sum)?;
        dy.matmul(&self.weight)
    }
}

/// `max(0, x)` with subgradient 0 at exactly 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn infer(x: &Tensor) -> Tensor {
        x.map(|v| v.max(0.0))
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        Self::infer(x)
    }

    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(Error::MissingCache)?;
        relu_backward(dy, x)
    }
}

pub fn relu_backward(dy: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mask = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    dy.mul(&mask)
}
