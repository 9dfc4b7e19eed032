use super::dense::{DenseLayer, Relu};
use crate::error::{Error, Result};
use crate::gating::GateMatrix;
use crate::norm::{NormConfig, NormKind, NormLayer, Phase};
use crate::tensor::{Rng, Tensor};

/// Architecture of a dense classifier with normalization layers:
/// `[Norm] → flatten → (Dense → Norm → ReLU)* → Dense`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Input `C, H, W`.
    pub input: [usize; 3],
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Kind, modes, groups, λ and ε for every norm layer; channels are
    /// filled in per layer.
    pub norm: NormConfig,
    pub input_norm: bool,
}

impl ModelSpec {
    pub fn new(input: [usize; 3], hidden: Vec<usize>, classes: usize, norm: NormConfig) -> Self {
        Self {
            input,
            hidden,
            classes,
            norm,
            input_norm: true,
        }
    }

    fn norm_config(&self, channels: usize) -> NormConfig {
        NormConfig {
            channels,
            ..self.norm
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Relu(Relu),
    Norm(NormLayer),
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    pub layers: Vec<Layer>,
    input_shapes: Vec<Vec<usize>>,
}

/// Reshape to `N×F` (dense) or `N×C×1×1` (norm) without copying.
fn as_2d(x: Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let f = x.numel() / n;
    x.reshape(&[n, f])
}

fn as_4d(x: Tensor) -> Result<Tensor> {
    if x.rank() == 4 {
        return Ok(x);
    }
    let (n, c) = x.dims2()?;
    x.reshape(&[n, c, 1, 1])
}

impl Model {
    /// Dense weights are drawn from `rng`; norm layers start with identity
    /// affine maps and uniform gates.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        let [c, h, w] = spec.input;
        if c == 0 || h == 0 || w == 0 || spec.classes == 0 || spec.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "model dimensions must be positive: input {:?}, hidden {:?}, classes {}",
                spec.input, spec.hidden, spec.classes
            )));
        }
        let mut layers = Vec::new();
        if spec.input_norm {
            layers.push(Layer::Norm(NormLayer::new(spec.norm_config(c))?));
        }
        let mut width = c * h * w;
        for &units in &spec.hidden {
            layers.push(Layer::Dense(DenseLayer::new(width, units, rng)?));
            layers.push(Layer::Norm(NormLayer::new(spec.norm_config(units))?));
            layers.push(Layer::Relu(Relu::default()));
            width = units;
        }
        layers.push(Layer::Dense(DenseLayer::new(width, spec.classes, rng)?));
        Ok(Self {
            input_shapes: vec![Vec::new(); layers.len()],
            spec,
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> NormKind {
        self.spec.norm.kind
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = &NormLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    pub fn norm_layers_mut(&mut self) -> impl Iterator<Item = &mut NormLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    pub fn set_phase(&mut self, phase: Phase) {
        for layer in self.norm_layers_mut() {
            layer.set_phase(phase);
        }
    }

    /// Add `N(0, scale²)` noise to every gating weight.
    pub fn perturb_gating(&mut self, scale: f64, rng: &mut Rng) -> Result<()> {
        for layer in self.norm_layers_mut() {
            layer.perturb_gating(scale, rng)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [c, h, w] = self.spec.input;
        let (n, ..) = x.dims4()?;
        if x.shape()[1..] != [c, h, w] {
            return Err(Error::mismatch(&[n, c, h, w], x.shape()));
        }
        Ok(())
    }

    /// Training forward: caches activations and updates running statistics.
    /// Norm layers follow their own phase flag.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (layer, shape) in self.layers.iter_mut().zip(&mut self.input_shapes) {
            *shape = h.shape().to_vec();
            h = match layer {
                Layer::Dense(d) => d.forward(&as_2d(h)?)?,
                Layer::Relu(r) => r.forward(&h),
                Layer::Norm(n) => n.forward(&as_4d(h)?)?,
            };
        }
        Ok(h)
    }

    /// Backpropagate `dL/dlogits` through the last forward; returns `dL/dx`.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let mut d = dlogits.clone();
        for (layer, shape) in self.layers.iter_mut().zip(&self.input_shapes).rev() {
            if shape.is_empty() {
                return Err(Error::MissingCache);
            }
            d = match layer {
                Layer::Dense(l) => l.backward(&as_2d(d)?)?,
                Layer::Relu(r) => r.backward(&d.reshape(shape)?)?,
                Layer::Norm(n) => n.backward(&as_4d(d)?)?,
            };
            d = d.reshape(shape)?;
        }
        Ok(d)
    }

    /// Pure inference with every norm layer in evaluation mode, regardless of
    /// phase flags. Returns logits and the gates of each norm layer (`None`
    /// for ungated kinds).
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Vec<Option<GateMatrix>>)> {
        self.check_input(x)?;
        let mut gates = Vec::new();
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.infer(&as_2d(h)?)?,
                Layer::Relu(_) => Relu::infer(&h),
                Layer::Norm(n) => {
                    let (y, g) = n.infer(&as_4d(h)?)?;
                    gates.push(g);
                    y
                }
            };
        }
        Ok((h, gates))
    }

    /// Learnable tensors with their latest gradients, in a fixed order.
    pub fn params_and_grads(&mut self) -> Vec<(String, &mut Tensor, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push((format!("layers.{i}.weight"), &mut d.weight, &d.grad_weight));
                    out.push((format!("layers.{i}.bias"), &mut d.bias, &d.grad_bias));
                }
                Layer::Norm(n) => {
                    for (name, p, g) in n.params_and_grads() {
                        out.push((format!("layers.{i}.{name}"), p, g));
                    }
                }
                Layer::Relu(_) => {}
            }
        }
        out
    }

    /// Every persistent tensor keyed `layers.{index}.{name}`.
    pub fn named_state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push((format!("layers.{i}.weight"), d.weight.clone()));
                    out.push((format!("layers.{i}.bias"), d.bias.clone()));
                }
                Layer::Norm(n) => {
                    for (name, t) in n.named_state() {
                        out.push((format!("layers.{i}.{name}"), t));
                    }
                }
                Layer::Relu(_) => {}
            }
        }
        out
    }

    pub fn load_state(&mut self, name: &str, value: Tensor) -> Result<()> {
        let unknown = || Error::InvalidConfig(format!("model has no tensor named {name:?}"));
        let rest = name.strip_prefix("layers.").ok_or_else(unknown)?;
        let (index, field) = rest.split_once('.').ok_or_else(unknown)?;
        let index: usize = index.parse().map_err(|_| unknown())?;
        match self.layers.get_mut(index).ok_or_else(unknown)? {
            Layer::Dense(d) => {
                let target = match field {
                    "weight" => &mut d.weight,
                    "bias" => &mut d.bias,
                    _ => return Err(unknown()),
                };
                if target.shape() != value.shape() {
                    return Err(Error::mismatch(target.shape(), value.shape()));
                }
                *target = value;
                Ok(())
            }
            Layer::Norm(n) => n.load_state(field, value),
            Layer::Relu(_) => Err(unknown()),
        }
    }
}
