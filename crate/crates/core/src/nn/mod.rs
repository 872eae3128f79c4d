//! Dense network used as the denoising policy.
//!
//! All parameters live in one flat `Vec<f64>`; gradients and optimizer
//! moments use the same layout, so the optimizer and the checkpoint code
//! never need to know about layers. Layer `l` stores its weight matrix
//! (`out x in`, row-major) followed by its bias.

mod adam;
mod checkpoint;
mod gradcheck;

pub use adam::AdamState;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, DenoiserCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_against, FD_EPSILON};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    /// `input -> 128 -> 128 -> output` with SiLU.
    pub fn reference(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![128, 128],
            output_dim,
            activation: Activation::Silu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::domain(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn num_params(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

fn layouts(arch: &Architecture) -> Vec<LayerLayout> {
    let mut offset = 0;
    arch.dims()
        .windows(2)
        .map(|w| {
            let l = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                weight: offset,
                bias: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            l
        })
        .collect()
}

/// A named view into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Multilayer perceptron: activation after every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    layers: Vec<LayerLayout>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre_activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = vec![0.0; arch.num_params()];
        Ok(Self {
            layers: layouts(&arch),
            arch,
            params,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for l in net.layers.clone() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut net.params[l.weight..l.bias] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Multiplies the first-layer weights reading the given input columns.
    pub fn scale_input_columns(&mut self, columns: std::ops::Range<usize>, gain: f64) {
        let fan_in = self.layers[0].fan_in;
        for row in self.weight_mut(0).chunks_exact_mut(fan_in) {
            for w in &mut row[columns.clone()] {
                *w *= gain;
            }
        }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.num_params() {
            return Err(Error::domain(format!(
                "architecture needs {} parameters, got {}",
                arch.num_params(),
                params.len()
            )));
        }
        Ok(Self {
            layers: layouts(&arch),
            arch,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let l = self.layers[layer];
        &self.params[l.weight..l.bias]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layers[layer];
        &mut self.params[l.weight..l.bias]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layers[layer];
        &self.params[l.bias..l.bias + l.fan_out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layers[layer];
        &mut self.params[l.bias..l.bias + l.fan_out]
    }

    /// `layers.{i}.weight` (`[out, in]`) and `layers.{i}.bias` (`[out]`).
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    TensorSpec {
                        name: format!("layers.{i}.weight"),
                        shape: vec![l.fan_out, l.fan_in],
                        offset: l.weight,
                    },
                    TensorSpec {
                        name: format!("layers.{i}.bias"),
                        shape: vec![l.fan_out],
                        offset: l.bias,
                    },
                ]
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.arch.input_dim {
            return Err(Error::domain(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.arch.input_dim
            )));
        }
        if let Some(pos) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "forward",
                format!("input[{pos}] = {}", input[pos]),
            ));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut x = input.to_vec();
        for (li, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.weight..l.bias];
            let b = &self.params[l.bias..l.bias + l.fan_out];
            let z: Vec<f64> = w
                .chunks_exact(l.fan_in)
                .zip(b)
                .map(|(row, &bias)| bias + dot(row, &x))
                .collect();
            inputs.push(x);
            if li == last {
                return Ok((
                    z,
                    ForwardCache {
                        inputs,
                        pre_activations,
                    },
                ));
            }
            x = z.iter().map(|&v| self.arch.activation.apply(v)).collect();
            pre_activations.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Gradient of `logits . upstream` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but adds into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        if upstream.len() != self.arch.output_dim {
            return Err(Error::domain(format!(
                "upstream gradient has length {}, network outputs {}",
                upstream.len(),
                self.arch.output_dim
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::domain(format!(
                "gradient buffer has length {}, network has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.len() != l.fan_in)
        {
            return Err(Error::domain("forward cache does not match this network"));
        }
        let mut delta = upstream.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[li];
            {
                let (gw, gb) = grads[l.weight..l.bias + l.fan_out].split_at_mut(l.bias - l.weight);
                for ((grow, gbias), &d) in gw.chunks_exact_mut(l.fan_in).zip(gb).zip(&delta) {
                    *gbias += d;
                    if d != 0.0 {
                        axpy(d, x, grow);
                    }
                }
            }
            if li == 0 {
                break;
            }
            let w = &self.params[l.weight..l.bias];
            let mut prev = vec![0.0; l.fan_in];
            for (row, &d) in w.chunks_exact(l.fan_in).zip(&delta) {
                if d != 0.0 {
                    axpy(d, row, &mut prev);
                }
            }
            for (p, &z) in prev.iter_mut().zip(&cache.pre_activations[li - 1]) {
                *p *= self.arch.activation.derivative(z);
            }
            delta = prev;
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
