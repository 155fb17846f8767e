use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `activation(W·x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Vec<f64>,
    pub activation: Activation,
    pub frozen: bool,
}

/// Result of a layer forward pass over a batch.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    pub pre_activation: Tensor,
    pub output: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "layer weights must be a matrix, got shape {:?}",
                weights.shape()
            )));
        }
        if weights.shape()[0] != bias.len() {
            return Err(Error::Dimension(format!(
                "weights have {} rows but bias has {} entries",
                weights.shape()[0],
                bias.len()
            )));
        }
        if let Some(i) = bias.iter().position(|b| !b.is_finite()) {
            return Err(Error::Numeric {
                path: format!("bias[{i}]"),
                reason: "non-finite bias".into(),
            });
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
            frozen: false,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Tensor::zeros(vec![outputs, inputs]),
            bias: vec![0.0; outputs],
            activation,
            frozen: false,
        }
    }

    /// He-style uniform init: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    pub fn he_uniform<R: Rng>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let values = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        DenseLayer {
            weights: Tensor::matrix(outputs, inputs, values).expect("finite init"),
            bias: vec![0.0; outputs],
            activation,
            frozen: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.values_mut(), &mut self.bias)
    }

    /// Forward pass over a vector (one sample) or a `[batch, in]` matrix.
    pub fn forward(&self, x: &Tensor) -> Result<DenseOutput> {
        let (batch, width) = x.batch_dims();
        if width != self.inputs() {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got {width}",
                self.inputs()
            )));
        }
        let (out, inp) = (self.outputs(), self.inputs());
        let w = self.weights.values();
        let mut pre = vec![0.0; batch * out];
        for r in 0..batch {
            let xr = x.row(r);
            let zr = &mut pre[r * out..(r + 1) * out];
            for (o, z) in zr.iter_mut().enumerate() {
                let wo = &w[o * inp..(o + 1) * inp];
                *z = self.bias[o] + dot(wo, xr);
            }
        }
        let post = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let shape = if x.shape().len() == 1 {
            vec![out]
        } else {
            vec![batch, out]
        };
        Ok(DenseOutput {
            pre_activation: Tensor::new(shape.clone(), pre)?,
            output: Tensor::new(shape, post)?,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standalone form of [`DenseLayer::forward`] returning only the activations.
pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    layer.forward(x).map(|o| o.output)
}
