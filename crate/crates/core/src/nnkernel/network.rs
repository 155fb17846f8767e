use super::layer::{Activation, DenseLayer};
use super::loss::{bce_grad, bce_loss, PROB_EPSILON};
use super::optim::{OptimizerState, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-layer gradient. `None` for frozen layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrad>>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    post: Vec<Tensor>,
}

/// Ordered stack of dense layers ending in a single sigmoid unit for
/// binary classification.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<DenseLayer>,
    cache: Option<ForwardCache>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Dimension(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Network {
            layers,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights().len() + l.bias().len())
            .sum()
    }

    /// Pure inference; leaves any training cache untouched.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut a = x.clone();
        for layer in &self.layers {
            a = layer.forward(&a)?.output;
        }
        Ok(a)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        for layer in &self.layers {
            let out = layer.forward(&a)?;
            cache.inputs.push(a);
            cache.pre.push(out.pre_activation);
            a = out.output.clone();
            cache.post.push(out.output);
        }
        self.cache = Some(cache);
        Ok(a)
    }

    /// Mean BCE over a batch whose network output is one probability per row.
    pub fn loss(&self, x: &Tensor, y: &[f64]) -> Result<f64> {
        let p = self.predict(x)?;
        bce_loss(p.values(), y)
    }

    /// Chain-rule gradients of mean BCE with respect to every trainable
    /// parameter. Consumes the cache left by [`Network::forward_train`].
    pub fn backward(&mut self, targets: &[f64]) -> Result<Gradients> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let last = self.layers.len() - 1;
        let probs = cache.post[last].values();
        if self.output_width() != 1 {
            return Err(Error::Dimension(format!(
                "loss expects one output unit, network has {}",
                self.output_width()
            )));
        }
        let batch = probs.len();
        let dl_da = bce_grad(probs, targets)?;

        // delta = ∂L/∂z of the current layer, laid out [batch, outputs].
        let mut delta: Vec<f64> = if self.layers[last].activation == Activation::Sigmoid {
            // Fused sigmoid + BCE derivative, zero outside the clip band.
            probs
                .iter()
                .zip(targets)
                .map(|(&p, &y)| {
                    if (PROB_EPSILON..=1.0 - PROB_EPSILON).contains(&p) {
                        (p - y) / batch as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            dl_da
                .iter()
                .zip(cache.pre[last].values().iter().zip(probs))
                .map(|(g, (&z, &a))| g * self.layers[last].activation.derivative(z, a))
                .collect()
        };

        let mut grads: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (out, inp) = (layer.outputs(), layer.inputs());
            let x = &cache.inputs[li];
            if !layer.frozen {
                let mut gw = vec![0.0; out * inp];
                let mut gb = vec![0.0; out];
                for r in 0..batch {
                    let xr = x.row(r);
                    let dr = &delta[r * out..(r + 1) * out];
                    for (o, &d) in dr.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, &xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                            *g += d * xv;
                        }
                    }
                }
                grads[li] = Some(LayerGrad {
                    weights: gw,
                    bias: gb,
                });
            }
            if li == 0 {
                break;
            }
            if self.layers[..li].iter().all(|l| l.frozen) {
                break;
            }
            // Propagate to the previous layer's activations, then through its
            // activation derivative.
            let w = layer.weights().values();
            let prev = &self.layers[li - 1];
            let z_prev = cache.pre[li - 1].values();
            let a_prev = cache.post[li - 1].values();
            let mut next = vec![0.0; batch * inp];
            for r in 0..batch {
                let dr = &delta[r * out..(r + 1) * out];
                let nr = &mut next[r * inp..(r + 1) * inp];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &wv) in nr.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                        *n += d * wv;
                    }
                }
                for (j, n) in nr.iter_mut().enumerate() {
                    let k = r * inp + j;
                    *n *= prev.activation.derivative(z_prev[k], a_prev[k]);
                }
            }
            delta = next;
        }
        Ok(Gradients { layers: grads })
    }

    /// Applies one optimizer step to every trainable layer.
    pub fn apply_gradients(
        &mut self,
        grads: &Gradients,
        optimizer: &mut OptimizerState,
    ) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "{} gradient entries for {} layers",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        self.cache = None;
        let mut params = Vec::new();
        for (i, (layer, grad)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            if layer.frozen {
                continue;
            }
            let grad = grad.as_ref().ok_or_else(|| {
                Error::State(format!("trainable layer {i} has no gradient entry"))
            })?;
            let (w, b) = layer.params_mut();
            params.push(Param::new(format!("layer{i}.weights"), w, &grad.weights));
            params.push(Param::new(format!("layer{i}.bias"), b, &grad.bias));
        }
        optimizer.step(&mut params)
    }

    /// Rounds every parameter to the nearest `f32`, matching what the weight
    /// file stores.
    pub fn round_to_f32(&mut self) {
        self.cache = None;
        for layer in &mut self.layers {
            let (w, b) = layer.params_mut();
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_unit(w: f64, b: f64) -> Network {
        let layer = DenseLayer::new(
            Tensor::matrix(1, 1, vec![w]).unwrap(),
            vec![b],
            Activation::Sigmoid,
        )
        .unwrap();
        Network::new(vec![layer]).unwrap()
    }

    #[test]
    fn single_sigmoid_unit_gradient() {
        let mut net = single_unit(0.0, 0.0);
        net.forward_train(&Tensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        let g = net.backward(&[1.0]).unwrap();
        let lg = g.layers[0].as_ref().unwrap();
        assert_eq!(lg.weights, vec![-0.5]);
        assert_eq!(lg.bias, vec![-0.5]);
    }

    #[test]
    fn zero_input_kills_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new(vec![
            DenseLayer::he_uniform(4, 3, Activation::None, &mut rng),
            DenseLayer::he_uniform(3, 1, Activation::Sigmoid, &mut rng),
        ])
        .unwrap();
        net.forward_train(&Tensor::zeros(vec![2, 4])).unwrap();
        let g = net.backward(&[1.0, 0.0]).unwrap();
        let first = g.layers[0].as_ref().unwrap();
        assert!(first.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = single_unit(0.0, 0.0);
        assert!(matches!(net.backward(&[1.0]), Err(Error::State(_))));
    }

    #[test]
    fn cache_is_consumed() {
        let mut net = single_unit(0.3, 0.0);
        net.forward_train(&Tensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        net.backward(&[1.0]).unwrap();
        assert!(net.backward(&[1.0]).is_err());
    }

    #[test]
    fn frozen_layers_get_no_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut frozen = DenseLayer::he_uniform(2, 2, Activation::Relu, &mut rng);
        frozen.frozen = true;
        let mut net = Network::new(vec![
            frozen,
            DenseLayer::he_uniform(2, 1, Activation::Sigmoid, &mut rng),
        ])
        .unwrap();
        net.forward_train(&Tensor::matrix(1, 2, vec![0.4, 0.9]).unwrap())
            .unwrap();
        let g = net.backward(&[0.0]).unwrap();
        assert!(g.layers[0].is_none());
        assert!(g.layers[1].is_some());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let r = Network::new(vec![
            DenseLayer::zeros(2, 3, Activation::Relu),
            DenseLayer::zeros(2, 1, Activation::Sigmoid),
        ]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
