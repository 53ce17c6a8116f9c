//! Fully connected networks over a single flat parameter buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
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

/// Binary cross-entropy of `sigmoid(logit)` against `y`, computed stably.
pub fn bce_with_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    /// Dropout rate applied to this layer's output during training.
    pub dropout: f64,
}

impl LayerShape {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        LayerShape {
            input,
            output,
            activation,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    fn n_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Weights are row-major `output x input`, followed by the biases, per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Per-layer values recorded by a forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[i + 1]` the output of layer `i`
    /// after dropout.
    pub activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or `1 / (1 - p)`) per layer, when active.
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Network {
    /// Uniform init in `±1/sqrt(fan_in)`, biases zero.
    pub fn new<R: Rng>(layers: Vec<LayerShape>, rng: &mut R) -> Result<Self> {
        Self::validate_layers(&layers)?;
        let mut params = Vec::with_capacity(layers.iter().map(LayerShape::n_params).sum());
        for l in &layers {
            let bound = 1.0 / (l.input as f64).sqrt();
            params.extend((0..l.input * l.output).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, l.output));
        }
        Ok(Network { layers, params })
    }

    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        Self::validate_layers(&layers)?;
        let expected: usize = layers.iter().map(LayerShape::n_params).sum();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(Network { layers, params })
    }

    fn validate_layers(layers: &[LayerShape]) -> Result<()> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::invalid(format!("layer {i} has a zero-sized side")));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::invalid(format!("layer {i} dropout must be in [0, 1)")));
            }
            if i > 0 && layers[i - 1].output != l.input {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.input,
                    layers[i - 1].output
                )));
            }
        }
        // bound parameter count so malformed saved models cannot request absurd allocations
        let total = layers.iter().try_fold(0usize, |acc, l| {
            l.input
                .checked_mul(l.output)
                .and_then(|w| w.checked_add(l.output))
                .and_then(|n| acc.checked_add(n))
        });
        match total {
            Some(n) if n <= 1 << 31 => Ok(()),
            _ => Err(Error::invalid("network is too large")),
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            off.push(acc);
            acc += l.n_params();
        }
        off
    }

    /// Sub-network made of layers `range` with their parameters.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Network {
        let off = self.offsets();
        let start = off[range.start];
        let end = if range.end == self.layers.len() {
            self.params.len()
        } else {
            off[range.end]
        };
        Network {
            layers: self.layers[range].to_vec(),
            params: self.params[start..end].to_vec(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Inference pass, dropout disabled.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in &self.layers {
            let (w, b) = self.params[off..off + l.n_params()].split_at(l.input * l.output);
            cur = (0..l.output)
                .map(|o| {
                    let row = &w[o * l.input..(o + 1) * l.input];
                    l.activation.apply(dot(row, &cur) + b[o])
                })
                .collect();
            off += l.n_params();
        }
        Ok(cur)
    }

    /// Training pass. Dropout is sampled from `rng` when given.
    pub fn forward<R: Rng>(&self, x: &[f64], mut rng: Option<&mut R>) -> Result<Trace> {
        self.check_input(x)?;
        let mut trace = Trace {
            activations: vec![x.to_vec()],
            pre: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut off = 0;
        for l in &self.layers {
            let (w, b) = self.params[off..off + l.n_params()].split_at(l.input * l.output);
            let input = &trace.activations[trace.activations.len() - 1];
            let z: Vec<f64> = (0..l.output)
                .map(|o| dot(&w[o * l.input..(o + 1) * l.input], input) + b[o])
                .collect();
            let mut a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if l.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - l.dropout);
                    let m: Vec<f64> = (0..l.output)
                        .map(|_| if r.random::<f64>() < l.dropout { 0.0 } else { keep })
                        .collect();
                    a.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            trace.pre.push(z);
            trace.masks.push(mask);
            trace.activations.push(a);
            off += l.n_params();
        }
        Ok(trace)
    }

    /// Accumulates parameter gradients into `grads` given `d_out` (gradient of
    /// the loss w.r.t. the network output) and returns the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let offsets = self.offsets();
        let mut delta = d_out.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a = &trace.activations[i + 1];
            let z = &trace.pre[i];
            if let Some(m) = &trace.masks[i] {
                delta.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            for o in 0..l.output {
                let raw_a = if trace.masks[i].is_some() {
                    l.activation.apply(z[o])
                } else {
                    a[o]
                };
                delta[o] *= l.activation.derivative(z[o], raw_a);
            }
            let input = &trace.activations[i];
            let off = offsets[i];
            let (gw, gb) = grads[off..off + l.n_params()].split_at_mut(l.input * l.output);
            let w = &self.params[off..off + l.input * l.output];
            let mut d_in = vec![0.0; l.input];
            for o in 0..l.output {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * l.input;
                for j in 0..l.input {
                    gw[row + j] += d * input[j];
                    d_in[j] += d * w[row + j];
                }
            }
            delta = d_in;
        }
        delta
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let layers = vec![
            LayerShape::new(3, 2, Activation::Relu),
            LayerShape::new(2, 1, Activation::Sigmoid),
        ];
        let net = Network::from_parts(layers, vec![0.0; 3 * 2 + 2 + 2 + 1]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5]);
        assert!(net.predict(&[1.0]).is_err());
    }

    #[test]
    fn zero_dropout_matches_no_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![
            LayerShape::new(4, 3, Activation::Relu).with_dropout(0.0),
            LayerShape::new(3, 1, Activation::Identity),
        ];
        let net = Network::new(layers, &mut rng).unwrap();
        let x = [0.3, -0.1, 0.8, 0.5];
        let t = net.forward(&x, Some(&mut rng)).unwrap();
        assert_eq!(t.output(), net.predict(&x).unwrap().as_slice());
    }

    #[test]
    fn rejects_inconsistent_layers() {
        let layers = vec![
            LayerShape::new(4, 3, Activation::Relu),
            LayerShape::new(2, 1, Activation::Identity),
        ];
        assert!(Network::from_parts(layers, vec![0.0; 20]).is_err());
        let bad_dropout = vec![LayerShape::new(2, 1, Activation::Relu).with_dropout(1.0)];
        assert!(Network::from_parts(bad_dropout, vec![0.0; 3]).is_err());
    }

    #[test]
    fn bce_is_stable() {
        assert!(bce_with_logit(800.0, 1.0).abs() < 1e-12);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
