//! Dense five-layer autoencoder whose middle layer serves as a compressed feature vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::minibatch_train;
use super::dense::{Activation, LayerShape, Network};
use super::TrainParams;
use crate::error::{Error, Result};

/// Layer widths `(l1, l2, l3, l4, l5)` for input length `l1`.
///
/// `l2 = min(2048, l1/4)` above 255 inputs, else `l1/2`; `l3 = l2/4` above
/// 127, else `l2/2`; the decoder mirrors the encoder.
pub fn autoencoder_layer_plan(l1: usize) -> Result<[usize; 5]> {
    let l2 = if l1 > 255 { (l1 / 4).min(2048) } else { l1 / 2 };
    let l3 = if l2 > 127 { l2 / 4 } else { l2 / 2 };
    if l3 < 1 {
        return Err(Error::invalid(format!(
            "input of length {l1} is too short to compress (needs at least 4)"
        )));
    }
    Ok([l1, l2, l3, l2, l1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub net: Network,
}

impl Autoencoder {
    pub fn new<R: Rng>(input: usize, rng: &mut R) -> Result<Self> {
        let [l1, l2, l3, l4, l5] = autoencoder_layer_plan(input)?;
        let net = Network::new(
            vec![
                LayerShape::new(l1, l2, Activation::Relu),
                LayerShape::new(l2, l3, Activation::Identity),
                LayerShape::new(l3, l4, Activation::Relu),
                LayerShape::new(l4, l5, Activation::Identity),
            ],
            rng,
        )?;
        Ok(Autoencoder { net })
    }

    pub fn from_network(net: Network) -> Result<Self> {
        let l = net.layers();
        if l.len() != 4 || net.input_dim() != net.output_dim() {
            return Err(Error::invalid("autoencoder must have four layers mapping l1 back to l1"));
        }
        Ok(Autoencoder { net })
    }

    pub fn bottleneck(&self) -> usize {
        self.net.layers()[1].output
    }

    /// Output of the bottleneck layer; only the encoder half is evaluated.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.slice(0..2).predict(x)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.predict(x)
    }

    /// Mean squared reconstruction error over `xs` (per element).
    pub fn mse(&self, xs: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for x in xs {
            let r = self.reconstruct(x)?;
            total += r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += x.len();
        }
        Ok(total / count.max(1) as f64)
    }

    fn sample_loss_grad(&self, x: &[f64], grads: &mut [f64]) -> Result<f64> {
        let trace = self.net.forward::<rand_chacha::ChaCha8Rng>(x, None)?;
        let out = trace.output();
        let n = x.len() as f64;
        let d_out: Vec<f64> = out.iter().zip(x).map(|(o, t)| 2.0 * (o - t) / n).collect();
        let loss = out.iter().zip(x).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n;
        self.net.backward(&trace, &d_out, grads);
        Ok(loss)
    }

    /// Mean per-sample MSE and its gradient.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.net.params().len()];
        let mut total = 0.0;
        for x in xs {
            total += self.sample_loss_grad(x, &mut grads)?;
        }
        let n = xs.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grads))
    }

    pub(crate) fn fit<R: Rng>(&mut self, xs: &[Vec<f64>], train: &TrainParams, rng: &mut R) -> Result<Vec<f64>> {
        if let Some(bad) = xs.iter().find(|x| x.len() != self.net.input_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.net.input_dim(),
                got: bad.len(),
            });
        }
        let mut params = self.net.params().to_vec();
        let mut work = self.clone();
        let history = minibatch_train(xs.len(), &mut params, train, rng, |batch, p, grads, _| {
            work.net.params_mut().copy_from_slice(p);
            batch
                .iter()
                .map(|&i| work.sample_loss_grad(&xs[i], grads).unwrap_or(0.0))
                .sum()
        });
        self.net.params_mut().copy_from_slice(&params);
        Ok(history)
    }
}
