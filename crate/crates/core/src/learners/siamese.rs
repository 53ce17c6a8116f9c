//! Weight-shared twin encoder scored by a sigmoid over the absolute embedding difference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::minibatch_train;
use super::dense::{bce_with_logit, dot, sigmoid, Activation, LayerShape, Network};
use super::TrainParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseNet {
    pub encoder: Network,
    /// Weights over `|embed(a) - embed(b)|`, bias last.
    pub head: Vec<f64>,
}

/// Encoder widths for input length `l`: `l/2` then `l/4`, at least 1 each.
pub fn encoder_widths(input: usize) -> (usize, usize) {
    let h1 = (input / 2).max(1);
    let h2 = (h1 / 2).max(1);
    (h1, h2)
}

impl SiameseNet {
    pub fn new<R: Rng>(input: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        if input == 0 {
            return Err(Error::invalid("siamese input must be non-empty"));
        }
        let (h1, h2) = encoder_widths(input);
        let encoder = Network::new(
            vec![
                LayerShape::new(input, h1, Activation::Relu).with_dropout(dropout),
                LayerShape::new(h1, h2, Activation::Relu),
            ],
            rng,
        )?;
        let bound = 1.0 / (h2 as f64).sqrt();
        let mut head: Vec<f64> = (0..h2).map(|_| rng.random_range(-bound..bound)).collect();
        head.push(0.0);
        Ok(SiameseNet { encoder, head })
    }

    pub fn from_parts(encoder: Network, head: Vec<f64>) -> Result<Self> {
        if head.len() != encoder.output_dim() + 1 {
            return Err(Error::DimensionMismatch {
                expected: encoder.output_dim() + 1,
                got: head.len(),
            });
        }
        if head.iter().any(|h| !h.is_finite()) {
            return Err(Error::invalid("siamese head must be finite"));
        }
        Ok(SiameseNet { encoder, head })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(x)
    }

    fn logit_from_embeddings(&self, ea: &[f64], eb: &[f64]) -> f64 {
        let k = ea.len();
        let diff: Vec<f64> = ea.iter().zip(eb).map(|(a, b)| (a - b).abs()).collect();
        dot(&self.head[..k], &diff) + self.head[k]
    }

    /// Same-identity probability for the pair; symmetric in its arguments.
    pub fn forward(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        Ok(sigmoid(self.logit_from_embeddings(&ea, &eb)))
    }

    pub fn n_params(&self) -> usize {
        self.encoder.params().len() + self.head.len()
    }

    /// Encoder parameters followed by head parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.encoder.params().to_vec();
        p.extend_from_slice(&self.head);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.encoder.params().len();
        self.encoder.params_mut().copy_from_slice(&p[..n]);
        self.head.copy_from_slice(&p[n..]);
    }

    fn pair_loss_grad<R: Rng>(
        &self,
        a: &[f64],
        b: &[f64],
        y: f64,
        grads: &mut [f64],
        mut rng: Option<&mut R>,
    ) -> Result<f64> {
        let ta = self.encoder.forward(a, rng.as_deref_mut())?;
        let tb = self.encoder.forward(b, rng)?;
        let (ea, eb) = (ta.output(), tb.output());
        let k = ea.len();
        let z = self.logit_from_embeddings(ea, eb);
        let dz = sigmoid(z) - y;

        let n_enc = self.encoder.params().len();
        let (g_enc, g_head) = grads.split_at_mut(n_enc);
        let mut d_ea = vec![0.0; k];
        let mut d_eb = vec![0.0; k];
        for i in 0..k {
            let diff = ea[i] - eb[i];
            g_head[i] += dz * diff.abs();
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            d_ea[i] = dz * self.head[i] * s;
            d_eb[i] = -d_ea[i];
        }
        g_head[k] += dz;
        self.encoder.backward(&ta, &d_ea, g_enc);
        self.encoder.backward(&tb, &d_eb, g_enc);
        Ok(bce_with_logit(z, y))
    }

    /// Mean pair cross-entropy and its gradient (dropout off), in `flat_params` order.
    pub fn loss_and_gradient(&self, pairs: &[(Vec<f64>, Vec<f64>)], ys: &[u8]) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.n_params()];
        let mut total = 0.0;
        for ((a, b), &y) in pairs.iter().zip(ys) {
            total += self.pair_loss_grad::<rand_chacha::ChaCha8Rng>(a, b, f64::from(y), &mut grads, None)?;
        }
        let n = pairs.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grads))
    }

    pub(crate) fn fit<R: Rng>(
        &mut self,
        left: &[&[f64]],
        right: &[&[f64]],
        ys: &[u8],
        train: &TrainParams,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut params = self.flat_params();
        let mut failure = None;
        let mut work = self.clone();
        let history = minibatch_train(ys.len(), &mut params, train, rng, |batch, p, grads, rng| {
            work.set_flat_params(p);
            let mut total = 0.0;
            for &i in batch {
                match work.pair_loss_grad(left[i], right[i], f64::from(ys[i]), grads, Some(&mut *rng)) {
                    Ok(l) => total += l,
                    Err(e) => failure = Some(e),
                }
            }
            total
        });
        if let Some(e) = failure {
            return Err(e);
        }
        self.set_flat_params(&params);
        Ok(history)
    }
}
