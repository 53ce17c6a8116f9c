use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::minibatch_train;
use super::dense::{bce_with_logit, dot, sigmoid};
use super::TrainParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearLoss {
    /// Binary cross-entropy on `sigmoid(w·x + b)`.
    Logistic,
    /// Hinge loss with an L2 penalty on `w`.
    Hinge,
}

/// `w·x + b` with the bias stored as the last parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub loss: LinearLoss,
    pub params: Vec<f64>,
    #[serde(default)]
    pub l2: f64,
}

impl LinearModel {
    pub fn zeros(loss: LinearLoss, dim: usize) -> Self {
        LinearModel {
            loss,
            params: vec![0.0; dim + 1],
            l2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len() - 1
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(dot(&self.params[..self.dim()], x) + self.params[self.dim()])
    }

    /// Sigmoid of the margin; for the hinge model this is only a monotone squashing.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.margin(x)?))
    }

    fn sample_loss_grad(params: &[f64], loss: LinearLoss, x: &[f64], y: u8, grads: &mut [f64]) -> f64 {
        let d = x.len();
        let m = dot(&params[..d], x) + params[d];
        let (l, dm) = match loss {
            LinearLoss::Logistic => (bce_with_logit(m, f64::from(y)), sigmoid(m) - f64::from(y)),
            LinearLoss::Hinge => {
                let t = if y == 1 { 1.0 } else { -1.0 };
                if t * m < 1.0 {
                    (1.0 - t * m, -t)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        if dm != 0.0 {
            for (g, xi) in grads[..d].iter_mut().zip(x) {
                *g += dm * xi;
            }
            grads[d] += dm;
        }
        l
    }

    /// Mean loss over `(xs, ys)` and its gradient at the current parameters.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[u8]) -> (f64, Vec<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            total += Self::sample_loss_grad(&self.params, self.loss, x, y, &mut grads);
        }
        let n = xs.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        let d = self.dim();
        let penalty = 0.5 * self.l2 * self.params[..d].iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grads[..d].iter_mut().zip(&self.params[..d]) {
            *g += self.l2 * w;
        }
        (total / n + penalty, grads)
    }

    pub(crate) fn fit<R: Rng>(
        loss: LinearLoss,
        l2: f64,
        xs: &[Vec<f64>],
        ys: &[u8],
        train: &TrainParams,
        rng: &mut R,
    ) -> (Self, Vec<f64>) {
        let mut model = LinearModel::zeros(loss, xs[0].len());
        model.l2 = l2;
        let d = model.dim();
        let history = minibatch_train(xs.len(), &mut model.params, train, rng, |batch, params, grads, _| {
            let mut total = 0.0;
            for &i in batch {
                total += Self::sample_loss_grad(params, loss, &xs[i], ys[i], grads);
            }
            if l2 > 0.0 {
                let k = batch.len() as f64;
                for (g, w) in grads[..d].iter_mut().zip(&params[..d]) {
                    *g += k * l2 * w;
                }
            }
            total
        });
        (model, history)
    }
}
