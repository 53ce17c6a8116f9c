use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainParams;

/// Adam update with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Shuffled mini-batch loop shared by the gradient-trained models.
///
/// `batch_grad` receives the batch indices and the current parameters, adds
/// the summed per-sample gradient into the buffer it is given, and returns the
/// summed loss. Returns the mean training loss of every epoch.
pub(crate) fn minibatch_train<R, F>(
    n_samples: usize,
    params: &mut [f64],
    train: &TrainParams,
    rng: &mut R,
    mut batch_grad: F,
) -> Vec<f64>
where
    R: Rng,
    F: FnMut(&[usize], &[f64], &mut [f64], &mut R) -> f64,
{
    let mut adam = Adam::new(params.len(), train.learning_rate);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut grads = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(train.epochs);
    let batch = train.batch_size.max(1);
    for _ in 0..train.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            epoch_loss += batch_grad(chunk, params, &mut grads, rng);
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(params, &grads);
        }
        history.push(epoch_loss / n_samples.max(1) as f64);
    }
    history
}
