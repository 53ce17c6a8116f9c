//! Trainable models shared by both attacks.
//!
//! Every gradient-trained model keeps its parameters in one flat buffer and
//! trains with mini-batch Adam. Training is single-threaded and fully
//! determined by the spec's seed.

mod adam;
pub mod autoencoder;
pub mod dense;
pub mod forest;
pub mod linear;
pub mod siamese;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use autoencoder::{autoencoder_layer_plan, Autoencoder};
pub use dense::{sigmoid, Activation, LayerShape, Network};
pub use forest::{MaxFeatures, RandomForest};
pub use linear::{LinearLoss, LinearModel};
pub use siamese::SiameseNet;

use crate::error::{Error, Result};
use crate::features::Preprocessor;

/// Dense classifier layouts for feature length `l` with dropout `d`:
/// small `(l, l/4, d, 1)`, medium `(l, l/2, d, l/8, 1)`,
/// large `(l, l/2, d, l/4, d, l/16, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    LinearSvm,
    RandomForest,
    MlpSmall,
    MlpMedium,
    MlpLarge,
    Autoencoder,
    SiameseDense,
}

/// Architectures that keep a name in the registry but are not built here.
pub const UNSUPPORTED_MODELS: [&str; 9] = [
    "kernel_svm",
    "cnn",
    "lstm",
    "bilstm",
    "attention_lstm",
    "cnn_siamese",
    "lstm_siamese",
    "bilstm_siamese",
    "attention_siamese",
];

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Logreg,
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::MlpSmall,
        ModelKind::MlpMedium,
        ModelKind::MlpLarge,
        ModelKind::Autoencoder,
        ModelKind::SiameseDense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::RandomForest => "random_forest",
            ModelKind::MlpSmall => "mlp_small",
            ModelKind::MlpMedium => "mlp_medium",
            ModelKind::MlpLarge => "mlp_large",
            ModelKind::Autoencoder => "autoencoder",
            ModelKind::SiameseDense => "siamese_dense",
        }
    }

    pub fn is_classifier(self) -> bool {
        !matches!(self, ModelKind::Autoencoder | ModelKind::SiameseDense)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = ModelKind::ALL.into_iter().find(|k| k.as_str() == s) {
            return Ok(k);
        }
        if UNSUPPORTED_MODELS.contains(&s) {
            return Err(Error::NotImplemented(format!("model {s:?}")));
        }
        Err(Error::invalid(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// L2 penalty of the linear SVM.
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub forest: ForestParams,
}

fn default_dropout() -> f64 {
    0.2
}

fn default_l2() -> f64 {
    1e-4
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            dropout: default_dropout(),
            l2: default_l2(),
            train: TrainParams::default(),
            forest: ForestParams::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.train.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2 must be non-negative"));
        }
        if self.kind == ModelKind::RandomForest {
            if self.forest.n_trees == 0 {
                return Err(Error::invalid("n_trees must be >= 1"));
            }
            if self.forest.max_depth == Some(0) {
                return Err(Error::invalid("max_depth must be >= 1"));
            }
        }
        Ok(())
    }

    /// Hidden layers of the dense classifier for input length `l`.
    pub fn mlp_layers(&self, l: usize) -> Option<Vec<LayerShape>> {
        let w = |div: usize| (l / div).max(1);
        let d = self.dropout;
        let relu = Activation::Relu;
        let layers = match self.kind {
            ModelKind::MlpSmall => vec![LayerShape::new(l, w(4), relu).with_dropout(d)],
            ModelKind::MlpMedium => vec![
                LayerShape::new(l, w(2), relu).with_dropout(d),
                LayerShape::new(w(2), w(8), relu),
            ],
            ModelKind::MlpLarge => vec![
                LayerShape::new(l, w(2), relu).with_dropout(d),
                LayerShape::new(w(2), w(4), relu).with_dropout(d),
                LayerShape::new(w(4), w(16), relu),
            ],
            _ => return None,
        };
        let last = layers[layers.len() - 1].output;
        let mut layers = layers;
        // logit output; the sigmoid is folded into the loss and into scoring
        layers.push(LayerShape::new(last, 1, Activation::Identity));
        Some(layers)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learned {
    Linear(LinearModel),
    /// Dense classifier emitting a logit.
    Mlp(Network),
    Forest(RandomForest),
    Autoencoder(Autoencoder),
    Siamese(SiameseNet),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub learned: Learned,
    /// Preprocessing fitted by an owning pipeline, applied before scoring.
    #[serde(default)]
    pub preprocessing: Option<Preprocessor>,
    /// Mean training loss per epoch (empty for forests).
    #[serde(default)]
    pub training_loss: Vec<f64>,
}

fn check_matrix(xs: &[Vec<f64>]) -> Result<usize> {
    let dim = xs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no training samples"))?;
    if dim == 0 {
        return Err(Error::invalid("feature vectors are empty"));
    }
    for x in xs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
    }
    Ok(dim)
}

fn check_labels(ys: &[u8], n: usize) -> Result<()> {
    if ys.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ys.len(),
        });
    }
    if ys.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = ys.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == ys.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Trains a classifier (or, for `autoencoder`, a reconstruction model that
/// ignores `ys`). Siamese models train on pairs through [`fit_siamese`].
pub fn fit(spec: &ModelSpec, xs: &[Vec<f64>], ys: &[u8]) -> Result<TrainedModel> {
    spec.validate()?;
    let dim = check_matrix(xs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
    let (learned, training_loss) = match spec.kind {
        ModelKind::Autoencoder => {
            let mut ae = Autoencoder::new(dim, &mut rng)?;
            let h = ae.fit(xs, &spec.train, &mut rng)?;
            (Learned::Autoencoder(ae), h)
        }
        ModelKind::SiameseDense => {
            return Err(Error::invalid("siamese models train on pairs; use fit_siamese"))
        }
        kind => {
            check_labels(ys, xs.len())?;
            match kind {
                ModelKind::Logreg | ModelKind::LinearSvm => {
                    let (loss, l2) = if kind == ModelKind::Logreg {
                        (LinearLoss::Logistic, 0.0)
                    } else {
                        (LinearLoss::Hinge, spec.l2)
                    };
                    let (m, h) = LinearModel::fit(loss, l2, xs, ys, &spec.train, &mut rng);
                    (Learned::Linear(m), h)
                }
                ModelKind::RandomForest => {
                    let params = forest::TreeParams {
                        max_depth: spec.forest.max_depth,
                        max_features: spec.forest.max_features.resolve(dim),
                        min_samples_split: spec.forest.min_samples_split,
                    };
                    let f = RandomForest::fit(xs, ys, spec.forest.n_trees, &params, spec.train.seed);
                    (Learned::Forest(f), Vec::new())
                }
                _ => {
                    let layers = spec.mlp_layers(dim).expect("mlp kinds have layers");
                    let mut net = Network::new(layers, &mut rng)?;
                    let h = fit_mlp(&mut net, xs, ys, &spec.train, &mut rng);
                    (Learned::Mlp(net), h)
                }
            }
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        learned,
        preprocessing: None,
        training_loss,
    })
}

fn fit_mlp(net: &mut Network, xs: &[Vec<f64>], ys: &[u8], train: &TrainParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut params = net.params().to_vec();
    let mut work = net.clone();
    let history = adam::minibatch_train(xs.len(), &mut params, train, rng, |batch, p, grads, rng| {
        work.params_mut().copy_from_slice(p);
        let mut total = 0.0;
        for &i in batch {
            let trace = work
                .forward(&xs[i], Some(&mut *rng))
                .expect("dimensions checked before training");
            let z = trace.output()[0];
            let y = f64::from(ys[i]);
            total += dense::bce_with_logit(z, y);
            work.backward(&trace, &[sigmoid(z) - y], grads);
        }
        total
    });
    net.params_mut().copy_from_slice(&params);
    history
}

/// Mean binary cross-entropy of a logit-emitting network and its gradient, dropout off.
pub fn mlp_loss_and_gradient(net: &Network, xs: &[Vec<f64>], ys: &[u8]) -> Result<(f64, Vec<f64>)> {
    let mut grads = vec![0.0; net.params().len()];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let trace = net.forward::<ChaCha8Rng>(x, None)?;
        let z = trace.output()[0];
        total += dense::bce_with_logit(z, f64::from(y));
        net.backward(&trace, &[sigmoid(z) - f64::from(y)], &mut grads);
    }
    let n = xs.len() as f64;
    grads.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grads))
}

/// Trains a dense Siamese network on labelled pairs (1 = same identity).
pub fn fit_siamese(spec: &ModelSpec, left: &[&[f64]], right: &[&[f64]], ys: &[u8]) -> Result<TrainedModel> {
    spec.validate()?;
    if spec.kind != ModelKind::SiameseDense {
        return Err(Error::invalid(format!("{} is not a siamese model", spec.kind)));
    }
    if left.len() != right.len() || left.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: ys.len(),
            got: left.len().min(right.len()),
        });
    }
    let owned: Vec<Vec<f64>> = left.iter().chain(right).map(|v| v.to_vec()).collect();
    let dim = check_matrix(&owned)?;
    check_labels(ys, left.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
    let mut net = SiameseNet::new(dim, spec.dropout, &mut rng)?;
    let h = net.fit(left, right, ys, &spec.train, &mut rng)?;
    Ok(TrainedModel {
        spec: spec.clone(),
        learned: Learned::Siamese(net),
        preprocessing: None,
        training_loss: h,
    })
}

impl TrainedModel {
    pub fn with_preprocessing(mut self, p: Preprocessor) -> Self {
        self.preprocessing = Some(p);
        self
    }

    fn prepare<'a>(&self, x: &'a [f64]) -> Result<std::borrow::Cow<'a, [f64]>> {
        match &self.preprocessing {
            Some(p) => Ok(std::borrow::Cow::Owned(p.transform(x)?)),
            None => Ok(std::borrow::Cow::Borrowed(x)),
        }
    }

    /// Score in `[0, 1]`; higher means class 1.
    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        let x = self.prepare(x)?;
        match &self.learned {
            Learned::Linear(m) => m.score(&x),
            Learned::Mlp(net) => Ok(sigmoid(net.predict(&x)?[0])),
            Learned::Forest(f) => f.score(&x),
            Learned::Autoencoder(_) => Err(Error::invalid("autoencoders do not score; use encode")),
            Learned::Siamese(_) => Err(Error::invalid("siamese models score pairs; use siamese_forward")),
        }
    }

    pub fn siamese_forward(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match &self.learned {
            Learned::Siamese(net) => {
                let (a, b) = (self.prepare(a)?, self.prepare(b)?);
                net.forward(&a, &b)
            }
            _ => Err(Error::invalid("not a siamese model")),
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.learned {
            Learned::Autoencoder(ae) => ae.encode(&self.prepare(x)?),
            _ => Err(Error::invalid("not an autoencoder")),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Loads a saved model and checks that its parameters fit its architecture.
    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        match &self.learned {
            Learned::Linear(l) => {
                if l.params.is_empty() || l.params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::invalid("linear parameters must be finite and non-empty"));
                }
            }
            Learned::Mlp(n) => {
                Network::from_parts(n.layers().to_vec(), n.params().to_vec())?;
                if n.output_dim() != 1 {
                    return Err(Error::invalid("classifier network must emit one logit"));
                }
            }
            Learned::Forest(f) => f.validate()?,
            Learned::Autoencoder(a) => {
                let n = Network::from_parts(a.net.layers().to_vec(), a.net.params().to_vec())?;
                Autoencoder::from_network(n)?;
            }
            Learned::Siamese(s) => {
                let n = Network::from_parts(s.encoder.layers().to_vec(), s.encoder.params().to_vec())?;
                SiameseNet::from_parts(n, s.head.clone())?;
            }
        }
        if let Some(p) = &self.preprocessing {
            p.validate()?;
        }
        Ok(())
    }
}
