use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepleak::eval::{auc, scored};
use stepleak::learners::{
    fit, fit_siamese, mlp_loss_and_gradient, Activation, Adam, Autoencoder, LayerShape, LinearLoss,
    LinearModel, ModelKind, ModelSpec, Network, SiameseNet, TrainedModel,
};

const H: f64 = 1e-5;

fn data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys = xs.iter().map(|x| u8::from(x[0] + 0.5 * x[1] > 0.0)).collect();
    (xs, ys)
}

/// Central differences of `loss` at `params`, compared with `analytic`.
fn check_gradient(params: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + H;
        let up = loss(&p);
        p[i] = orig - H;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-3);
        assert!(err < 1e-4, "param {i}: numeric {numeric} analytic {}", analytic[i]);
    }
}

#[test]
fn logistic_gradient() {
    let (xs, ys) = data(20, 5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = LinearModel::zeros(LinearLoss::Logistic, 5);
    m.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
    let (_, g) = m.loss_and_gradient(&xs, &ys);
    check_gradient(&m.params.clone(), &g, |p| {
        let mut m2 = m.clone();
        m2.params.copy_from_slice(p);
        m2.loss_and_gradient(&xs, &ys).0
    });
}

#[test]
fn hinge_gradient_away_from_kinks() {
    let (xs, ys) = data(20, 5, 3);
    let mut m = LinearModel::zeros(LinearLoss::Hinge, 5);
    m.l2 = 0.1;
    m.params = vec![0.3, -0.2, 0.7, 0.1, -0.4, 0.05];
    for (x, &y) in xs.iter().zip(&ys) {
        let t = if y == 1 { 1.0 } else { -1.0 };
        assert!((t * m.margin(x).unwrap() - 1.0).abs() > 1e-4);
    }
    let (_, g) = m.loss_and_gradient(&xs, &ys);
    check_gradient(&m.params.clone(), &g, |p| {
        let mut m2 = m.clone();
        m2.params.copy_from_slice(p);
        m2.loss_and_gradient(&xs, &ys).0
    });
}

#[test]
fn mlp_gradient() {
    let (xs, ys) = data(12, 8, 4);
    let spec = ModelSpec::new(ModelKind::MlpMedium);
    let layers = spec.mlp_layers(8).unwrap();
    let net = Network::new(layers.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let (_, g) = mlp_loss_and_gradient(&net, &xs, &ys).unwrap();
    check_gradient(net.params(), &g, |p| {
        let n2 = Network::from_parts(layers.clone(), p.to_vec()).unwrap();
        mlp_loss_and_gradient(&n2, &xs, &ys).unwrap().0
    });
}

#[test]
fn autoencoder_gradient() {
    let (xs, _) = data(6, 40, 6);
    let ae = Autoencoder::new(40, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let layers = ae.net.layers().to_vec();
    let (_, g) = ae.loss_and_gradient(&xs).unwrap();
    check_gradient(ae.net.params(), &g, |p| {
        let net = Network::from_parts(layers.clone(), p.to_vec()).unwrap();
        Autoencoder::from_network(net).unwrap().loss_and_gradient(&xs).unwrap().0
    });
}

#[test]
fn siamese_gradient() {
    let (xs, _) = data(16, 16, 8);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = xs.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let ys: Vec<u8> = (0..pairs.len()).map(|i| (i % 2) as u8).collect();
    let net = SiameseNet::new(16, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (_, g) = net.loss_and_gradient(&pairs, &ys).unwrap();
    check_gradient(&net.flat_params(), &g, |p| {
        let mut n2 = net.clone();
        n2.set_flat_params(p);
        n2.loss_and_gradient(&pairs, &ys).unwrap().0
    });
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut params = vec![1.0, -2.0, 0.5];
    let grads = [3.0, -0.01, 250.0];
    let mut adam = Adam::new(3, 1e-3);
    adam.step(&mut params, &grads);
    let expected = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
    for (p, e) in params.iter().zip(expected) {
        assert!((p - e).abs() < 1e-9, "{p} vs {e}");
    }
}

fn spec(kind: ModelKind) -> ModelSpec {
    let mut s = ModelSpec::new(kind).with_seed(11).with_epochs(30);
    s.forest.n_trees = 25;
    s
}

#[test]
fn classifiers_learn_a_linear_boundary() {
    let (xs, ys) = data(300, 6, 12);
    let (tx, ty) = data(200, 6, 13);
    for kind in [ModelKind::Logreg, ModelKind::LinearSvm, ModelKind::RandomForest, ModelKind::MlpSmall] {
        let mut s = spec(kind);
        s.train.learning_rate = 1e-2;
        let m = fit(&s, &xs, &ys).unwrap();
        let scores: Vec<f64> = tx.iter().map(|x| m.predict_score(x).unwrap()).collect();
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        let a = auc(&scored(&scores, &ty)).unwrap();
        assert!(a > 0.9, "{kind}: auc {a}");
    }
}

#[test]
fn training_is_deterministic() {
    let (xs, ys) = data(80, 6, 14);
    for kind in [ModelKind::Logreg, ModelKind::RandomForest, ModelKind::MlpLarge, ModelKind::Autoencoder] {
        let a = fit(&spec(kind), &xs, &ys).unwrap();
        let b = fit(&spec(kind), &xs, &ys).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn json_roundtrip_preserves_predictions() {
    let (xs, ys) = data(60, 20, 15);
    let mut models: Vec<TrainedModel> = [
        ModelKind::Logreg,
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::MlpSmall,
        ModelKind::Autoencoder,
    ]
    .into_iter()
    .map(|k| fit(&spec(k), &xs, &ys).unwrap())
    .collect();
    let left: Vec<&[f64]> = xs[..30].iter().map(Vec::as_slice).collect();
    let right: Vec<&[f64]> = xs[30..].iter().map(Vec::as_slice).collect();
    models.push(fit_siamese(&spec(ModelKind::SiameseDense), &left, &right, &ys[..30]).unwrap());

    for m in models {
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for x in &xs[..5] {
            match m.spec.kind {
                ModelKind::Autoencoder => assert_eq!(back.encode(x).unwrap(), m.encode(x).unwrap()),
                ModelKind::SiameseDense => {
                    assert_eq!(back.siamese_forward(x, &xs[9]).unwrap(), m.siamese_forward(x, &xs[9]).unwrap())
                }
                _ => assert_eq!(back.predict_score(x).unwrap(), m.predict_score(x).unwrap()),
            }
        }
    }
}

#[test]
fn corrupted_model_json_rejected() {
    let (xs, ys) = data(40, 6, 16);
    let m = fit(&spec(ModelKind::MlpSmall), &xs, &ys).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
    let params = v.pointer_mut("/learned/mlp/params").expect("mlp params in json");
    params.as_array_mut().unwrap().pop();
    assert!(TrainedModel::from_json(&v.to_string()).is_err());
    assert!(TrainedModel::from_json("{}").is_err());
}

#[test]
fn single_class_rejected() {
    let (xs, _) = data(10, 3, 17);
    assert!(matches!(fit(&spec(ModelKind::Logreg), &xs, &[1; 10]), Err(stepleak::Error::SingleClass)));
}

#[test]
fn layer_shapes_validated() {
    let bad = vec![LayerShape::new(3, 4, Activation::Relu), LayerShape::new(5, 1, Activation::Identity)];
    assert!(Network::new(bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
