//! Linkability attacks: decide whether two days of data belong to one user.
//!
//! Pairs are built from every user's daily feature vectors (all within-user
//! day pairs as positives, an equal number of random cross-user pairs as
//! negatives) and scored by distance thresholds, a random forest over the
//! element-wise L1 distance, or a dense Siamese network.
//!
//! Cross-validation splits pairs, not users, so a user's days can appear on
//! both sides of a split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::eval::{self, ScoredSample};
use crate::features::{extract_user, FeatureConfig, FeatureVector, Normalization, Preprocessor, Scope};
use crate::learners::{self, ModelKind, ModelSpec};

/// Features with training variance strictly below this are dropped.
pub const VARIANCE_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub keep: Vec<bool>,
}

impl FeatureMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.keep.len() {
            return Err(Error::DimensionMismatch {
                expected: self.keep.len(),
                got: v.len(),
            });
        }
        Ok(v.iter().zip(&self.keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect())
    }
}

/// Drops features whose population variance over `train` is below 1e-3.
pub fn variance_filter<V: AsRef<[f64]>>(train: &[V]) -> Result<FeatureMask> {
    variance_filter_with_threshold(train, VARIANCE_THRESHOLD)
}

pub fn variance_filter_with_threshold<V: AsRef<[f64]>>(train: &[V], threshold: f64) -> Result<FeatureMask> {
    if train.len() < 2 {
        return Err(Error::invalid("variance filter needs at least 2 training vectors"));
    }
    let d = train[0].as_ref().len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for v in train {
        let v = v.as_ref();
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for v in train {
        for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let keep: Vec<bool> = var.iter().map(|s| s / n >= threshold).collect();
    let mask = FeatureMask { keep };
    if mask.kept() == 0 {
        return Err(Error::invalid("variance filter dropped every feature"));
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkPair {
    /// Index into [`PairSet::vectors`].
    pub left: usize,
    pub right: usize,
    pub same_user: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub cohort_id: String,
    pub config: Option<FeatureConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    /// Daily vectors that pairs refer to.
    pub vectors: Vec<FeatureVector>,
    pub pairs: Vec<LinkPair>,
    pub provenance: Provenance,
}

impl PairSet {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.same_user).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.pairs.iter().map(|p| u8::from(p.same_user)).collect()
    }

    pub fn sides(&self, pair: &LinkPair) -> (&FeatureVector, &FeatureVector) {
        (&self.vectors[pair.left], &self.vectors[pair.right])
    }
}

/// Daily feature vectors for every user, then pairs from them.
pub fn build_pairs(cohort: &Cohort, config: &FeatureConfig, seed: u64) -> Result<PairSet> {
    if config.scope != Scope::Day {
        return Err(Error::invalid("linkage pairs are built from daily vectors"));
    }
    let raw = FeatureConfig {
        normalization: Normalization::None,
        ..config.clone()
    };
    let per_user: Vec<Vec<FeatureVector>> = cohort
        .records
        .par_iter()
        .map(|r| extract_user(r, &raw, cohort.stats.max_steps))
        .collect::<Result<_>>()?;
    let mut set = build_pairs_from_vectors(per_user.into_iter().flatten().collect(), seed)?;
    set.provenance.cohort_id = cohort_id(cohort);
    set.provenance.config = Some(config.clone());
    Ok(set)
}

/// Short stable fingerprint of the cohort's user ids and size.
pub fn cohort_id(cohort: &Cohort) -> String {
    // FNV-1a over the ids; identifies a cohort in provenance, not a security hash
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for r in &cohort.records {
        for b in r.user_id().bytes().chain(std::iter::once(0)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{}users-{h:016x}", cohort.len())
}

/// All within-user pairs of distinct days as positives and the same number
/// of distinct, unordered cross-user pairs (seeded) as negatives.
pub fn build_pairs_from_vectors(vectors: Vec<FeatureVector>, seed: u64) -> Result<PairSet> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, v) in vectors.iter().enumerate() {
        by_user.entry(v.owner.as_str()).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for idx in by_user.values() {
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                if vectors[i].day != vectors[j].day {
                    pairs.push(LinkPair {
                        left: i,
                        right: j,
                        same_user: true,
                    });
                }
            }
        }
    }
    let n_pos = pairs.len();
    if by_user.len() < 2 {
        return Err(Error::invalid(format!(
            "negative pairs need at least 2 users, got {} ({n_pos} positives)",
            by_user.len()
        )));
    }
    let n = vectors.len() as u128;
    let same: u128 = by_user.values().map(|v| (v.len() as u128).pow(2)).sum();
    let available = (n * n - same) / 2;
    if (n_pos as u128) > available {
        return Err(Error::invalid(format!(
            "{n_pos} negatives requested but only {available} cross-user pairs exist"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n_pos * 2);
    let total = vectors.len();
    while pairs.len() < 2 * n_pos {
        let a = rng.random_range(0..total);
        let b = rng.random_range(0..total);
        if vectors[a].owner == vectors[b].owner {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            pairs.push(LinkPair {
                left: key.0,
                right: key.1,
                same_user: false,
            });
        }
    }
    Ok(PairSet {
        vectors,
        pairs,
        provenance: Provenance {
            seed,
            cohort_id: String::new(),
            config: None,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `1 - cos(a, b)`; 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (na * nb)
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Cosine => cosine_distance(a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub auc: f64,
    /// Same-user score per evaluated pair, in the order given.
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Transformed copy of every vector referenced by `pairs`.
fn transformed(set: &PairSet, pairs: &[usize], prep: Option<&Preprocessor>) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for &p in pairs {
        let pair = &set.pairs[p];
        for i in [pair.left, pair.right] {
            if let std::collections::btree_map::Entry::Vacant(e) = out.entry(i) {
                let v = &set.vectors[i].values;
                e.insert(match prep {
                    Some(pr) => pr.transform(v)?,
                    None => v.clone(),
                });
            }
        }
    }
    Ok(out)
}

fn train_vectors<'a>(set: &'a PairSet, pairs: &[usize]) -> Vec<&'a [f64]> {
    let mut idx: Vec<usize> = pairs
        .iter()
        .flat_map(|&p| [set.pairs[p].left, set.pairs[p].right])
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter().map(|i| set.vectors[i].values.as_slice()).collect()
}

/// Scores each pair by its negated distance and reports the threshold-free AUC.
pub fn similarity_attack(
    set: &PairSet,
    pairs: &[usize],
    metric: Metric,
    prep: Option<&Preprocessor>,
) -> Result<(Vec<f64>, AttackOutcome)> {
    let vecs = transformed(set, pairs, prep)?;
    let mut distances = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for &p in pairs {
        let pair = &set.pairs[p];
        let (a, b) = (&vecs[&pair.left], &vecs[&pair.right]);
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        distances.push(metric.distance(a, b));
        labels.push(u8::from(pair.same_user));
    }
    let scores: Vec<f64> = distances.iter().map(|d| -d).collect();
    let auc = eval::auc(&eval::scored(&scores, &labels))?;
    Ok((distances, AttackOutcome { auc, scores, labels }))
}

fn l1_features(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()
}

fn fit_prep(set: &PairSet, train: &[usize], normalization: Normalization) -> Result<Preprocessor> {
    Preprocessor::fit(&train_vectors(set, train), normalization, Some(VARIANCE_THRESHOLD))
}

/// Random forest over `|left - right|` after a variance filter fitted on train.
pub fn rf_distance_attack(
    set: &PairSet,
    train: &[usize],
    test: &[usize],
    spec: &ModelSpec,
    normalization: Normalization,
) -> Result<AttackOutcome> {
    if spec.kind != ModelKind::RandomForest {
        return Err(Error::invalid("rf_distance_attack needs a random_forest spec"));
    }
    let prep = fit_prep(set, train, normalization)?;
    let features = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        let vecs = transformed(set, idx, Some(&prep))?;
        Ok(idx
            .iter()
            .map(|&p| {
                let pair = &set.pairs[p];
                (l1_features(&vecs[&pair.left], &vecs[&pair.right]), u8::from(pair.same_user))
            })
            .unzip())
    };
    let (xs, ys) = features(train)?;
    let model = learners::fit(spec, &xs, &ys)?;
    let (tx, labels) = features(test)?;
    let scores = tx.iter().map(|x| model.predict_score(x)).collect::<Result<Vec<_>>>()?;
    let auc = eval::auc(&eval::scored(&scores, &labels))?;
    Ok(AttackOutcome { auc, scores, labels })
}

/// Dense Siamese network trained on the train pairs, scored on the test pairs.
pub fn siamese_attack(
    set: &PairSet,
    train: &[usize],
    test: &[usize],
    spec: &ModelSpec,
    normalization: Normalization,
) -> Result<AttackOutcome> {
    if spec.kind != ModelKind::SiameseDense {
        return Err(Error::invalid("siamese_attack needs a siamese_dense spec"));
    }
    let prep = fit_prep(set, train, normalization)?;
    let train_vecs = transformed(set, train, Some(&prep))?;
    let left: Vec<&[f64]> = train.iter().map(|&p| train_vecs[&set.pairs[p].left].as_slice()).collect();
    let right: Vec<&[f64]> = train.iter().map(|&p| train_vecs[&set.pairs[p].right].as_slice()).collect();
    let ys: Vec<u8> = train.iter().map(|&p| u8::from(set.pairs[p].same_user)).collect();
    let model = learners::fit_siamese(spec, &left, &right, &ys)?.with_preprocessing(prep);

    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for &p in test {
        let (a, b) = set.sides(&set.pairs[p]);
        scores.push(model.siamese_forward(&a.values, &b.values)?);
        labels.push(u8::from(set.pairs[p].same_user));
    }
    let auc = eval::auc(&eval::scored(&scores, &labels))?;
    Ok(AttackOutcome { auc, scores, labels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    Euclidean,
    Cosine,
    RfStandard,
    DenseSiamese,
}

/// Attack names kept in the registry without an implementation.
pub const UNSUPPORTED_ATTACKS: [&str; 4] = ["cnn_siamese", "lstm_siamese", "bilstm_siamese", "attention_siamese"];

impl Attack {
    pub const ALL: [Attack; 4] = [Attack::Euclidean, Attack::Cosine, Attack::RfStandard, Attack::DenseSiamese];

    pub fn as_str(self) -> &'static str {
        match self {
            Attack::Euclidean => "euclidean",
            Attack::Cosine => "cosine",
            Attack::RfStandard => "rf_standard",
            Attack::DenseSiamese => "dense_siamese",
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(a) = Attack::ALL.into_iter().find(|a| a.as_str() == s) {
            return Ok(a);
        }
        if UNSUPPORTED_ATTACKS.contains(&s) {
            return Err(Error::NotImplemented(format!("attack {s:?}")));
        }
        Err(Error::invalid(format!("unknown attack {s:?}")))
    }
}

/// Runs one attack on one train/test split of `set`.
pub fn run_attack(
    set: &PairSet,
    train: &[usize],
    test: &[usize],
    attack: Attack,
    normalization: Normalization,
    model: &ModelSpec,
) -> Result<AttackOutcome> {
    match attack {
        Attack::Euclidean | Attack::Cosine => {
            let metric = if attack == Attack::Euclidean {
                Metric::Euclidean
            } else {
                Metric::Cosine
            };
            let prep = fit_prep(set, train, normalization)?;
            Ok(similarity_attack(set, test, metric, Some(&prep))?.1)
        }
        Attack::RfStandard => {
            let spec = ModelSpec {
                kind: ModelKind::RandomForest,
                ..model.clone()
            };
            rf_distance_attack(set, train, test, &spec, normalization)
        }
        Attack::DenseSiamese => {
            let spec = ModelSpec {
                kind: ModelKind::SiameseDense,
                ..model.clone()
            };
            siamese_attack(set, train, test, &spec, normalization)
        }
    }
}

/// Stratified pair-level folds: positives and negatives spread evenly.
pub fn pair_folds(set: &PairSet, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    eval::cross_validate::<u8>(&set.labels(), k, None, seed)
}

/// `(train, test)` pair indices for every round. `cv_folds < 2` gives a
/// single stratified 80/20 split.
pub fn pair_rounds(set: &PairSet, cv_folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let k = if cv_folds < 2 { 5 } else { cv_folds };
    let folds = pair_folds(set, k, seed)?;
    let rounds = if cv_folds < 2 { 1 } else { k };
    Ok((0..rounds)
        .map(|i| {
            let train = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect::<Vec<_>>();
            let mut train = train;
            train.sort_unstable();
            (train, folds[i].clone())
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkTask {
    pub features: Vec<FeatureConfig>,
    pub attacks: Vec<Attack>,
    /// Hyperparameters for the trained attacks; `kind` is set per attack.
    pub model: ModelSpec,
    pub cv_folds: usize,
    pub seed: u64,
    /// Shuffle pair labels before evaluation (null-model check).
    #[serde(default)]
    pub permute_labels: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub config: String,
    pub attack: Attack,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Pairs used for training, summed over evaluated folds.
    pub n_train: usize,
    /// Pairs scored, summed over evaluated folds.
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_folds: Vec<SkippedFold>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub fold: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub config: String,
    pub attack: Attack,
    pub fold: usize,
    pub left_user: String,
    pub left_day: Option<u8>,
    pub right_user: String,
    pub right_day: Option<u8>,
    pub label: u8,
    pub score: f64,
}

pub fn write_pair_scores<W: Write>(out: W, scores: &[PairScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config", "attack", "fold", "left_user", "left_day", "right_user", "right_day", "label", "score",
    ])?;
    for s in scores {
        let day = |d: Option<u8>| d.map(|d| d.to_string()).unwrap_or_default();
        w.write_record([
            s.config.clone(),
            s.attack.to_string(),
            s.fold.to_string(),
            s.left_user.clone(),
            day(s.left_day),
            s.right_user.clone(),
            day(s.right_day),
            s.label.to_string(),
            s.score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<pair score output>", e))?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub results: Vec<LinkResult>,
    pub scores: Vec<PairScore>,
}

/// Every (feature config, attack, fold) cell of `task`, executed on the
/// current rayon pool. Output order follows the task, not completion order.
pub fn run_link(task: &LinkTask, cohort: &Cohort, keep_scores: bool) -> Result<LinkReport> {
    let mut report = LinkReport::default();
    for config in &task.features {
        let mut set = build_pairs(cohort, config, task.seed)?;
        if task.permute_labels {
            let mut labels: Vec<bool> = set.pairs.iter().map(|p| p.same_user).collect();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(task.seed ^ 0x9e37_79b9));
            set.pairs.iter_mut().zip(labels).for_each(|(p, l)| p.same_user = l);
        }
        let rounds = pair_rounds(&set, task.cv_folds, task.seed)?;
        let jobs: Vec<(usize, usize)> = (0..task.attacks.len())
            .flat_map(|a| (0..rounds.len()).map(move |r| (a, r)))
            .collect();
        let outcomes: Vec<Result<AttackOutcome>> = jobs
            .par_iter()
            .map(|&(a, r)| {
                let (train, test) = &rounds[r];
                run_attack(&set, train, test, task.attacks[a], config.normalization, &task.model)
            })
            .collect();
        let label = config.label();
        for (a, &attack) in task.attacks.iter().enumerate() {
            let mut fold_aucs = Vec::new();
            let mut skipped = Vec::new();
            let (mut n_train, mut n_test) = (0, 0);
            for (r, (train, test)) in rounds.iter().enumerate() {
                match &outcomes[a * rounds.len() + r] {
                    Ok(o) => {
                        fold_aucs.push(o.auc);
                        n_train += train.len();
                        n_test += test.len();
                        if keep_scores {
                            for (&p, (&score, &l)) in test.iter().zip(o.scores.iter().zip(&o.labels)) {
                                let (x, y) = set.sides(&set.pairs[p]);
                                report.scores.push(PairScore {
                                    config: label.clone(),
                                    attack,
                                    fold: r,
                                    left_user: x.owner.clone(),
                                    left_day: x.day,
                                    right_user: y.owner.clone(),
                                    right_day: y.day,
                                    label: l,
                                    score,
                                });
                            }
                        }
                    }
                    Err(e @ (Error::SingleClass | Error::InvalidInput(_))) => skipped.push(SkippedFold {
                        fold: r,
                        reason: e.to_string(),
                    }),
                    Err(e) => return Err(Error::invalid(format!("{label} / {attack}: {e}"))),
                }
            }
            let (mean_auc, std_auc) = eval::mean_std(&fold_aucs);
            report.results.push(LinkResult {
                config: label.clone(),
                attack,
                fold_aucs,
                mean_auc,
                std_auc,
                n_train,
                n_test,
                skipped_folds: skipped,
            });
        }
    }
    Ok(report)
}

/// Scores and labels of `outcome` as ROC input.
pub fn scored_samples(outcome: &AttackOutcome) -> Vec<ScoredSample> {
    eval::scored(&outcome.scores, &outcome.labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn daily(owner: &str, days: u8, f: impl Fn(u8) -> Vec<f64>) -> Vec<FeatureVector> {
        (0..days)
            .map(|d| FeatureVector {
                values: f(d),
                owner: owner.into(),
                day: Some(d),
                action: None,
            })
            .collect()
    }

    #[test]
    fn single_user_cannot_form_negatives() {
        let v = daily("a", 7, |d| vec![f64::from(d)]);
        let err = build_pairs_from_vectors(v, 1).unwrap_err().to_string();
        assert!(err.contains("21 positives"), "{err}");
    }

    #[test]
    fn two_users_pairs_are_unique() {
        let mut v = daily("a", 7, |d| vec![f64::from(d)]);
        v.extend(daily("b", 7, |d| vec![10.0 + f64::from(d)]));
        let set = build_pairs_from_vectors(v, 5).unwrap();
        assert_eq!(set.positives(), 42);
        assert_eq!(set.negatives(), 42);
        let mut keys = HashSet::new();
        for p in &set.pairs {
            let (l, r) = set.sides(p);
            assert!(keys.insert((p.left.min(p.right), p.left.max(p.right))));
            if p.same_user {
                assert_eq!(l.owner, r.owner);
                assert_ne!(l.day, r.day);
            } else {
                assert_ne!(l.owner, r.owner);
            }
        }
    }

    #[test]
    fn variance_boundaries() {
        let train = vec![vec![1.0, 0.0, 5.0], vec![1.0, 1.0, 5.0], vec![1.0, 0.5, 5.0]];
        let m = variance_filter(&train).unwrap();
        assert_eq!(m.keep, vec![false, true, false]);
        assert_eq!(m.apply(&[9.0, 8.0, 7.0]).unwrap(), vec![8.0]);
        assert!(variance_filter(&[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(variance_filter(&[vec![1.0]]).is_err());
    }

    #[test]
    fn variance_exactly_threshold_is_kept() {
        let col = exact_variance_column();
        let rows: Vec<Vec<f64>> = col.iter().map(|&x| vec![x, x.next_down()]).collect();
        let m = variance_filter(&rows).unwrap();
        assert!(m.keep[0]);
        // dyadic case: {0, 1} has variance exactly 0.25
        let m = variance_filter_with_threshold(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.25).unwrap();
        assert_eq!(m.keep, vec![true, false]);
    }

    /// A column of one zero and two equal values `x` whose computed
    /// population variance is exactly 1e-3, found by stepping `x` one ulp at
    /// a time around the real solution `x = sqrt(4.5e-3)`.
    fn exact_variance_column() -> Vec<f64> {
        let mut x = 4.5e-3f64.sqrt();
        for _ in 0..64 {
            x = x.next_down();
        }
        for _ in 0..128 {
            let col = vec![0.0, x, x];
            let mean = col.iter().sum::<f64>() / 3.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            if var == VARIANCE_THRESHOLD {
                return col;
            }
            x = x.next_up();
        }
        panic!("no column with exact variance found");
    }

    #[test]
    fn cosine_conventions() {
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]), 1.0);
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 0.5, 1.0];
        let scaled: Vec<f64> = a.iter().map(|x| x * 7.5).collect();
        assert!((cosine_distance(&a, &b) - cosine_distance(&scaled, &b)).abs() < 1e-15);
        assert_eq!(euclidean(&a, &a), 0.0);
    }

    #[test]
    fn attack_registry() {
        assert_eq!("dense_siamese".parse::<Attack>().unwrap(), Attack::DenseSiamese);
        assert!(matches!("lstm_siamese".parse::<Attack>(), Err(Error::NotImplemented(_))));
        assert!(matches!("nope".parse::<Attack>(), Err(Error::InvalidInput(_))));
    }
}
