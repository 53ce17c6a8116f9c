//! Attribute inference: predict gender, age class or education class from a
//! user's step data.
//!
//! Users, never individual vectors, are assigned to folds, so every daily
//! vector and every action of a user is either trained on or tested on.
//! Day and week vectors are scored one by one. Action scores are reduced to
//! one score per user by [`aggregate_actions`] before the AUC is taken.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Attribute, Cohort, UserRecord};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::{extract_user, FeatureConfig, Method, Normalization, Preprocessor, Scope, Stat};
use crate::learners::{self, ModelKind, ModelSpec};

/// Payload length raw action vectors are padded or truncated to.
pub const DEFAULT_RAW_ACTION_LEN: usize = 240;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Majority,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "majority" => Ok(Aggregation::Majority),
            _ => Err(Error::invalid(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub attribute: Attribute,
    pub features: Vec<FeatureConfig>,
    pub classifiers: Vec<ModelSpec>,
    /// Share of each class used for training when `cv_folds < 2`.
    pub split_fraction: f64,
    pub cv_folds: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub raw_action_len: usize,
    /// Shuffle user labels before splitting (null-model check).
    pub permute_labels: bool,
}

impl TaskSpec {
    pub fn new(attribute: Attribute, features: Vec<FeatureConfig>, classifiers: Vec<ModelSpec>) -> Self {
        TaskSpec {
            attribute,
            features,
            classifiers,
            split_fraction: 0.8,
            cv_folds: 5,
            seed: 0,
            aggregation: Aggregation::Mean,
            raw_action_len: DEFAULT_RAW_ACTION_LEN,
            permute_labels: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.classifiers.is_empty() {
            return Err(Error::invalid("task needs at least one feature config and one classifier"));
        }
        for f in &self.features {
            f.validate()?;
        }
        for c in &self.classifiers {
            c.validate()?;
            if !c.kind.is_classifier() {
                return Err(Error::invalid(format!("{} is not a classifier", c.kind)));
            }
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split_fraction must be in (0, 1)"));
        }
        if self.raw_action_len == 0 {
            return Err(Error::invalid("raw_action_len must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Fold 0 is the test set and fold 1 the training set; one round.
    Holdout,
    /// Every fold is the test set once.
    KFold,
}

/// Fold of every labelled user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub n_folds: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl SplitPlan {
    pub fn rounds(&self) -> usize {
        match self.kind {
            SplitKind::Holdout => 1,
            SplitKind::KFold => self.n_folds,
        }
    }

    pub fn is_test(&self, user_id: &str, round: usize) -> Option<bool> {
        self.assignment.get(user_id).map(|&f| f == round)
    }

    pub fn users_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(u, _)| u.as_str())
            .collect()
    }
}

/// Labelled users of `cohort` for `attribute`, sorted by id.
fn labelled_users(cohort: &Cohort, attribute: Attribute) -> Vec<(&UserRecord, u8)> {
    let mut users: Vec<(&UserRecord, u8)> = cohort
        .records
        .iter()
        .filter_map(|r| r.labels.binary(attribute).map(|y| (r, y)))
        .collect();
    users.sort_by(|a, b| a.0.user_id().cmp(b.0.user_id()));
    users
}

fn check_classes(labels: &[u8], attribute: Attribute, min: usize) -> Result<()> {
    for class in [0u8, 1] {
        let n = labels.iter().filter(|&&y| y == class).count();
        if n < min {
            return Err(Error::invalid(format!(
                "{attribute} class {class} has {n} users; at least {min} are needed"
            )));
        }
    }
    Ok(())
}

fn holdout(ids: &[String], labels: &[u8], attribute: Attribute, fraction: f64, seed: u64) -> Result<SplitPlan> {
    check_classes(labels, attribute, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for class in [0u8, 1] {
        let mut members: Vec<&String> = ids.iter().zip(labels).filter(|(_, &y)| y == class).map(|(u, _)| u).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        for (i, u) in members.into_iter().enumerate() {
            assignment.insert(u.clone(), usize::from(i < n_train));
        }
    }
    Ok(SplitPlan {
        kind: SplitKind::Holdout,
        n_folds: 2,
        assignment,
    })
}

fn kfold(ids: &[String], labels: &[u8], attribute: Attribute, k: usize, seed: u64) -> Result<SplitPlan> {
    check_classes(labels, attribute, k)?;
    let folds = eval::cross_validate(labels, k, Some(ids), seed)?;
    let mut assignment = BTreeMap::new();
    for (f, members) in folds.iter().enumerate() {
        for &i in members {
            assignment.insert(ids[i].clone(), f);
        }
    }
    Ok(SplitPlan {
        kind: SplitKind::KFold,
        n_folds: k,
        assignment,
    })
}

/// Stratified per-user train/test split: `round(fraction * n)` users of each
/// class train (at least one user on each side), the rest test.
pub fn make_split(cohort: &Cohort, attribute: Attribute, fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split fraction must be in (0, 1)"));
    }
    let users = labelled_users(cohort, attribute);
    let ids: Vec<String> = users.iter().map(|(r, _)| r.user_id().to_string()).collect();
    let labels: Vec<u8> = users.iter().map(|&(_, y)| y).collect();
    holdout(&ids, &labels, attribute, fraction, seed)
}

/// Stratified per-user k-fold assignment.
pub fn make_folds(cohort: &Cohort, attribute: Attribute, k: usize, seed: u64) -> Result<SplitPlan> {
    let users = labelled_users(cohort, attribute);
    let ids: Vec<String> = users.iter().map(|(r, _)| r.user_id().to_string()).collect();
    let labels: Vec<u8> = users.iter().map(|&(_, y)| y).collect();
    kfold(&ids, &labels, attribute, k, seed)
}

/// Reduces one user's action scores to a single score.
///
/// Actions are ranked by sureness `|s - 0.5|` (equal sureness: higher score
/// first) and the top `ceil(n/2)` are kept. `Mean` averages them; `Majority`
/// returns the fraction of kept scores above 0.5, counting 0.5 as half a vote.
pub fn aggregate_actions(scores: &[f64], method: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("no action scores to aggregate"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("action score {s} is outside [0, 1]")));
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| {
        let (sa, sb) = ((a - 0.5).abs(), (b - 0.5).abs());
        sb.total_cmp(&sa).then(b.total_cmp(a))
    });
    let kept = &ranked[..scores.len().div_ceil(2)];
    let n = kept.len() as f64;
    Ok(match method {
        Aggregation::Mean => kept.iter().sum::<f64>() / n,
        Aggregation::Majority => {
            kept.iter()
                .map(|&s| if s > 0.5 { 1.0 } else if s == 0.5 { 0.5 } else { 0.0 })
                .sum::<f64>()
                / n
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub fold: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub attribute: Attribute,
    pub config: String,
    pub classifier: ModelKind,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Training users, summed over evaluated folds.
    pub n_train: usize,
    /// Test users, summed over evaluated folds.
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_folds: Vec<SkippedFold>,
    /// Test users without any action, left out of the action-scope AUC.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_users: Vec<String>,
}

/// Score of one evaluated unit: a daily or weekly vector, or a user's
/// aggregated actions (`day` empty).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub attribute: Attribute,
    pub config: String,
    pub classifier: ModelKind,
    pub fold: usize,
    pub user_id: String,
    pub day: Option<u8>,
    pub label: u8,
    pub score: f64,
}

pub fn write_unit_scores<W: std::io::Write>(out: W, scores: &[UnitScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["attribute", "config", "classifier", "fold", "user_id", "day", "label", "score"])?;
    for s in scores {
        w.write_record([
            s.attribute.to_string(),
            s.config.clone(),
            s.classifier.to_string(),
            s.fold.to_string(),
            s.user_id.clone(),
            s.day.map(|d| d.to_string()).unwrap_or_default(),
            s.label.to_string(),
            s.score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<score output>", e))?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub results: Vec<TaskResult>,
    pub scores: Vec<UnitScore>,
}

struct UserVectors {
    user_id: String,
    label: u8,
    vectors: Vec<Vec<f64>>,
    days: Vec<Option<u8>>,
}

fn user_vectors(
    record: &UserRecord,
    label: u8,
    config: &FeatureConfig,
    max_steps: u32,
    raw_action_len: usize,
) -> Result<UserVectors> {
    let fv = extract_user(record, config, max_steps)?;
    let pad = config.scope == Scope::Actions && config.method == Method::Raw;
    let days = fv.iter().map(|v| v.day).collect();
    let vectors = fv
        .into_iter()
        .map(|v| {
            let mut values = v.values;
            if pad {
                values.resize(2 + raw_action_len, 0.0);
            }
            values
        })
        .collect();
    Ok(UserVectors {
        user_id: record.user_id().to_string(),
        label,
        vectors,
        days,
    })
}

struct RoundOutcome {
    auc: f64,
    units: Vec<(usize, Option<u8>, f64)>,
    n_train: usize,
    n_test: usize,
    users_without_actions: Vec<String>,
}

fn train_and_score(
    users: &[UserVectors],
    train_users: &[usize],
    test_users: &[usize],
    config: &FeatureConfig,
    spec: &ModelSpec,
    aggregation: Aggregation,
) -> Result<RoundOutcome> {
    let mut xs: Vec<&[f64]> = Vec::new();
    let mut ys = Vec::new();
    for &u in train_users {
        for v in &users[u].vectors {
            xs.push(v);
            ys.push(users[u].label);
        }
    }
    if xs.is_empty() {
        return Err(Error::invalid("no training vectors"));
    }
    let prep = Preprocessor::fit(&xs, config.normalization, None)?;
    let mut train_x: Vec<Vec<f64>> = xs.iter().map(|x| prep.transform(x)).collect::<Result<_>>()?;
    let encoder = if config.autoencode {
        let ae_spec = ModelSpec {
            kind: ModelKind::Autoencoder,
            ..spec.clone()
        };
        let ae = learners::fit(&ae_spec, &train_x, &[])?;
        train_x = train_x.iter().map(|x| ae.encode(x)).collect::<Result<_>>()?;
        Some(ae)
    } else {
        None
    };
    let model = learners::fit(spec, &train_x, &ys)?;
    let score = |x: &[f64]| -> Result<f64> {
        let mut v = prep.transform(x)?;
        if let Some(ae) = &encoder {
            v = ae.encode(&v)?;
        }
        model.predict_score(&v)
    };
    Ok(score_test(users, test_users, config.scope, aggregation, &score, train_users.len())?)
}

fn score_test(
    users: &[UserVectors],
    test_users: &[usize],
    scope: Scope,
    aggregation: Aggregation,
    score: &dyn Fn(&[f64]) -> Result<f64>,
    n_train: usize,
) -> Result<RoundOutcome> {
    let mut units = Vec::new();
    let mut missing = Vec::new();
    for &u in test_users {
        let uv = &users[u];
        if scope == Scope::Actions {
            if uv.vectors.is_empty() {
                missing.push(uv.user_id.clone());
                continue;
            }
            let s: Vec<f64> = uv.vectors.iter().map(|x| score(x)).collect::<Result<_>>()?;
            units.push((u, None, aggregate_actions(&s, aggregation)?));
        } else {
            for (x, &day) in uv.vectors.iter().zip(&uv.days) {
                units.push((u, day, score(x)?));
            }
        }
    }
    let samples: Vec<eval::ScoredSample> = units
        .iter()
        .map(|&(u, _, s)| eval::ScoredSample::new(s, users[u].label))
        .collect();
    let auc = eval::auc(&samples)?;
    Ok(RoundOutcome {
        auc,
        units,
        n_train,
        n_test: test_users.len() - missing.len(),
        users_without_actions: missing,
    })
}

/// Runs every (feature config, classifier, fold) cell of `task` on the
/// current rayon pool. Results follow task order; preprocessing is fitted on
/// training users only.
pub fn run_task(task: &TaskSpec, cohort: &Cohort, keep_scores: bool) -> Result<InferReport> {
    task.validate()?;
    let users = labelled_users(cohort, task.attribute);
    let ids: Vec<String> = users.iter().map(|(r, _)| r.user_id().to_string()).collect();
    let mut labels: Vec<u8> = users.iter().map(|&(_, y)| y).collect();
    if task.permute_labels {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(task.seed ^ 0x5bd1_e995));
    }
    let plan = if task.cv_folds < 2 {
        holdout(&ids, &labels, task.attribute, task.split_fraction, task.seed)?
    } else {
        kfold(&ids, &labels, task.attribute, task.cv_folds, task.seed)?
    };
    let rounds: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.rounds())
        .map(|r| (0..ids.len()).partition(|&i| plan.assignment[&ids[i]] != r))
        .collect();
    let max_steps = cohort.stats.max_steps;

    let mut report = InferReport::default();
    for config in &task.features {
        let vectors: Vec<UserVectors> = users
            .par_iter()
            .zip(&labels)
            .map(|(&(r, _), &y)| user_vectors(r, y, config, max_steps, task.raw_action_len))
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..task.classifiers.len())
            .flat_map(|c| (0..rounds.len()).map(move |r| (c, r)))
            .collect();
        let outcomes: Vec<Result<RoundOutcome>> = jobs
            .par_iter()
            .map(|&(c, r)| {
                let spec = task.classifiers[c]
                    .clone()
                    .with_seed(task.classifiers[c].train.seed.wrapping_add(task.seed).wrapping_add(r as u64));
                let (train, test) = &rounds[r];
                train_and_score(&vectors, train, test, config, &spec, task.aggregation)
            })
            .collect();

        let label = config.label();
        for (c, spec) in task.classifiers.iter().enumerate() {
            let mut fold_aucs = Vec::new();
            let mut skipped_folds = Vec::new();
            let mut skipped_users = Vec::new();
            let (mut n_train, mut n_test) = (0, 0);
            for r in 0..rounds.len() {
                match &outcomes[c * rounds.len() + r] {
                    Ok(o) => {
                        fold_aucs.push(o.auc);
                        n_train += o.n_train;
                        n_test += o.n_test;
                        skipped_users.extend(o.users_without_actions.iter().cloned());
                        if keep_scores {
                            report.scores.extend(o.units.iter().map(|&(u, day, score)| UnitScore {
                                attribute: task.attribute,
                                config: label.clone(),
                                classifier: spec.kind,
                                fold: r,
                                user_id: vectors[u].user_id.clone(),
                                day,
                                label: vectors[u].label,
                                score,
                            }));
                        }
                    }
                    Err(e @ (Error::SingleClass | Error::InvalidInput(_))) => skipped_folds.push(SkippedFold {
                        fold: r,
                        reason: e.to_string(),
                    }),
                    Err(e) => return Err(Error::invalid(format!("{label} / {}: {e}", spec.kind))),
                }
            }
            skipped_users.sort();
            let (mean_auc, std_auc) = eval::mean_std(&fold_aucs);
            report.results.push(TaskResult {
                attribute: task.attribute,
                config: label.clone(),
                classifier: spec.kind,
                fold_aucs,
                mean_auc,
                std_auc,
                n_train,
                n_test,
                skipped_folds,
                skipped_users,
            });
        }
    }
    Ok(report)
}

/// Feature configs shipped by name. Day scope unless the name says otherwise.
pub const PRESET_NAMES: [&str; 10] = [
    "stat_max_median_w720",
    "stat_max_w720",
    "stat_max_w240_fw",
    "stat_all_w720",
    "dist_b2_w240",
    "dist_b2_w720",
    "week_stat_max_median_w720",
    "actions_raw",
    "actions_stat",
    "actions_dist_b2",
];

pub fn preset(name: &str) -> Option<FeatureConfig> {
    let day = Scope::Day;
    Some(match name {
        "stat_max_median_w720" => FeatureConfig::statistical(day, 720, &[Stat::Max, Stat::Median]),
        "stat_max_w720" => FeatureConfig::statistical(day, 720, &[Stat::Max]),
        "stat_max_w240_fw" => {
            FeatureConfig::statistical(day, 240, &[Stat::Max]).with_normalization(Normalization::FeatureWise)
        }
        "stat_all_w720" => FeatureConfig::statistical(day, 720, &Stat::ORDER),
        "dist_b2_w240" => FeatureConfig::distributional(day, 240, 2),
        "dist_b2_w720" => FeatureConfig::distributional(day, 720, 2),
        "week_stat_max_median_w720" => FeatureConfig::statistical(Scope::Week, 720, &[Stat::Max, Stat::Median]),
        "actions_raw" => FeatureConfig::raw(Scope::Actions).with_normalization(Normalization::VectorWise),
        "actions_stat" => FeatureConfig {
            window: None,
            ..FeatureConfig::statistical(Scope::Actions, 1, &Stat::ORDER)
        },
        "actions_dist_b2" => FeatureConfig {
            window: None,
            ..FeatureConfig::distributional(Scope::Actions, 1, 2)
        },
        _ => return None,
    })
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} inference: {} configs x {} classifiers, {} folds",
            self.attribute,
            self.features.len(),
            self.classifiers.len(),
            self.cv_folds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_keeps_surest_half() {
        let s = [0.9, 0.8, 0.55, 0.45];
        assert!((aggregate_actions(&s, Aggregation::Mean).unwrap() - 0.85).abs() < 1e-12);
        assert_eq!(aggregate_actions(&s, Aggregation::Majority).unwrap(), 1.0);
    }

    #[test]
    fn aggregation_small_cases() {
        for m in [Aggregation::Mean, Aggregation::Majority] {
            assert!(aggregate_actions(&[], m).is_err());
        }
        assert_eq!(aggregate_actions(&[0.3], Aggregation::Mean).unwrap(), 0.3);
        assert_eq!(aggregate_actions(&[0.5, 0.5, 0.5], Aggregation::Mean).unwrap(), 0.5);
        assert_eq!(aggregate_actions(&[0.5, 0.5], Aggregation::Majority).unwrap(), 0.5);
        // odd n keeps the larger half
        assert!((aggregate_actions(&[0.1, 0.2, 0.6], Aggregation::Mean).unwrap() - 0.15).abs() < 1e-12);
        assert!(aggregate_actions(&[1.2], Aggregation::Mean).is_err());
    }

    #[test]
    fn equal_sureness_prefers_higher_score() {
        assert_eq!(aggregate_actions(&[0.4, 0.6], Aggregation::Mean).unwrap(), 0.6);
        assert_eq!(aggregate_actions(&[0.6, 0.4], Aggregation::Mean).unwrap(), 0.6);
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESET_NAMES {
            preset(name).unwrap().validate().unwrap();
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn holdout_counts() {
        let ids: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let plan = holdout(&ids, &labels, Attribute::Age, 0.8, 3).unwrap();
        assert_eq!(plan.users_in(1).len(), 8);
        assert_eq!(plan.users_in(0).len(), 2);
        assert!(holdout(&ids[..3], &labels[..3], Attribute::Age, 0.8, 3).is_err());
    }
}
