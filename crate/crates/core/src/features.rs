//! Feature extraction from raw step counts: windowed statistics, windowed
//! step-count histograms, action segmentation, and the three normalizations.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{UserRecord, DAYS_PER_WEEK};
use crate::error::{Error, Result};

/// Zero runs at least this long separate two actions (2 minutes of rest).
pub const REST_PERIODS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Sum,
    Max,
    Mean,
    Median,
    Std,
}

impl Stat {
    /// Output order of statistics within a window.
    pub const ORDER: [Stat; 5] = [Stat::Sum, Stat::Max, Stat::Mean, Stat::Median, Stat::Std];

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Sum => "sum",
            Stat::Max => "max",
            Stat::Mean => "mean",
            Stat::Median => "median",
            Stat::Std => "std",
        }
    }
}

impl FromStr for Stat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stat::ORDER
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown statistic {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Week,
    #[default]
    Day,
    Actions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Raw,
    Statistical,
    Distributional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    FeatureWise,
    VectorWise,
    ProbDist,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::FeatureWise => "feature_wise",
            Normalization::VectorWise => "vector_wise",
            Normalization::ProbDist => "prob_dist",
        }
    }
}

/// One cell of the feature grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default)]
    pub scope: Scope,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub stats: Vec<Stat>,
    /// Window length in periods. Ignored for raw and for actions.
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub bucket: Option<u32>,
    #[serde(default)]
    pub normalization: Normalization,
    /// Replace the vector by a dense autoencoder bottleneck fitted on training data.
    #[serde(default)]
    pub autoencode: bool,
}

impl FeatureConfig {
    pub fn raw(scope: Scope) -> Self {
        FeatureConfig {
            scope,
            method: Method::Raw,
            stats: Vec::new(),
            window: None,
            bucket: None,
            normalization: Normalization::None,
            autoencode: false,
        }
    }

    pub fn statistical(scope: Scope, window: usize, stats: &[Stat]) -> Self {
        FeatureConfig {
            method: Method::Statistical,
            stats: stats.to_vec(),
            window: Some(window),
            ..FeatureConfig::raw(scope)
        }
    }

    pub fn distributional(scope: Scope, window: usize, bucket: u32) -> Self {
        FeatureConfig {
            method: Method::Distributional,
            window: Some(window),
            bucket: Some(bucket),
            ..FeatureConfig::raw(scope)
        }
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scope == Scope::Actions {
            if self.window.is_some() {
                return Err(Error::invalid(
                    "actions scope uses the action length as window; remove `window`",
                ));
            }
            if self.method == Method::Distributional && self.bucket.unwrap_or(0) < 1 {
                return Err(Error::invalid("distributional features need bucket >= 1"));
            }
            return Ok(());
        }
        match self.method {
            Method::Raw => Ok(()),
            Method::Statistical => {
                if self.stats.is_empty() {
                    return Err(Error::invalid("statistical features need at least one stat"));
                }
                if self.window.unwrap_or(0) < 1 {
                    return Err(Error::invalid("statistical features need window >= 1"));
                }
                Ok(())
            }
            Method::Distributional => {
                if self.window.unwrap_or(0) < 1 {
                    return Err(Error::invalid("distributional features need window >= 1"));
                }
                if self.bucket.unwrap_or(0) < 1 {
                    return Err(Error::invalid("distributional features need bucket >= 1"));
                }
                Ok(())
            }
        }
    }

    /// Statistics in canonical output order, deduplicated.
    pub fn ordered_stats(&self) -> Vec<Stat> {
        Stat::ORDER
            .into_iter()
            .filter(|s| self.stats.contains(s))
            .collect()
    }

    /// Short stable name, e.g. `day-stat-max+median-w720-none`.
    pub fn label(&self) -> String {
        let scope = match self.scope {
            Scope::Week => "week",
            Scope::Day => "day",
            Scope::Actions => "actions",
        };
        let body = match self.method {
            Method::Raw => "raw".to_string(),
            Method::Statistical => {
                let names: Vec<&str> = self.ordered_stats().iter().map(|s| s.as_str()).collect();
                match self.window {
                    Some(w) => format!("stat-{}-w{w}", names.join("+")),
                    None => format!("stat-{}", names.join("+")),
                }
            }
            Method::Distributional => match self.window {
                Some(w) => format!("dist-b{}-w{w}", self.bucket.unwrap_or(0)),
                None => format!("dist-b{}", self.bucket.unwrap_or(0)),
            },
        };
        let ae = if self.autoencode { "-ae" } else { "" };
        format!("{scope}-{body}-{}{ae}", self.normalization.as_str())
    }
}

impl fmt::Display for FeatureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A feature vector and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub owner: String,
    pub day: Option<u8>,
    /// `(start_period, length)` for action vectors.
    pub action: Option<(usize, usize)>,
}

/// Contiguous walking episode inside one week of data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub start_period: usize,
    pub payload: Vec<u32>,
}

impl Action {
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

fn window_stat(window: &[u32], stat: Stat, scratch: &mut Vec<u32>) -> f64 {
    let n = window.len() as f64;
    let sum: f64 = window.iter().map(|&v| f64::from(v)).sum();
    match stat {
        Stat::Sum => sum,
        Stat::Max => f64::from(window.iter().copied().max().unwrap_or(0)),
        Stat::Mean => sum / n,
        Stat::Median => {
            scratch.clear();
            scratch.extend_from_slice(window);
            scratch.sort_unstable();
            let m = scratch.len();
            if m % 2 == 1 {
                f64::from(scratch[m / 2])
            } else {
                (f64::from(scratch[m / 2 - 1]) + f64::from(scratch[m / 2])) / 2.0
            }
        }
        Stat::Std => {
            let mean = sum / n;
            let var = window
                .iter()
                .map(|&v| {
                    let d = f64::from(v) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            var.sqrt()
        }
    }
}

/// Splits `raw` into consecutive windows of `window` periods (the last may be
/// shorter) and emits the requested statistics of each, in canonical order.
///
/// Std is the population standard deviation; the median of an even-length
/// window is the mean of the two middle values.
pub fn extract_statistical(raw: &[u32], window: usize, stats: &[Stat]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot extract features from an empty sequence"));
    }
    if window == 0 {
        return Err(Error::invalid("window must be >= 1"));
    }
    let ordered: Vec<Stat> = Stat::ORDER.into_iter().filter(|s| stats.contains(s)).collect();
    if ordered.is_empty() {
        return Err(Error::invalid("at least one statistic is required"));
    }
    let mut out = Vec::with_capacity(ordered.len() * raw.len().div_ceil(window));
    let mut scratch = Vec::with_capacity(window);
    for chunk in raw.chunks(window) {
        for &s in &ordered {
            out.push(window_stat(chunk, s, &mut scratch));
        }
    }
    Ok(out)
}

/// Number of histogram buckets: the zero bucket plus `ceil(max_steps / b)`.
pub fn bucket_count(bucket: u32, max_steps: u32) -> usize {
    1 + max_steps.div_ceil(bucket) as usize
}

/// Per window, counts how many periods fall in each bucket
/// `{0}, [1, b], [b+1, 2b], ...` up to `max_steps`.
pub fn extract_distributional(
    raw: &[u32],
    window: usize,
    bucket: u32,
    max_steps: u32,
) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot extract features from an empty sequence"));
    }
    if window == 0 || bucket == 0 {
        return Err(Error::invalid("window and bucket must be >= 1"));
    }
    let n_buckets = bucket_count(bucket, max_steps);
    let mut out = vec![0.0; n_buckets * raw.len().div_ceil(window)];
    for (w, chunk) in raw.chunks(window).enumerate() {
        let hist = &mut out[w * n_buckets..(w + 1) * n_buckets];
        for &v in chunk {
            if v > max_steps {
                return Err(Error::StepAboveMax {
                    value: v,
                    max_steps,
                });
            }
            let idx = if v == 0 { 0 } else { ((v - 1) / bucket + 1) as usize };
            hist[idx] += 1.0;
        }
    }
    Ok(out)
}

/// Splits a week into actions: maximal stretches that contain no run of
/// `REST_PERIODS` or more zero periods, trimmed of edge zeros.
pub fn segment_actions(week: &[u32]) -> Vec<Action> {
    let mut actions = Vec::new();
    // (first nonzero, last nonzero) of the action being grown
    let mut current: Option<(usize, usize)> = None;
    for (i, &v) in week.iter().enumerate() {
        if v == 0 {
            continue;
        }
        current = match current {
            Some((start, last)) if i - last - 1 < REST_PERIODS => Some((start, i)),
            Some((start, last)) => {
                actions.push(Action {
                    start_period: start,
                    payload: week[start..=last].to_vec(),
                });
                Some((i, i))
            }
            None => Some((i, i)),
        };
    }
    if let Some((start, last)) = current {
        actions.push(Action {
            start_period: start,
            payload: week[start..=last].to_vec(),
        });
    }
    actions
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Raw,
    StatisticalAll,
    Distributional { bucket: u32, max_steps: u32 },
}

/// `[length, start_period]` followed by the payload, its full statistics,
/// or its histogram (window = action length).
pub fn action_features(action: &Action, mode: ActionMode) -> Result<Vec<f64>> {
    let mut out = vec![action.len() as f64, action.start_period as f64];
    match mode {
        ActionMode::Raw => out.extend(action.payload.iter().map(|&v| f64::from(v))),
        ActionMode::StatisticalAll => {
            out.extend(extract_statistical(&action.payload, action.len(), &Stat::ORDER)?)
        }
        ActionMode::Distributional { bucket, max_steps } => out.extend(extract_distributional(
            &action.payload,
            action.len(),
            bucket,
            max_steps,
        )?),
    }
    Ok(out)
}

fn transform(raw: &[u32], config: &FeatureConfig, max_steps: u32) -> Result<Vec<f64>> {
    match config.method {
        Method::Raw => Ok(raw.iter().map(|&v| f64::from(v)).collect()),
        Method::Statistical => extract_statistical(
            raw,
            config.window.unwrap_or(raw.len()),
            &config.stats,
        ),
        Method::Distributional => extract_distributional(
            raw,
            config.window.unwrap_or(raw.len()),
            config.bucket.unwrap_or(1),
            max_steps,
        ),
    }
}

/// Unnormalized feature vectors of one user for `config`: one for the week,
/// seven for days, or one per action.
pub fn extract_user(
    record: &UserRecord,
    config: &FeatureConfig,
    max_steps: u32,
) -> Result<Vec<FeatureVector>> {
    config.validate()?;
    let owner = record.user_id().to_string();
    let counts = record.series.counts();
    let out = match config.scope {
        Scope::Week => vec![FeatureVector {
            values: transform(counts, config, max_steps)?,
            owner,
            day: None,
            action: None,
        }],
        Scope::Day => (0..DAYS_PER_WEEK)
            .map(|d| {
                Ok(FeatureVector {
                    values: transform(record.series.day(d), config, max_steps)?,
                    owner: owner.clone(),
                    day: Some(d as u8),
                    action: None,
                })
            })
            .collect::<Result<_>>()?,
        Scope::Actions => {
            let mode = match config.method {
                Method::Raw => ActionMode::Raw,
                Method::Statistical => ActionMode::StatisticalAll,
                Method::Distributional => ActionMode::Distributional {
                    bucket: config.bucket.unwrap_or(1),
                    max_steps,
                },
            };
            segment_actions(counts)
                .iter()
                .map(|a| {
                    Ok(FeatureVector {
                        values: action_features(a, mode)?,
                        owner: owner.clone(),
                        day: None,
                        action: Some((a.start_period, a.len())),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(out)
}

/// Divides every element by the vector's largest element. Zero max: unchanged.
pub fn normalize_vector_wise(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max != 0.0 && max.is_finite() {
        v.iter_mut().for_each(|x| *x /= max);
    }
}

/// Divides every element by the vector's sum. Zero sum: unchanged.
pub fn normalize_prob_dist(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if sum != 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
}

/// Column maxima fitted on training vectors.
///
/// Applied to unseen vectors values can exceed 1; they are not clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWiseScaler {
    pub maxima: Vec<f64>,
}

impl FeatureWiseScaler {
    pub fn fit<V: AsRef<[f64]>>(train: &[V]) -> Result<Self> {
        let dim = train
            .first()
            .map(|v| v.as_ref().len())
            .ok_or_else(|| Error::invalid("cannot fit normalization on no vectors"))?;
        let mut maxima = vec![f64::NEG_INFINITY; dim];
        for v in train {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            for (m, &x) in maxima.iter_mut().zip(v) {
                *m = m.max(x);
            }
        }
        Ok(FeatureWiseScaler { maxima })
    }

    pub fn apply(&self, v: &mut [f64]) -> Result<()> {
        if v.len() != self.maxima.len() {
            return Err(Error::DimensionMismatch {
                expected: self.maxima.len(),
                got: v.len(),
            });
        }
        for (x, &m) in v.iter_mut().zip(&self.maxima) {
            if m != 0.0 {
                *x /= m;
            }
        }
        Ok(())
    }
}

/// Normalizes `train` and `test` in place. Feature-wise maxima come from
/// `train` only; the fitted scaler is returned for that mode.
pub fn normalize(
    train: &mut [Vec<f64>],
    test: &mut [Vec<f64>],
    mode: Normalization,
) -> Result<Option<FeatureWiseScaler>> {
    match mode {
        Normalization::None => Ok(None),
        Normalization::VectorWise => {
            train.iter_mut().chain(test.iter_mut()).for_each(|v| normalize_vector_wise(v));
            Ok(None)
        }
        Normalization::ProbDist => {
            train.iter_mut().chain(test.iter_mut()).for_each(|v| normalize_prob_dist(v));
            Ok(None)
        }
        Normalization::FeatureWise => {
            let scaler = FeatureWiseScaler::fit(train)?;
            for v in train.iter_mut().chain(test.iter_mut()) {
                scaler.apply(v)?;
            }
            Ok(Some(scaler))
        }
    }
}

/// Normalization plus optional variance mask, fitted on training vectors and
/// replayed unchanged on any later vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub input_dim: usize,
    pub normalization: Normalization,
    pub scaler: Option<FeatureWiseScaler>,
    pub mask: Option<crate::linkage::FeatureMask>,
}

impl Preprocessor {
    /// Fits on `train`. With `variance_threshold`, features whose (normalized)
    /// training variance is below the threshold are dropped.
    pub fn fit<V: AsRef<[f64]>>(
        train: &[V],
        normalization: Normalization,
        variance_threshold: Option<f64>,
    ) -> Result<Self> {
        let input_dim = train
            .first()
            .map(|v| v.as_ref().len())
            .ok_or_else(|| Error::invalid("cannot fit preprocessing on no vectors"))?;
        let mut prep = Preprocessor {
            input_dim,
            normalization,
            scaler: None,
            mask: None,
        };
        if normalization == Normalization::FeatureWise {
            prep.scaler = Some(FeatureWiseScaler::fit(train)?);
        }
        if let Some(t) = variance_threshold {
            let normalized: Vec<Vec<f64>> = train
                .iter()
                .map(|v| prep.normalize(v.as_ref()))
                .collect::<Result<_>>()?;
            prep.mask = Some(crate::linkage::variance_filter_with_threshold(&normalized, t)?);
        }
        Ok(prep)
    }

    fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut v = x.to_vec();
        match self.normalization {
            Normalization::None => {}
            Normalization::VectorWise => normalize_vector_wise(&mut v),
            Normalization::ProbDist => normalize_prob_dist(&mut v),
            Normalization::FeatureWise => match &self.scaler {
                Some(s) => s.apply(&mut v)?,
                None => return Err(Error::invalid("feature-wise normalization was not fitted")),
            },
        }
        Ok(v)
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.normalize(x)?;
        Ok(match &self.mask {
            Some(m) => m.apply(&v)?,
            None => v,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.mask.as_ref().map_or(self.input_dim, |m| m.kept())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if let Some(s) = &self.scaler {
            if s.maxima.len() != self.input_dim || s.maxima.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("scaler does not match the preprocessor input"));
            }
        }
        if let Some(m) = &self.mask {
            if m.keep.len() != self.input_dim || m.kept() == 0 {
                return Err(Error::invalid("feature mask does not match the preprocessor input"));
            }
        }
        Ok(())
    }
}

/// Writes `user_id,day,f0..fk`; `day` is empty for week and action vectors.
/// Action vectors have varying lengths, so rows may be shorter than the header.
pub fn write_feature_csv<W: Write>(out: W, vectors: &[FeatureVector]) -> Result<()> {
    let width = vectors.iter().map(|v| v.values.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let mut header = vec!["user_id".to_string(), "day".to_string()];
    header.extend((0..width).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for v in vectors {
        let mut row = vec![
            v.owner.clone(),
            v.day.map(|d| d.to_string()).unwrap_or_default(),
        ];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<feature output>", e))?;
    Ok(())
}

/// The full feature grid: raw week/day, every non-empty statistic subset over
/// the day and week window lists, and every distributional (scope, window,
/// bucket) cell, each under the three normalizations.
pub fn full_grid() -> Vec<FeatureConfig> {
    const DAY_WINDOWS: [usize; 13] = [12, 24, 48, 60, 120, 240, 480, 720, 960, 1440, 1920, 2880, 5760];
    const WEEK_WINDOWS: [usize; 9] = [240, 480, 720, 960, 1440, 1920, 2880, 5760, 40320];
    const DIST_WINDOWS: [usize; 4] = [240, 720, 1440, 2880];
    const BUCKETS: [u32; 3] = [2, 4, 8];

    let subsets: Vec<Vec<Stat>> = (1u32..32)
        .map(|mask| {
            Stat::ORDER
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| s)
                .collect()
        })
        .collect();

    let mut base = vec![FeatureConfig::raw(Scope::Week), FeatureConfig::raw(Scope::Day)];
    for (scope, windows) in [(Scope::Day, &DAY_WINDOWS[..]), (Scope::Week, &WEEK_WINDOWS[..])] {
        for &w in windows {
            for s in &subsets {
                base.push(FeatureConfig::statistical(scope, w, s));
            }
        }
    }
    for scope in [Scope::Week, Scope::Day] {
        for &w in &DIST_WINDOWS {
            for &b in &BUCKETS {
                base.push(FeatureConfig::distributional(scope, w, b));
            }
        }
    }
    let mut grid = Vec::with_capacity(base.len() * 3);
    for n in [Normalization::FeatureWise, Normalization::VectorWise, Normalization::ProbDist] {
        grid.extend(base.iter().cloned().map(|c| c.with_normalization(n)));
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistical_worked_example() {
        let raw = [5, 0, 0, 2, 3, 4, 3, 0];
        let v = extract_statistical(&raw, 3, &[Stat::Mean, Stat::Sum]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0], 5.0);
        assert!((v[1] - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(&v[2..], &[9.0, 3.0, 3.0, 1.5]);
    }

    #[test]
    fn distributional_worked_example() {
        let raw = [5, 0, 0, 2, 3, 4, 3, 0];
        let v = extract_distributional(&raw, 3, 3, 6).unwrap();
        assert_eq!(v, vec![2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_inputs() {
        let zeros = [0u32; 9];
        assert_eq!(extract_statistical(&zeros, 2, &[Stat::Max]).unwrap(), vec![0.0; 5]);
        let d = extract_distributional(&zeros, 9, 2, 10).unwrap();
        assert_eq!(d[0], 9.0);
        assert!(d[1..].iter().all(|&x| x == 0.0));
        assert_eq!(d.len(), bucket_count(2, 10));
    }

    #[test]
    fn stale_max_steps_is_rejected() {
        assert!(matches!(
            extract_distributional(&[1, 9], 2, 2, 8),
            Err(Error::StepAboveMax { value: 9, max_steps: 8 })
        ));
        assert!(extract_statistical(&[], 2, &[Stat::Max]).is_err());
        assert!(extract_statistical(&[1], 2, &[]).is_err());
    }

    #[test]
    fn median_and_std_conventions() {
        let v = extract_statistical(&[4, 1, 3, 2], 4, &[Stat::Median, Stat::Std]).unwrap();
        assert_eq!(v[0], 2.5);
        assert!((v[1] - 1.25f64.sqrt()).abs() < 1e-15);
        let single = extract_statistical(&[7], 1, &[Stat::Std]).unwrap();
        assert_eq!(single, vec![0.0]);
    }

    #[test]
    fn action_segmentation_examples() {
        let mut week = vec![1u32; 40320];
        let a = segment_actions(&week);
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].start_period, a[0].len()), (0, 40320));

        week.iter_mut().for_each(|v| *v = 0);
        assert!(segment_actions(&[0; 8]).is_empty());
        assert!(segment_actions(&week).is_empty());

        let a = segment_actions(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 2, 2]);
        assert_eq!(
            a,
            vec![
                Action { start_period: 0, payload: vec![1, 1] },
                Action { start_period: 10, payload: vec![2, 2] },
            ]
        );
        // seven zeros do not separate
        let a = segment_actions(&[0, 3, 0, 0, 0, 0, 0, 0, 0, 4, 0]);
        assert_eq!(a, vec![Action { start_period: 1, payload: vec![3, 0, 0, 0, 0, 0, 0, 0, 4] }]);
    }

    #[test]
    fn action_feature_modes() {
        let a = Action { start_period: 17, payload: vec![2, 3, 4] };
        assert_eq!(action_features(&a, ActionMode::Raw).unwrap(), vec![3.0, 17.0, 2.0, 3.0, 4.0]);
        let s = action_features(&a, ActionMode::StatisticalAll).unwrap();
        let std = (2.0f64 / 3.0).sqrt();
        assert_eq!(&s[..6], &[3.0, 17.0, 9.0, 4.0, 3.0, 3.0]);
        assert!((s[6] - std).abs() < 1e-15);
        let flat = Action { start_period: 0, payload: vec![5, 5, 5, 5] };
        assert_eq!(action_features(&flat, ActionMode::StatisticalAll).unwrap()[6], 0.0);
        let d = action_features(&a, ActionMode::Distributional { bucket: 2, max_steps: 4 }).unwrap();
        assert_eq!(d, vec![3.0, 17.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn normalization_examples() {
        let mut v = vec![2.0, 4.0, 8.0];
        normalize_vector_wise(&mut v);
        assert_eq!(v, vec![0.25, 0.5, 1.0]);
        let mut p = vec![2.0, 2.0, 4.0];
        normalize_prob_dist(&mut p);
        assert_eq!(p, vec![0.25, 0.25, 0.5]);
        for mode in [
            Normalization::None,
            Normalization::FeatureWise,
            Normalization::VectorWise,
            Normalization::ProbDist,
        ] {
            let mut train = vec![vec![0.0; 4]];
            let mut test = vec![vec![0.0; 4]];
            normalize(&mut train, &mut test, mode).unwrap();
            assert_eq!(train[0], vec![0.0; 4]);
            assert_eq!(test[0], vec![0.0; 4]);
        }
    }

    #[test]
    fn feature_wise_fits_on_train_only() {
        let mut train = vec![vec![1.0, 0.0, 4.0], vec![2.0, 0.0, 2.0]];
        let mut test = vec![vec![4.0, 3.0, 1.0]];
        let scaler = normalize(&mut train, &mut test, Normalization::FeatureWise)
            .unwrap()
            .unwrap();
        assert_eq!(scaler.maxima, vec![2.0, 0.0, 4.0]);
        assert_eq!(train, vec![vec![0.5, 0.0, 1.0], vec![1.0, 0.0, 0.5]]);
        // test values beyond the training max are left above 1
        assert_eq!(test[0], vec![2.0, 3.0, 0.25]);
        assert!(scaler.apply(&mut [1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig::statistical(Scope::Day, 720, &[]).validate().is_err());
        assert!(FeatureConfig::statistical(Scope::Day, 0, &[Stat::Max]).validate().is_err());
        assert!(FeatureConfig::distributional(Scope::Day, 720, 0).validate().is_err());
        let mut a = FeatureConfig::raw(Scope::Actions);
        assert!(a.validate().is_ok());
        a.window = Some(10);
        assert!(a.validate().is_err());
        assert_eq!(
            FeatureConfig::statistical(Scope::Day, 720, &[Stat::Median, Stat::Max]).label(),
            "day-stat-max+median-w720-none"
        );
    }

    #[test]
    fn full_grid_size() {
        let grid = full_grid();
        // (2 raw + 31 * (13 + 9) statistical + 2 * 4 * 3 distributional) * 3
        assert_eq!(grid.len(), (2 + 682 + 24) * 3);
        assert_eq!(grid.len(), 2124);
        assert!(grid.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn csv_export() {
        let vectors = vec![
            FeatureVector { values: vec![1.0, 2.5], owner: "u1".into(), day: Some(3), action: None },
            FeatureVector { values: vec![0.0], owner: "u2".into(), day: None, action: Some((4, 1)) },
        ];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &vectors).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "user_id,day,f0,f1\nu1,3,1,2.5\nu2,,0\n");
    }
}
