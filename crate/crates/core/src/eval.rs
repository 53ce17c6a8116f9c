//! ROC/AUC, stratified (optionally grouped) k-fold splitting, and PCA.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8) -> Self {
        ScoredSample { score, label }
    }
}

pub fn scored(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
    assert_eq!(scores.len(), labels.len());
    scores
        .iter()
        .zip(labels)
        .map(|(&score, &label)| ScoredSample { score, label })
        .collect()
}

fn class_totals(samples: &[ScoredSample]) -> Result<(f64, f64)> {
    let mut pos = 0usize;
    for s in samples {
        if !s.score.is_finite() {
            return Err(Error::invalid(format!("non-finite score {}", s.score)));
        }
        if s.label > 1 {
            return Err(Error::invalid(format!("label {} is not binary", s.label)));
        }
        pos += usize::from(s.label);
    }
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos as f64, neg as f64))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (the Mann–Whitney U statistic over `P * N`).
pub fn auc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_totals(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    let mut wins = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p, mut q) = (0.0, 0.0);
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label == 1 {
                p += 1.0;
            } else {
                q += 1.0;
            }
            j += 1;
        }
        wins += p * neg_below + 0.5 * p * q;
        neg_below += q;
        i = j;
    }
    Ok(wins / (pos * neg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring at or above this value are predicted positive.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "tpr", "threshold"])?;
        for p in &self.points {
            w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<roc output>", e))?;
        Ok(())
    }
}

/// ROC curve with one point per distinct score, from `(0, 0)` to `(1, 1)`.
/// `auc` is the trapezoidal area under the points.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve> {
    let (pos, neg) = class_totals(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].label == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let prev = points[points.len() - 1];
        let p = RocPoint {
            fpr: fp / neg,
            tpr: tp / pos,
            threshold: t,
        };
        area += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc: area })
}

/// Assigns items to `k` stratified folds.
///
/// With `groups`, all items sharing a group id land in the same fold and a
/// group is stratified by the label of its first item. Within each class,
/// units are shuffled and dealt round-robin, continuing from where the
/// previous class stopped, so fold sizes differ by at most one unit per class.
pub fn cross_validate<G: Ord + Clone>(
    labels: &[u8],
    k: usize,
    groups: Option<&[G]>,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let units: Vec<Vec<usize>> = match groups {
        Some(g) => {
            if g.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    got: g.len(),
                });
            }
            let mut by_group: BTreeMap<G, Vec<usize>> = BTreeMap::new();
            for (i, key) in g.iter().enumerate() {
                by_group.entry(key.clone()).or_default().push(i);
            }
            by_group.into_values().collect()
        }
        None => (0..labels.len()).map(|i| vec![i]).collect(),
    };
    if k > units.len() {
        return Err(Error::invalid(format!(
            "{k} folds requested but only {} {} available",
            units.len(),
            if groups.is_some() { "groups" } else { "items" }
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<&Vec<usize>> =
            units.iter().filter(|u| labels[u[0]] == class).collect();
        members.shuffle(&mut rng);
        for unit in members {
            folds[next].extend_from_slice(unit);
            next = (next + 1) % k;
        }
    }
    // labels outside {0, 1} are not stratified but still assigned
    for unit in units.iter().filter(|u| labels[u[0]] > 1) {
        folds[next].extend_from_slice(unit);
        next = (next + 1) % k;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-length principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component (eigenvalues, divisor `n - 1`).
    pub explained_variance: Vec<f64>,
    /// One row of `k` coordinates per input vector.
    pub projections: Vec<Vec<f64>>,
}

const POWER_MAX_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-13;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top-`k` principal components of `vectors` by power iteration with deflation.
///
/// The covariance matrix is never formed; each iteration multiplies through
/// the centered data. Component signs are fixed so the first loading with
/// magnitude above 1e-12 is positive.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Pca> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if vectors.len() < k + 1 {
        return Err(Error::invalid(format!(
            "PCA with k = {k} needs at least {} vectors, got {}",
            k + 1,
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if k > d {
        return Err(Error::invalid(format!("k = {k} exceeds dimension {d}")));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let total_var: f64 = centered.iter().map(|r| dot(r, r)).sum::<f64>() / (n - 1) as f64;
    if total_var == 0.0 {
        return Err(Error::invalid("data has zero variance"));
    }

    let cov_mul = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for row in &centered {
            let s = dot(row, x);
            for (o, r) in out.iter_mut().zip(row) {
                *o += s * r;
            }
        }
        out.iter_mut().for_each(|o| *o /= (n - 1) as f64);
        out
    };

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for c in 0..k {
        let orthogonalize = |v: &mut Vec<f64>, comps: &[Vec<f64>]| {
            for p in comps {
                let s = dot(v, p);
                v.iter_mut().zip(p).for_each(|(x, y)| *x -= s * y);
            }
        };
        let mut v: Vec<f64> = (0..d)
            .map(|i| 1.0 + ((i + 1 + c) as f64 * 0.618_033_988_75).fract())
            .collect();
        orthogonalize(&mut v, &components);
        unit(&mut v);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut w = cov_mul(&v);
            // deflation: remove the variance of components already found
            for (p, &l) in components.iter().zip(&eigenvalues) {
                let s = l * dot(p, &v);
                w.iter_mut().zip(p).for_each(|(x, y)| *x -= s * y);
            }
            orthogonalize(&mut w, &components);
            let norm = unit(&mut w);
            if norm <= total_var * 1e-14 {
                // remaining variance is numerically zero; keep any orthogonal axis
                lambda = 0.0;
                break;
            }
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            lambda = norm;
            if delta < POWER_TOL {
                break;
            }
        }
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        // Rayleigh quotient is more accurate than the last norm
        let cv = cov_mul(&v);
        let rq = dot(&v, &cv);
        eigenvalues.push(if lambda == 0.0 { rq.max(0.0) } else { rq });
        components.push(v);
    }

    let projections = centered
        .iter()
        .map(|row| components.iter().map(|p| dot(row, p)).collect())
        .collect();
    Ok(Pca {
        mean,
        components,
        explained_variance: eigenvalues,
        projections,
    })
}

/// Writes `user_id,c1,c2,label` rows for the first two PCA coordinates.
pub fn write_pca_csv<W: Write>(out: W, ids: &[String], pca: &Pca, labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "c1", "c2", "label"])?;
    for ((id, p), l) in ids.iter().zip(&pca.projections).zip(labels) {
        let c2 = p.get(1).copied().unwrap_or(0.0);
        w.write_record([id.clone(), p[0].to_string(), c2.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<pca output>", e))?;
    Ok(())
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
        pos.iter()
            .map(|&s| ScoredSample::new(s, 1))
            .chain(neg.iter().map(|&s| ScoredSample::new(s, 0)))
            .collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&samples(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auc(&samples(&[0.3, 0.3], &[0.3, 0.3, 0.3])).unwrap(), 0.5);
        // pairs: (.9,.5) (.9,.1) (.4,.1) win, (.4,.5) loses -> 3/4
        assert_eq!(auc(&samples(&[0.9, 0.4], &[0.5, 0.1])).unwrap(), 0.75);
        assert!(matches!(auc(&samples(&[0.1], &[])), Err(Error::SingleClass)));
        assert!(auc(&samples(&[f64::NAN], &[0.1])).is_err());
    }

    #[test]
    fn roc_two_samples() {
        let c = roc_curve(&samples(&[0.9], &[0.1])).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(c.auc, 1.0);
    }

    #[test]
    fn roc_mirrors_under_label_flip() {
        let s = samples(&[0.9, 0.4, 0.35, 0.8], &[0.5, 0.1, 0.35]);
        let flipped: Vec<ScoredSample> =
            s.iter().map(|x| ScoredSample::new(x.score, 1 - x.label)).collect();
        let a = roc_curve(&s).unwrap();
        let b = roc_curve(&flipped).unwrap();
        assert!((a.auc + b.auc - 1.0).abs() < 1e-12);
        assert_eq!(a.points.len(), b.points.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!((p.fpr, p.tpr), (q.tpr, q.fpr));
        }
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }

    #[test]
    fn cross_validate_exact_division() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let folds = cross_validate::<u8>(&labels, 5, None, 3).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.len(), 2);
            assert_eq!(f.iter().map(|&i| labels[i]).sum::<u8>(), 1);
        }
        assert_eq!(folds, cross_validate::<u8>(&labels, 5, None, 3).unwrap());
        assert!(cross_validate::<u8>(&labels, 11, None, 3).is_err());
        assert!(cross_validate::<u8>(&labels, 1, None, 3).is_err());
    }

    #[test]
    fn cross_validate_keeps_groups_together() {
        let groups: Vec<String> = (0..30).map(|i| format!("u{}", i / 3)).collect();
        let labels: Vec<u8> = (0..30).map(|i| ((i / 3) % 2) as u8).collect();
        let folds = cross_validate(&labels, 5, Some(&groups), 9).unwrap();
        for (fi, f) in folds.iter().enumerate() {
            assert_eq!(f.len(), 6);
            for &i in f {
                for (fj, g) in folds.iter().enumerate() {
                    if fj != fi {
                        assert!(g.iter().all(|&j| groups[j] != groups[i]));
                    }
                }
            }
        }
        assert!(cross_validate(&labels, 11, Some(&groups), 9).is_err());
    }

    #[test]
    fn pca_rank_one() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.explained_variance[1].abs() < 1e-9);
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
        let var2: f64 = p.projections.iter().map(|r| r[1] * r[1]).sum::<f64>() / 9.0;
        assert!(var2 < 1e-9);
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn pca_errors() {
        assert!(pca_project(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]], 2).is_err());
        assert!(pca_project(&[vec![1.0, 2.0], vec![0.0, 2.0]], 2).is_err());
    }
}
