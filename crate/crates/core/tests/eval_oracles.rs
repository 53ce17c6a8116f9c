use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use stepleak::eval::{auc, cross_validate, mean_std, pca_project, roc_curve, scored, ScoredSample};

/// P(score of a random positive > score of a random negative), ties 1/2,
/// by enumerating every pair.
fn pair_counting_auc(s: &[ScoredSample]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in s.iter().filter(|x| x.label == 1) {
        for n in s.iter().filter(|x| x.label == 0) {
            den += 1.0;
            if p.score > n.score {
                num += 1.0;
            } else if p.score == n.score {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Trapezoid area under (FPR, TPR) evaluated at every distinct threshold,
/// predicting positive for `score >= t`.
fn threshold_sweep_auc(s: &[ScoredSample]) -> f64 {
    let mut thresholds: Vec<f64> = s.iter().map(|x| x.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let p = s.iter().filter(|x| x.label == 1).count() as f64;
    let n = s.len() as f64 - p;
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = s.iter().filter(|x| x.label == 1 && x.score >= t).count() as f64;
        let fp = s.iter().filter(|x| x.label == 0 && x.score >= t).count() as f64;
        pts.push((fp / n, tp / p));
    }
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

fn samples_strategy() -> impl Strategy<Value = Vec<ScoredSample>> {
    // small score alphabet forces ties
    prop::collection::vec((0u8..12, 0u8..2), 2..120).prop_filter_map("needs both classes", |v| {
        let s: Vec<ScoredSample> = v.iter().map(|&(s, l)| ScoredSample::new(f64::from(s) / 11.0, l)).collect();
        let pos = s.iter().filter(|x| x.label == 1).count();
        (pos > 0 && pos < s.len()).then_some(s)
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_counting_and_sweep(s in samples_strategy()) {
        let a = auc(&s).unwrap();
        prop_assert!((a - pair_counting_auc(&s)).abs() < 1e-9);
        prop_assert!((a - threshold_sweep_auc(&s)).abs() < 1e-9);
        prop_assert!((roc_curve(&s).unwrap().auc - a).abs() < 1e-9);
    }

    #[test]
    fn auc_flips_with_negated_scores(s in samples_strategy()) {
        let neg: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(-x.score, x.label)).collect();
        prop_assert!((auc(&s).unwrap() + auc(&neg).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn auc_invariant_to_increasing_transform(s in samples_strategy()) {
        let t: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(x.score.powi(3) * 7.0 - 2.0, x.label)).collect();
        prop_assert!((auc(&s).unwrap() - auc(&t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_is_monotone_from_origin_to_corner(s in samples_strategy()) {
        let c = roc_curve(&s).unwrap();
        prop_assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        let last = c.points.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in c.points.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn folds_partition_and_balance(labels in prop::collection::vec(0u8..2, 10..80), k in 2usize..6, seed: u64) {
        let folds = cross_validate::<u8>(&labels, k, None, seed).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for class in [0u8, 1] {
            let counts: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == class).count()).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(folds.clone(), cross_validate::<u8>(&labels, k, None, seed).unwrap());
    }

    #[test]
    fn grouped_folds_keep_groups_together(n_groups in 6usize..30, per in 1usize..8, seed: u64) {
        let groups: Vec<usize> = (0..n_groups * per).map(|i| i / per).collect();
        let labels: Vec<u8> = groups.iter().map(|g| (g % 2) as u8).collect();
        let folds = cross_validate(&labels, 3, Some(&groups), seed).unwrap();
        for f in &folds {
            for &i in f {
                let g = groups[i];
                prop_assert!(f.iter().filter(|&&j| groups[j] == g).count() == per);
            }
        }
    }
}

#[test]
fn auc_rejects_degenerate_input() {
    assert!(auc(&scored(&[0.1, 0.2], &[1, 1])).is_err());
    assert!(auc(&scored(&[f64::NAN, 0.2], &[1, 0])).is_err());
    assert!(auc(&[]).is_err());
}

#[test]
fn auc_known_values() {
    assert_eq!(auc(&scored(&[0.1, 0.9], &[0, 1])).unwrap(), 1.0);
    assert_eq!(auc(&scored(&[0.9, 0.1], &[0, 1])).unwrap(), 0.0);
    assert_eq!(auc(&scored(&[0.5, 0.5], &[0, 1])).unwrap(), 0.5);
}

#[test]
fn population_std() {
    let (m, s) = mean_std(&[1.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
}

fn lcg_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    // anisotropic cloud so eigenvalues are well separated
    (0..n)
        .map(|_| (0..d).map(|j| next() * (d - j) as f64 * 2.0).collect())
        .collect()
}

#[test]
fn pca_matches_dense_eigensolver() {
    for seed in 0..5 {
        let x = lcg_points(60, 6, seed);
        let pca = pca_project(&x, 3).unwrap();

        let n = x.len();
        let d = x[0].len();
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        for (k, &idx) in order.iter().take(3).enumerate() {
            assert!((pca.explained_variance[k] - eig.eigenvalues[idx]).abs() < 1e-8 * eig.eigenvalues[idx].max(1.0));
            let v = eig.eigenvectors.column(idx);
            let dot: f64 = (0..d).map(|j| v[j] * pca.components[k][j]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6, "component {k} misaligned: {dot}");
            let first = pca.components[k].iter().find(|c| c.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }
}

#[test]
fn pca_rank_one_second_component_vanishes() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    let pca = pca_project(&x, 2).unwrap();
    assert!(pca.explained_variance[1] < 1e-9);
    for p in &pca.projections {
        assert!(p[1].abs() < 1e-6);
    }
}
