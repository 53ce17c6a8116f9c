//! CART classification trees (Gini impurity) and a bootstrap-aggregated forest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Fraction of class-1 training samples that reached the leaf.
    Leaf { p1: f64 },
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_p1(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p1 } => return *p1,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Hard vote: 1 when the leaf majority is class 1, 0.5 on an even leaf.
    pub fn vote(&self, x: &[f64]) -> f64 {
        let p = self.leaf_p1(x);
        if p > 0.5 {
            1.0
        } else if p < 0.5 {
            0.0
        } else {
            0.5
        }
    }

    fn depth(&self) -> usize {
        fn rec(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }

    /// Structural checks for trees that did not come from `fit`.
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Leaf { p1 } => {
                    if !(0.0..=1.0).contains(p1) {
                        return Err(Error::invalid("leaf probability outside [0, 1]"));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    // children always follow their parent, which rules out cycles
                    if *feature >= n_features
                        || threshold.is_nan()
                        || *left <= i
                        || *right <= i
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                    {
                        return Err(Error::invalid(format!("tree node {i} is malformed")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub max_features: usize,
    pub min_samples_split: usize,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [u8],
    params: &'a TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.ys[i] == 1).count();
        self.nodes.push(Node::Leaf {
            p1: pos as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best split on `feature`: (weighted child impurity, threshold).
    fn best_on_feature(&self, idx: &mut [usize], feature: usize, total_pos: f64) -> Option<(f64, f64)> {
        let xs = self.xs;
        idx.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]).then(a.cmp(&b)));
        let n = idx.len() as f64;
        let mut left_pos = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for k in 0..idx.len() - 1 {
            left_pos += f64::from(self.ys[idx[k]]);
            let (a, b) = (xs[idx[k]][feature], xs[idx[k + 1]][feature]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let imp = (nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr)) / n;
            if best.is_none_or(|(bi, _)| imp < bi) {
                let mut thr = a + (b - a) / 2.0;
                if thr >= b {
                    thr = a;
                }
                best = Some((imp, thr));
            }
        }
        best
    }

    fn grow<R: Rng>(&mut self, idx: &mut Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.ys[i] == 1).count();
        let at_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        if pos == 0 || pos == n || n < self.params.min_samples_split.max(2) || at_limit {
            return self.leaf(idx);
        }
        let d = self.xs[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        // keep drawing features past max_features until some valid split exists
        for (k, &f) in features.iter().enumerate() {
            if k >= self.params.max_features && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_on_feature(idx, f, pos as f64) {
                if best.is_none_or(|(bi, _, _)| imp < bi) {
                    best = Some((imp, f, thr));
                }
            }
        }
        // no candidate threshold at all: the samples are indistinguishable
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.xs[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p1: 0.0 });
        let l = self.grow(&mut left, depth + 1, rng);
        let r = self.grow(&mut right, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        me
    }
}

pub fn fit_tree<R: Rng>(xs: &[Vec<f64>], ys: &[u8], sample: &[usize], params: &TreeParams, rng: &mut R) -> Tree {
    let mut b = Builder {
        xs,
        ys,
        params,
        nodes: Vec::new(),
    };
    let mut idx = sample.to_vec();
    b.grow(&mut idx, 0, rng);
    Tree { nodes: b.nodes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Each tree sees a bootstrap sample drawn from its own seeded stream.
    pub fn fit(xs: &[Vec<f64>], ys: &[u8], n_trees: usize, params: &TreeParams, seed: u64) -> Self {
        let n = xs.len();
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64 + 1);
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                fit_tree(xs, ys, &sample, params, &mut rng)
            })
            .collect();
        RandomForest {
            n_features: xs[0].len(),
            trees,
        }
    }

    /// Fraction of trees voting class 1.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        if self.trees.is_empty() {
            return Err(Error::invalid("forest has no trees"));
        }
        Ok(self.trees.iter().map(|t| t.vote(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.trees.iter().try_for_each(|t| t.validate(self.n_features))
    }
}
