use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::FEATURE_DIMS;

/// Class index used inside trees.
pub(crate) const EFFICIENT: usize = 0;
pub(crate) const INEFFICIENT: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    /// Training counts per class, `[efficient, inefficient]`.
    Leaf { counts: [u32; 2] },
}

impl Node {
    fn leaf(counts: [u32; 2]) -> Node {
        Node::Leaf { counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

/// Growth limits for a single tree.
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    pub impurity: f64,
}

pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    // Adjacent floats: the midpoint may round up onto `b`.
    if mid >= b {
        a
    } else {
        mid
    }
}

/// Best threshold on one feature over `(value, class)` pairs sorted by
/// value. Thresholds are midpoints between consecutive distinct values and
/// both children must keep at least `min_leaf` samples. Ties go to the
/// smallest threshold.
pub fn best_split_sorted(sorted: &[(f64, u8)], min_leaf: usize) -> Option<SplitCandidate> {
    let n = sorted.len();
    let mut total = [0usize; 2];
    for &(_, c) in sorted {
        total[c as usize] += 1;
    }
    let mut left = [0usize; 2];
    let mut best: Option<SplitCandidate> = None;
    for i in 1..n {
        left[sorted[i - 1].1 as usize] += 1;
        if sorted[i - 1].0 == sorted[i].0 || i < min_leaf || n - i < min_leaf {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let impurity = (i as f64 * gini(left) + (n - i) as f64 * gini(right)) / n as f64;
        if best.is_none_or(|b| impurity < b.impurity) {
            best = Some(SplitCandidate {
                threshold: midpoint(sorted[i - 1].0, sorted[i].0),
                impurity,
            });
        }
    }
    best
}

/// Convenience wrapper over [`best_split_sorted`] for unsorted columns.
pub fn best_split_for_feature(
    values: &[f64],
    classes: &[u8],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let mut pairs: Vec<(f64, u8)> = values
        .iter()
        .copied()
        .zip(classes.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    best_split_sorted(&pairs, min_leaf)
}

impl DecisionTree {
    /// Grows a tree on `sample` (indices into `x`/`y`, repeats allowed).
    pub fn fit<R: Rng>(
        x: &[[f64; FEATURE_DIMS]],
        y: &[u8],
        sample: &[usize],
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        let mut idx = sample.to_vec();
        DecisionTree {
            root: grow(x, y, &mut idx, 0, params, rng),
        }
    }

    pub fn leaf_counts(&self, features: &[f64; FEATURE_DIMS]) -> [u32; 2] {
        let mut node = &self.root;
        loop {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
                Node::Leaf { counts } => return *counts,
            }
        }
    }

    /// Majority class at the reached leaf; ties go to inefficient.
    pub fn vote(&self, features: &[f64; FEATURE_DIMS]) -> usize {
        let c = self.leaf_counts(features);
        if c[EFFICIENT] > c[INEFFICIENT] {
            EFFICIENT
        } else {
            INEFFICIENT
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    /// Checks structural invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        fn check(n: &Node) -> Result<(), String> {
            match n {
                Node::Leaf { counts } if counts[0] + counts[1] == 0 => Err("empty leaf".into()),
                Node::Leaf { .. } => Ok(()),
                Node::Split { feature, .. } if *feature >= FEATURE_DIMS => {
                    Err(format!("split on feature {feature}"))
                }
                Node::Split { threshold, .. } if !threshold.is_finite() => {
                    Err("non-finite threshold".into())
                }
                Node::Split { left, right, .. } => check(left).and_then(|_| check(right)),
            }
        }
        check(&self.root)
    }
}

fn grow<R: Rng>(
    x: &[[f64; FEATURE_DIMS]],
    y: &[u8],
    idx: &mut [usize],
    depth: usize,
    params: &TreeParams,
    rng: &mut R,
) -> Node {
    let mut counts = [0u32; 2];
    for &i in idx.iter() {
        counts[y[i] as usize] += 1;
    }
    let n = idx.len();
    let pure = counts[0] == 0 || counts[1] == 0;
    if pure || n < 2 * params.min_leaf.max(1) || params.max_depth.is_some_and(|m| depth >= m) {
        return Node::leaf(counts);
    }

    let mut features: Vec<usize> = (0..FEATURE_DIMS).collect();
    features.shuffle(rng);
    let mut best: Option<(usize, SplitCandidate)> = None;
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
    for (tried, &f) in features.iter().enumerate() {
        // Past mtry, keep looking only until some feature can split.
        if tried >= params.mtry && best.is_some() {
            break;
        }
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (x[i][f], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(c) = best_split_sorted(&pairs, params.min_leaf.max(1)) {
            if best.is_none_or(|(_, b)| c.impurity < b.impurity) {
                best = Some((f, c));
            }
        }
    }
    let Some((feature, split)) = best else {
        return Node::leaf(counts);
    };

    // Partition in place: left part holds x <= threshold.
    let mut mid = 0;
    for j in 0..n {
        if x[idx[j]][feature] <= split.threshold {
            idx.swap(mid, j);
            mid += 1;
        }
    }
    let (l, r) = idx.split_at_mut(mid);
    let left = grow(x, y, l, depth + 1, params, rng);
    let right = grow(x, y, r, depth + 1, params, rng);
    Node::Split {
        feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gini_values() {
        assert_eq!(gini([5, 0]), 0.0);
        assert_eq!(gini([2, 2]), 0.5);
        assert!((gini([1, 3]) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn split_at_class_boundary() {
        let s = best_split_for_feature(&[1.0, 2.0, 3.0, 10.0, 11.0], &[0, 0, 0, 1, 1], 1).unwrap();
        assert_eq!(s.threshold, 6.5);
        assert_eq!(s.impurity, 0.0);
    }

    #[test]
    fn constant_feature_cannot_split() {
        assert!(best_split_for_feature(&[4.0; 5], &[0, 1, 0, 1, 0], 1).is_none());
    }

    #[test]
    fn min_leaf_limits_thresholds() {
        // Best unconstrained split isolates the single class-1 sample.
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = [0, 0, 0, 0, 1];
        assert_eq!(best_split_for_feature(&v, &c, 1).unwrap().threshold, 4.5);
        assert_eq!(best_split_for_feature(&v, &c, 2).unwrap().threshold, 3.5);
        assert!(best_split_for_feature(&v, &c, 3).is_none());
    }

    #[test]
    fn tree_fits_separable_data_exactly() {
        let x: Vec<[f64; 6]> = (0..40)
            .map(|i| [i as f64, 0.0, 0.0, 0.0, 0.0, 0.0])
            .collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i < 13)).collect();
        let sample: Vec<usize> = (0..40).collect();
        let params = TreeParams {
            mtry: 1,
            min_leaf: 1,
            max_depth: None,
        };
        let tree = DecisionTree::fit(&x, &y, &sample, &params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(tree.depth(), 1);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(tree.vote(xi), *yi as usize);
        }
        tree.validate().unwrap();
    }

    #[test]
    fn max_depth_stops_growth() {
        let x: Vec<[f64; 6]> = (0..32)
            .map(|i| [i as f64, 0.0, 0.0, 0.0, 0.0, 0.0])
            .collect();
        let y: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let sample: Vec<usize> = (0..32).collect();
        let params = TreeParams {
            mtry: 6,
            min_leaf: 1,
            max_depth: Some(3),
        };
        let tree = DecisionTree::fit(&x, &y, &sample, &params, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(tree.depth() <= 3);
    }

    #[test]
    fn leaf_ties_vote_inefficient() {
        let tree = DecisionTree {
            root: Node::leaf([2, 2]),
        };
        assert_eq!(tree.vote(&[0.0; 6]), INEFFICIENT);
        assert!(DecisionTree {
            root: Node::leaf([0, 0])
        }
        .validate()
        .is_err());
    }
}
