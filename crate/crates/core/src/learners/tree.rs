//! Regression trees with weighted-variance splitting and a bagged ensemble.
//!
//! Splits consider midpoints between consecutive distinct feature values and
//! maximize the weighted sum-of-squares reduction; ties break toward the
//! lowest feature index, then the lowest threshold, so fits are deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        prediction: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { prediction } => return *prediction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

pub struct TreeSettings {
    pub max_depth: Option<usize>,
    pub min_leaf_weight: f64,
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    weights: &'a [f64],
    settings: &'a TreeSettings,
    nodes: Vec<Node>,
}

/// Fit one tree on the rows in `indices` (repeats allowed).
pub fn fit_tree(
    xs: &[Vec<f64>],
    ys: &[f64],
    weights: &[f64],
    indices: &[usize],
    settings: &TreeSettings,
) -> Tree {
    let mut builder = TreeBuilder {
        xs,
        ys,
        weights,
        settings,
        nodes: Vec::new(),
    };
    builder.grow(indices, 0);
    Tree {
        nodes: builder.nodes,
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    fn grow(&mut self, indices: &[usize], depth: usize) -> usize {
        let (w_total, mean) = weighted_mean(self.ys, self.weights, indices);
        let at_depth_cap = self.settings.max_depth.is_some_and(|cap| depth >= cap);
        if at_depth_cap || w_total < 2.0 * self.settings.min_leaf_weight {
            return self.push_leaf(mean);
        }
        match self.best_split(indices) {
            None => self.push_leaf(mean),
            Some(split) => {
                let (left, right): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| self.xs[i][split.feature] <= split.threshold);
                if left.is_empty() || right.is_empty() {
                    return self.push_leaf(mean);
                }
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf { prediction: mean }); // placeholder
                let left_id = self.grow(&left, depth + 1);
                let right_id = self.grow(&right, depth + 1);
                self.nodes[at] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: left_id,
                    right: right_id,
                };
                at
            }
        }
    }

    fn push_leaf(&mut self, prediction: f64) -> usize {
        self.nodes.push(Node::Leaf { prediction });
        self.nodes.len() - 1
    }

    /// Maximize the weighted variance reduction
    /// `sse(parent) - sse(left) - sse(right)` over features and midpoints.
    fn best_split(&self, indices: &[usize]) -> Option<BestSplit> {
        let d = self.xs[0].len();
        let min_w = self.settings.min_leaf_weight;
        let (w_total, _) = weighted_mean(self.ys, self.weights, indices);
        let parent_sse = weighted_sse(self.ys, self.weights, indices);
        let mut best: Option<BestSplit> = None;

        let mut sorted = indices.to_vec();
        for feature in 0..d {
            sorted.sort_by(|&a, &b| self.xs[a][feature].total_cmp(&self.xs[b][feature]));
            let mut w_left = 0.0;
            let mut wy_left = 0.0;
            let mut wyy_left = 0.0;
            let mut w_right = w_total;
            let mut wy_right: f64 = indices.iter().map(|&i| self.weights[i] * self.ys[i]).sum();
            let mut wyy_right: f64 = indices
                .iter()
                .map(|&i| self.weights[i] * self.ys[i] * self.ys[i])
                .sum();

            for k in 0..sorted.len() - 1 {
                let i = sorted[k];
                let w = self.weights[i];
                w_left += w;
                wy_left += w * self.ys[i];
                wyy_left += w * self.ys[i] * self.ys[i];
                w_right -= w;
                wy_right -= w * self.ys[i];
                wyy_right -= w * self.ys[i] * self.ys[i];

                let v = self.xs[i][feature];
                let v_next = self.xs[sorted[k + 1]][feature];
                if v == v_next {
                    continue;
                }
                if w_left < min_w || w_right < min_w {
                    continue;
                }
                let sse_left = (wyy_left - wy_left * wy_left / w_left).max(0.0);
                let sse_right = if w_right > 0.0 {
                    (wyy_right - wy_right * wy_right / w_right).max(0.0)
                } else {
                    0.0
                };
                let gain = parent_sse - sse_left - sse_right;
                let threshold = 0.5 * (v + v_next);
                let better = match &best {
                    None => gain > 0.0,
                    Some(b) => gain > b.gain,
                };
                if better {
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

fn weighted_mean(ys: &[f64], weights: &[f64], indices: &[usize]) -> (f64, f64) {
    let mut w_total = 0.0;
    let mut wy = 0.0;
    for &i in indices {
        w_total += weights[i];
        wy += weights[i] * ys[i];
    }
    if w_total > 0.0 {
        (w_total, wy / w_total)
    } else {
        (0.0, 0.0)
    }
}

fn weighted_sse(ys: &[f64], weights: &[f64], indices: &[usize]) -> f64 {
    let (w_total, mean) = weighted_mean(ys, weights, indices);
    if w_total == 0.0 {
        return 0.0;
    }
    indices
        .iter()
        .map(|&i| weights[i] * (ys[i] - mean) * (ys[i] - mean))
        .sum()
}

/// Bagged ensemble: each tree sees `n` indices resampled with probability
/// proportional to the weights and is then fit with uniform weights. A
/// single-tree "forest" skips resampling and fits one deterministic weighted
/// tree, so its root predicts the exact weighted mean.
pub fn fit_forest(
    xs: &[Vec<f64>],
    ys: &[f64],
    weights: &[f64],
    n_trees: usize,
    settings: &TreeSettings,
    seed: u64,
) -> Vec<Tree> {
    let all: Vec<usize> = (0..xs.len()).collect();
    if n_trees == 1 {
        return vec![fit_tree(xs, ys, weights, &all, settings)];
    }
    let total: f64 = weights.iter().sum();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let uniform = vec![1.0 / xs.len() as f64; xs.len()];
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            // Per-tree seeded stream keeps the fit independent of scheduling.
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let indices: Vec<usize> = (0..xs.len())
                .map(|_| {
                    let u = rng.random::<f64>();
                    cumulative.partition_point(|&c| c < u).min(xs.len() - 1)
                })
                .collect();
            fit_tree(xs, ys, &uniform, &indices, settings)
        })
        .collect()
}
