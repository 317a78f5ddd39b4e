//! Random forest regression: bootstrapped CART trees with per-split random
//! feature subsets and squared-error-reduction importances.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Share of features drawn at every split; `ceil(fraction * N)` are used.
    pub feature_fraction: f64,
    /// A node is split only while it holds more than this share of the
    /// training rows. 1.0 disables splitting.
    pub min_node_fraction: f64,
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "feature_fraction must lie in (0, 1], got {}",
                self.feature_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.min_node_fraction) {
            return Err(Error::InvalidParameter(format!(
                "min_node_fraction must lie in [0, 1], got {}",
                self.min_node_fraction
            )));
        }
        Ok(())
    }

    pub fn features_per_split(&self, n_features: usize) -> usize {
        ((self.feature_fraction * n_features as f64 - 1e-9).ceil() as usize).clamp(1, n_features)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    /// Summed squared-error reduction per feature over all splits.
    pub split_gain: Vec<f64>,
}

impl RandomForest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Row order used before any sampling: lexicographic on (features, target),
/// so the fitted forest does not depend on how the caller ordered the rows.
pub(crate) fn canonical_order(x: &[Vec<f64>], y: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    idx
}

pub fn rf_fit(x: &[Vec<f64>], y: &[f64], config: &ForestConfig, seed: u64) -> Result<RandomForest> {
    config.validate()?;
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::EmptyInput("random forest needs matching, non-empty x and y"));
    }
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(Error::EmptyInput("random forest needs at least one feature"));
    }
    let order = canonical_order(x, y);
    // Column-major copy in canonical order for cache-friendly split scans.
    let columns: Vec<Vec<f64>> = (0..n_features)
        .map(|j| order.iter().map(|&i| x[i][j]).collect())
        .collect();
    let targets: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let builder = TreeBuilder {
        columns: &columns,
        targets: &targets,
        mtry: config.features_per_split(n_features),
        min_split: config.min_node_fraction * n as f64,
    };

    let grown: Vec<(Tree, Vec<f64>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            builder.grow(rows, &mut rng)
        })
        .collect();

    let mut split_gain = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, gain) in grown {
        for (total, g) in split_gain.iter_mut().zip(gain) {
            *total += g;
        }
        trees.push(tree);
    }
    Ok(RandomForest { trees, split_gain })
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    targets: &'a [f64],
    mtry: usize,
    min_split: f64,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> (Tree, Vec<f64>) {
        let mut nodes = Vec::new();
        let mut gain = vec![0.0; self.columns.len()];
        self.build(rows, rng, &mut nodes, &mut gain);
        (Tree { nodes }, gain)
    }

    fn build(
        &self,
        rows: Vec<usize>,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node>,
        gain: &mut [f64],
    ) -> u32 {
        let id = nodes.len() as u32;
        let mean = rows.iter().map(|&i| self.targets[i]).sum::<f64>() / rows.len() as f64;
        nodes.push(Node::Leaf(mean));

        let first = self.targets[rows[0]];
        let pure = rows.iter().all(|&i| self.targets[i] == first);
        if pure || rows.len() < 2 || rows.len() as f64 <= self.min_split {
            return id;
        }
        let Some(best) = self.best_split(&rows, mean, rng) else {
            return id;
        };
        gain[best.feature] += best.gain;
        let col = &self.columns[best.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| col[i] <= best.threshold);
        let left = self.build(left_rows, rng, nodes, gain);
        let right = self.build(right_rows, rng, nodes, gain);
        nodes[id as usize] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], mean: f64, rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let n = rows.len();
        let sse: f64 = rows
            .iter()
            .map(|&i| (self.targets[i] - mean).powi(2))
            .sum();
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        let total: f64 = rows.iter().map(|&i| self.targets[i]).sum();
        for feature in sample(rng, self.columns.len(), self.mtry).into_iter() {
            let col = &self.columns[feature];
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (col[i], self.targets[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += pairs[k].1;
                let (lo, hi) = (pairs[k].0, pairs[k + 1].0);
                if lo == hi {
                    continue;
                }
                let n_left = (k + 1) as f64;
                let n_right = (n - k - 1) as f64;
                let diff = left_sum / n_left - (total - left_sum) / n_right;
                let g = n_left * n_right / n as f64 * diff * diff;
                if g > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(BestSplit {
                        feature,
                        threshold: if mid < hi { mid } else { lo },
                        gain: g,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * sse)
    }
}

/// Features ranked by their normalized share of squared-error reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    /// (name, weight) in descending weight; ties keep the original order.
    pub ranking: Vec<(String, f64)>,
}

impl FeatureImportance {
    pub fn from_gains(names: &[String], gains: &[f64]) -> Self {
        let total: f64 = gains.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            gains.iter().map(|g| g / total).collect()
        } else {
            log::warn!("no split in any tree; reporting uniform feature importance");
            vec![1.0 / gains.len() as f64; gains.len()]
        };
        let mut ranking: Vec<(String, f64)> = names.iter().cloned().zip(weights).collect();
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
        FeatureImportance { ranking }
    }

    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.ranking.iter().position(|(n, _)| n == name)
    }
}

/// The `n_select` most important feature names.
pub fn select_features(importance: &FeatureImportance, n_select: usize) -> Result<Vec<String>> {
    let n = importance.ranking.len();
    if n_select == 0 || n_select > n {
        return Err(Error::InvalidParameter(format!(
            "cannot select {n_select} of {n} features"
        )));
    }
    Ok(importance.ranking[..n_select]
        .iter()
        .map(|(name, _)| name.clone())
        .collect())
}
