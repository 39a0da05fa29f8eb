//! Random forest of Gini-split classification trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{LearnError, Result};
use crate::tree::{Node, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Bootstrap size as a fraction of the training rows, drawn with replacement.
    pub bootstrap_fraction: f64,
    pub min_node: usize,
    pub features_per_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 3000,
            bootstrap_fraction: 0.2,
            min_node: 6,
            features_per_split: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

/// Generator for tree `t`: the master seed with its own stream.
pub fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Scaled Gini purity of a split, `sum over children of (pos² + neg²) / n`,
/// as an exact fraction `num / den`. Larger is better.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(lp: u64, ln: u64, rp: u64, rn: u64) -> Self {
        let (nl, nr) = ((lp + ln) as u128, (rp + rn) as u128);
        let sl = (lp as u128).pow(2) + (ln as u128).pow(2);
        let sr = (rp as u128).pow(2) + (rn as u128).pow(2);
        Self {
            num: sl * nr + sr * nl,
            den: nl * nr,
        }
    }

    fn beats(&self, other: &Self) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Best threshold on one feature: (purity, threshold), with equal purities
/// resolved to the smallest threshold.
fn best_threshold(data: &Dataset, rows: &[u32], feature: usize) -> Option<(Purity, f64)> {
    let mut pairs: Vec<(f64, bool)> = rows
        .iter()
        .map(|&i| (data.row(i as usize)[feature], data.y[i as usize]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos = pairs.iter().filter(|p| p.1).count() as u64;
    let total_neg = pairs.len() as u64 - total_pos;
    let (mut lp, mut ln) = (0u64, 0u64);
    let mut best: Option<(Purity, f64)> = None;
    for k in 0..pairs.len() - 1 {
        if pairs[k].1 {
            lp += 1;
        } else {
            ln += 1;
        }
        if pairs[k].0 == pairs[k + 1].0 {
            continue;
        }
        let p = Purity::of(lp, ln, total_pos - lp, total_neg - ln);
        if best.as_ref().is_none_or(|(b, _)| p.beats(b)) {
            best = Some((p, 0.5 * (pairs[k].0 + pairs[k + 1].0)));
        }
    }
    best
}

/// Grows one tree: the bootstrap is drawn first, then nodes are expanded
/// depth first, left before right, drawing split features only at nodes
/// that pass the size and purity checks.
pub fn grow_tree(data: &Dataset, params: &ForestParams, rng: &mut ChaCha8Rng) -> Tree {
    let n = data.len();
    let m = ((params.bootstrap_fraction * n as f64).round() as usize).max(1);
    let rows: Vec<u32> = (0..m).map(|_| rng.random_range(0..n) as u32).collect();
    let mut tree = Tree::default();
    grow_node(data, params, rng, rows, &mut tree);
    tree
}

fn grow_node(data: &Dataset, params: &ForestParams, rng: &mut ChaCha8Rng, rows: Vec<u32>, tree: &mut Tree) -> u32 {
    let id = tree.nodes.len() as u32;
    let pos = rows.iter().filter(|&&i| data.y[i as usize]).count();
    let leaf = Node::Leaf {
        value: pos as f64 / rows.len() as f64,
    };
    tree.nodes.push(leaf.clone());
    if rows.len() < 2 * params.min_node || pos == 0 || pos == rows.len() {
        return id;
    }
    let d = data.n_features();
    let candidates: Vec<usize> = if params.features_per_split == 1 {
        vec![rng.random_range(0..d)]
    } else {
        rand::seq::index::sample(rng, d, params.features_per_split.min(d)).into_vec()
    };
    let mut best: Option<(Purity, usize, f64)> = None;
    for f in candidates {
        if let Some((p, t)) = best_threshold(data, &rows, f) {
            if best.as_ref().is_none_or(|(b, _, _)| p.beats(b)) {
                best = Some((p, f, t));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return id;
    };
    let (l, r): (Vec<u32>, Vec<u32>) = rows
        .into_iter()
        .partition(|&i| data.row(i as usize)[feature] <= threshold);
    let left = grow_node(data, params, rng, l, tree);
    let right = grow_node(data, params, rng, r, tree);
    tree.nodes[id as usize] = Node::Split {
        feature: feature as u32,
        threshold,
        left,
        right,
    };
    id
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_node == 0 || self.features_per_split == 0 {
            return Err(LearnError::Parameter(
                "forest needs positive tree count, node size and features per split".into(),
            ));
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction.is_finite()) {
            return Err(LearnError::Parameter(format!(
                "bootstrap fraction must be positive, got {}",
                self.bootstrap_fraction
            )));
        }
        Ok(())
    }
}

pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    if data.is_empty() || data.n_features() == 0 {
        return Err(LearnError::EmptyTraining);
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(data, params, &mut tree_rng(seed, t)))
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        feature_names: data.names.clone(),
        trees,
    })
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean of per-tree leaf probabilities.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}
