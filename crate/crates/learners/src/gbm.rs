//! Histogram gradient boosting with leaf-wise trees on the binary log-loss.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{LearnError, Result};
use crate::tree::{Node, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub min_per_bin: usize,
    pub max_bins: usize,
    pub l1: f64,
    pub l2: f64,
    /// Share of rows each tree sees, drawn without replacement.
    pub bagging_fraction: f64,
    /// Share of features each tree may split on.
    pub feature_fraction: f64,
    pub min_child_hessian: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            n_trees: 2500,
            max_leaves: 14,
            learning_rate: 0.01,
            min_leaf: 10,
            min_per_bin: 3,
            max_bins: 255,
            l1: 0.0,
            l2: 0.5,
            bagging_fraction: 0.5,
            feature_fraction: 0.9,
            min_child_hessian: 1e-3,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if self.max_leaves < 2 || self.min_leaf == 0 || self.min_per_bin == 0 || self.max_bins < 2 {
            return Err(LearnError::Parameter(
                "boosting needs at least 2 leaves and bins and positive minimum counts".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.l1 < 0.0 || self.l2 < 0.0 {
            return Err(LearnError::Parameter("learning rate must be positive, penalties nonnegative".into()));
        }
        if !frac(self.bagging_fraction) || !frac(self.feature_fraction) {
            return Err(LearnError::Parameter("bagging and feature fractions must lie in (0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub params: GbmParams,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbmModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary log-loss of raw scores.
pub fn log_loss(scores: &[f64], y: &[bool]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(&z, &l)| {
            // log(1 + e^z) - l*z, computed stably.
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - if l { z } else { 0.0 }
        })
        .sum::<f64>()
        / scores.len() as f64
}

/// Upper bin edges per feature: every bin holds at least `min_per_bin`
/// training rows and distinct values never straddle an edge.
pub fn bin_edges(values: &[f64], min_per_bin: usize, max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let per_bin = min_per_bin.max(n.div_ceil(max_bins));
    let mut edges = Vec::new();
    let mut count = 0;
    let mut k = 0;
    while k < n {
        let v = sorted[k];
        let mut run = 0;
        while k < n && sorted[k] == v {
            k += 1;
            run += 1;
        }
        count += run;
        if count >= per_bin && k < n && n - k >= min_per_bin {
            edges.push(0.5 * (v + sorted[k]));
            count = 0;
        }
    }
    edges
}

fn bin_of(edges: &[f64], v: f64) -> u16 {
    edges.partition_point(|&e| e < v) as u16
}

fn soft(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn sub(&self, o: &Stats) -> Stats {
        Stats {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: u16,
}

struct Grower<'a> {
    params: &'a GbmParams,
    bins: &'a [Vec<u16>],
    edges: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    features: Vec<usize>,
}

impl Grower<'_> {
    fn objective(&self, s: &Stats) -> f64 {
        soft(s.g, self.params.l1).powi(2) / (s.h + self.params.l2)
    }

    fn leaf_value(&self, s: &Stats) -> f64 {
        -soft(s.g, self.params.l1) / (s.h + self.params.l2)
    }

    fn stats(&self, rows: &[u32]) -> Stats {
        let mut s = Stats::default();
        for &i in rows {
            s.add(self.grad[i as usize], self.hess[i as usize]);
        }
        s
    }

    /// Best split of a leaf; equal gains keep the earlier feature and bin.
    fn best_split(&self, rows: &[u32], total: &Stats) -> Option<Candidate> {
        let parent = self.objective(total);
        let mut best: Option<Candidate> = None;
        for &f in &self.features {
            let nb = self.edges[f].len() + 1;
            if nb < 2 {
                continue;
            }
            let mut hist = vec![Stats::default(); nb];
            let col = &self.bins[f];
            for &i in rows {
                hist[col[i as usize] as usize].add(self.grad[i as usize], self.hess[i as usize]);
            }
            let mut left = Stats::default();
            for (b, h) in hist.iter().enumerate().take(nb - 1) {
                left.g += h.g;
                left.h += h.h;
                left.n += h.n;
                let right = total.sub(&left);
                if left.n < self.params.min_leaf || right.n < self.params.min_leaf {
                    continue;
                }
                if left.h < self.params.min_child_hessian || right.h < self.params.min_child_hessian {
                    continue;
                }
                let gain = self.objective(&left) + self.objective(&right) - parent;
                if gain > 1e-12 && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        bin: b as u16,
                    });
                }
            }
        }
        best
    }

    fn grow(&self, rows: Vec<u32>) -> Tree {
        struct Open {
            node: usize,
            rows: Vec<u32>,
            split: Option<Candidate>,
        }
        let mut tree = Tree::default();
        let root_stats = self.stats(&rows);
        tree.nodes.push(Node::Leaf {
            value: self.leaf_value(&root_stats),
        });
        let split = self.best_split(&rows, &root_stats);
        let mut open = vec![Open {
            node: 0,
            rows,
            split,
        }];
        let mut leaves = 1;
        while leaves < self.params.max_leaves {
            let Some(k) = open
                .iter()
                .enumerate()
                .filter_map(|(k, o)| o.split.map(|c| (k, c.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (k, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((k, g)),
                })
                .map(|(k, _)| k)
            else {
                break;
            };
            let leaf = open.swap_remove(k);
            let c = leaf.split.expect("chosen leaf has a split");
            let col = &self.bins[c.feature];
            let (l, r): (Vec<u32>, Vec<u32>) = leaf.rows.into_iter().partition(|&i| col[i as usize] <= c.bin);
            let mut children = Vec::with_capacity(2);
            for part in [l, r] {
                let stats = self.stats(&part);
                let id = tree.nodes.len();
                tree.nodes.push(Node::Leaf {
                    value: self.leaf_value(&stats),
                });
                let split = self.best_split(&part, &stats);
                children.push(id);
                open.push(Open {
                    node: id,
                    rows: part,
                    split,
                });
            }
            tree.nodes[leaf.node] = Node::Split {
                feature: c.feature as u32,
                threshold: self.edges[c.feature][c.bin as usize],
                left: children[0] as u32,
                right: children[1] as u32,
            };
            leaves += 1;
        }
        tree
    }
}

/// Per-iteration hook receiving the iteration index and the training scores.
pub type IterationHook<'a> = &'a mut dyn FnMut(usize, &[f64]);

pub fn train_gbm(data: &Dataset, params: &GbmParams, seed: u64) -> Result<GbmModel> {
    train_gbm_with(data, params, seed, &mut |_, _| {})
}

pub fn train_gbm_with(data: &Dataset, params: &GbmParams, seed: u64, hook: IterationHook) -> Result<GbmModel> {
    params.validate()?;
    let n = data.len();
    if n < params.min_leaf || data.n_features() == 0 {
        return Err(LearnError::EmptyTraining);
    }
    let pos = data.positives();
    let prevalence = (pos as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let mut model = GbmModel {
        params: params.clone(),
        feature_names: data.names.clone(),
        base_score,
        trees: Vec::new(),
    };
    if pos == 0 || pos == n {
        warn!("boosting on single-class labels; the model is a constant");
        return Ok(model);
    }

    let d = data.n_features();
    let edges: Vec<Vec<f64>> = (0..d)
        .map(|f| {
            let col: Vec<f64> = data.rows().map(|r| r[f]).collect();
            bin_edges(&col, params.min_per_bin, params.max_bins)
        })
        .collect();
    let bins: Vec<Vec<u16>> = (0..d)
        .map(|f| data.rows().map(|r| bin_of(&edges[f], r[f])).collect())
        .collect();

    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let n_bag = ((params.bagging_fraction * n as f64).round() as usize).clamp(1, n);
    let n_feat = ((params.feature_fraction * d as f64).round() as usize).clamp(1, d);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - if data.y[i] { 1.0 } else { 0.0 };
            hess[i] = p * (1.0 - p);
        }
        let mut rows: Vec<u32> = if n_bag < n {
            rand::seq::index::sample(&mut rng, n, n_bag).into_iter().map(|i| i as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        rows.sort_unstable();
        let mut features: Vec<usize> = if n_feat < d {
            rand::seq::index::sample(&mut rng, d, n_feat).into_vec()
        } else {
            (0..d).collect()
        };
        features.sort_unstable();
        let grower = Grower {
            params,
            bins: &bins,
            edges: &edges,
            grad: &grad,
            hess: &hess,
            features,
        };
        let mut tree = grower.grow(rows);
        for node in &mut tree.nodes {
            if let Node::Leaf { value } = node {
                *value *= params.learning_rate;
            }
        }
        for (i, s) in scores.iter_mut().enumerate() {
            *s += tree.predict(data.row(i));
        }
        model.trees.push(tree);
        hook(t, &scores);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let y = x
            .chunks(d)
            .map(|r| r[0] + 0.5 * r[1 % d] + 0.6 * rng.random::<f64>() > 1.0)
            .collect();
        Dataset::new((0..d).map(|j| format!("F{j}")).collect(), x, y).unwrap()
    }

    #[test]
    fn constant_labels_give_base_logit_and_no_trees() {
        let mut data = random_data(50, 2, 1);
        data.y = vec![false; 50];
        let m = train_gbm(&data, &GbmParams::default(), 3).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.base_score, (1e-12f64 / (1.0 - 1e-12)).ln());
        assert!(m.predict_row(&[0.3, 0.3]) < 1e-11);
    }

    #[test]
    fn base_score_is_logit_of_prevalence() {
        let data = random_data(200, 3, 2);
        let p = data.positives() as f64 / 200.0;
        let m = train_gbm(&data, &GbmParams { n_trees: 0, ..GbmParams::default() }, 1).unwrap();
        assert!((sigmoid(m.base_score) - p).abs() < 1e-12);
    }

    #[test]
    fn full_data_loss_never_increases() {
        let params = GbmParams {
            n_trees: 100,
            bagging_fraction: 1.0,
            feature_fraction: 1.0,
            ..GbmParams::default()
        };
        let data = random_data(400, 4, 5);
        let mut losses = Vec::new();
        train_gbm_with(&data, &params, 9, &mut |_, s| losses.push(log_loss(s, &data.y))).unwrap();
        assert_eq!(losses.len(), 100);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
        assert!(losses[99] < losses[0]);
    }

    #[test]
    fn step_threshold_found_within_one_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let y = x.iter().map(|&v| v > 0.37).collect();
        let data = Dataset::new(vec!["X".into()], x.clone(), y).unwrap();
        let params = GbmParams {
            n_trees: 1,
            max_leaves: 2,
            bagging_fraction: 1.0,
            feature_fraction: 1.0,
            ..GbmParams::default()
        };
        let m = train_gbm(&data, &params, 1).unwrap();
        let Node::Split { threshold, .. } = m.trees[0].nodes[0] else {
            panic!("no split")
        };
        let edges = bin_edges(&x, params.min_per_bin, params.max_bins);
        let k = edges.partition_point(|&e| e < 0.37);
        let lo = if k == 0 { 0.0 } else { edges[k - 1] };
        let hi = edges.get(k).copied().unwrap_or(1.0);
        assert!(threshold >= lo && threshold <= hi, "{threshold} outside [{lo}, {hi}]");
    }

    #[test]
    fn trees_respect_leaf_limit_and_are_deterministic() {
        let data = random_data(600, 5, 8);
        let params = GbmParams {
            n_trees: 40,
            learning_rate: 0.1,
            ..GbmParams::default()
        };
        let a = train_gbm(&data, &params, 11).unwrap();
        assert!(a.trees.iter().all(|t| t.n_leaves() <= 14 && t.is_well_formed()));
        assert!(a.trees.iter().any(|t| t.n_leaves() > 2));
        assert_eq!(a, train_gbm(&data, &params, 11).unwrap());
        assert_ne!(a, train_gbm(&data, &params, 12).unwrap());
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let data = random_data(5, 2, 1);
        assert!(matches!(train_gbm(&data, &GbmParams::default(), 1), Err(LearnError::EmptyTraining)));
    }

    proptest! {
        #[test]
        fn bins_hold_enough_rows(values in proptest::collection::vec(0u8..40, 1..300), min in 1usize..6) {
            let v: Vec<f64> = values.iter().map(|&b| b as f64).collect();
            let edges = bin_edges(&v, min, 255);
            prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
            let mut counts = vec![0usize; edges.len() + 1];
            for &x in &v {
                counts[bin_of(&edges, x) as usize] += 1;
            }
            if !edges.is_empty() {
                prop_assert!(counts.iter().all(|&c| c >= min), "{counts:?}");
            }
        }
    }
}
