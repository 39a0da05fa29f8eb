//! A deliberately naive second forest implementation: recursive nodes,
//! impurity from full rescans of every candidate cut, and rational
//! comparisons through i128 cross products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrubmap_core::evaluation::roc_auc;
use shrubmap_learners::forest::tree_rng;
use shrubmap_learners::{train_forest, Dataset, ForestParams};

enum RefNode {
    Leaf(f64),
    Cut(usize, f64, Box<RefNode>, Box<RefNode>),
}

impl RefNode {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RefNode::Leaf(p) => *p,
            RefNode::Cut(f, t, l, r) => {
                if x[*f] <= *t {
                    l.eval(x)
                } else {
                    r.eval(x)
                }
            }
        }
    }
}

/// Weighted Gini impurity of a partition times n, as numerator/denominator:
/// sum over sides of n_s - (p_s^2 + q_s^2) / n_s.
fn impurity(sides: &[(i128, i128)]) -> (i128, i128) {
    let mut num = 0i128;
    let mut den = 1i128;
    for &(p, q) in sides {
        let n = p + q;
        // num/den + (n^2 - p^2 - q^2)/n
        num = num * n + (n * n - p * p - q * q) * den;
        den *= n;
    }
    (num, den)
}

fn lower(a: (i128, i128), b: (i128, i128)) -> bool {
    a.0 * b.1 < b.0 * a.1
}

fn reference_node(x: &[Vec<f64>], y: &[bool], rows: &[usize], min_node: usize, rng: &mut ChaCha8Rng) -> RefNode {
    let pos = rows.iter().filter(|&&i| y[i]).count();
    let value = pos as f64 / rows.len() as f64;
    if rows.len() < 2 * min_node || pos == 0 || pos == rows.len() {
        return RefNode::Leaf(value);
    }
    let f = rng.random_range(0..x[0].len());
    let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut best: Option<((i128, i128), f64)> = None;
    for w in values.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let count = |left: bool, label: bool| {
            rows.iter().filter(|&&i| (x[i][f] <= t) == left && y[i] == label).count() as i128
        };
        let imp = impurity(&[(count(true, true), count(true, false)), (count(false, true), count(false, false))]);
        if best.is_none_or(|(b, _)| lower(imp, b)) {
            best = Some((imp, t));
        }
    }
    let Some((_, t)) = best else {
        return RefNode::Leaf(value);
    };
    let left: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] <= t).collect();
    let right: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] > t).collect();
    let l = reference_node(x, y, &left, min_node, rng);
    let r = reference_node(x, y, &right, min_node, rng);
    RefNode::Cut(f, t, Box::new(l), Box::new(r))
}

fn reference_forest(x: &[Vec<f64>], y: &[bool], params: &ForestParams, seed: u64) -> Vec<RefNode> {
    (0..params.n_trees)
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let m = (params.bootstrap_fraction * x.len() as f64).round() as usize;
            let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..x.len())).collect();
            reference_node(x, y, &rows, params.min_node, &mut rng)
        })
        .collect()
}

fn fixture(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Coarse values so that ties between rows are common.
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(0..40) as f64 / 4.0, rng.random::<f64>()])
        .collect();
    let y = x.iter().map(|r| r[0] / 10.0 + 0.8 * r[1] + 0.4 * rng.random::<f64>() > 1.0).collect();
    (x, y)
}

fn dataset(x: &[Vec<f64>], y: &[bool]) -> Dataset {
    Dataset::new(vec!["A".into(), "B".into()], x.concat(), y.to_vec()).unwrap()
}

#[test]
fn matches_reference_grower() {
    let (x, y) = fixture(200, 3);
    let params = ForestParams {
        n_trees: 10,
        min_node: 3,
        ..ForestParams::default()
    };
    for seed in [1, 2, 77] {
        let model = train_forest(&dataset(&x, &y), &params, seed).unwrap();
        let reference = reference_forest(&x, &y, &params, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes = x.iter().cloned().chain((0..300).map(|_| vec![rng.random::<f64>() * 10.0, rng.random()]));
        for p in probes {
            for (tree, r) in model.trees.iter().zip(&reference) {
                assert_eq!(tree.predict(&p), r.eval(&p));
            }
            let mean = reference.iter().map(|r| r.eval(&p)).sum::<f64>() / reference.len() as f64;
            assert_eq!(model.predict_row(&p), mean);
        }
    }
}

#[test]
fn separable_feature_gives_perfect_training_auc() {
    let x: Vec<Vec<f64>> = (0..300).map(|i| vec![i as f64, 0.0]).collect();
    let y: Vec<bool> = (0..300).map(|i| i >= 170).collect();
    let m = train_forest(&dataset(&x, &y), &ForestParams { n_trees: 50, ..ForestParams::default() }, 4).unwrap();
    let p: Vec<f64> = x.iter().map(|r| m.predict_row(r)).collect();
    assert_eq!(roc_auc(&y, &p).unwrap(), 1.0);
}

#[test]
fn pure_labels_give_pure_leaves() {
    let (x, _) = fixture(100, 5);
    for label in [false, true] {
        let y = vec![label; 100];
        let m = train_forest(&dataset(&x, &y), &ForestParams { n_trees: 20, ..ForestParams::default() }, 1).unwrap();
        for t in &m.trees {
            assert!(t.is_well_formed());
            assert!(t.leaves().all(|v| v == label as u8 as f64));
        }
        assert_eq!(m.predict_row(&[3.0, 0.5]), label as u8 as f64);
    }
}

#[test]
fn leaves_are_probabilities_and_thread_count_does_not_matter() {
    let (x, y) = fixture(400, 6);
    let data = dataset(&x, &y);
    let params = ForestParams { n_trees: 60, ..ForestParams::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_forest(&data, &params, 9).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert!(one.trees.iter().all(|t| t.is_well_formed() && t.leaves().all(|v| (0.0..=1.0).contains(&v))));
}

#[test]
fn empty_training_set_is_rejected() {
    let data = Dataset::new(vec!["A".into()], vec![], vec![]).unwrap();
    assert!(train_forest(&data, &ForestParams::default(), 1).is_err());
}
