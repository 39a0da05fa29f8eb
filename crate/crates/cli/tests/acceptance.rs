//! The ten acceptance checks, run in order inside one test so that their
//! timings are not polluted by each other. Each prints a PASS or FAIL line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shrubmap_cli::{run_pipeline, Artifacts, PipelineConfig};
use shrubmap_core::evaluation::{
    build_validation_plan, confusion, f1_score, hex_area, metrics, roc_auc, roc_curve, specificity_threshold,
    trapezoid_auc, youden_threshold, ThresholdSet, STRATUM_BIN,
};
use shrubmap_core::kv::KeyValues;
use shrubmap_core::predictors::segmentation::tie_tolerance;
use shrubmap_core::predictors::{segment_series, AnnualSeries};
use shrubmap_core::raster::{aggregate_majority, GridTransform, Raster, BYTE_NODATA, FLOAT_NODATA};
use shrubmap_learners::gbm::{train_gbm_with, GbmParams};
use shrubmap_learners::mlp::{MlpParams, Network};
use shrubmap_learners::Dataset;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Outcome {
    pass: bool,
}

fn criterion(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let t = Instant::now();
    let result = f();
    let took = t.elapsed();
    let (pass, detail) = match result {
        Ok(d) if took < limit => (true, d),
        Ok(d) => (false, format!("{d}; too slow")),
        Err(e) => (false, e),
    };
    println!(
        "{} criterion {id:>2} {name}: {detail} [{:.2?} of {:?}]",
        if pass { "PASS" } else { "FAIL" },
        took,
        limit
    );
    Outcome { pass }
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> (Vec<bool>, Vec<f64>) {
    // Ties are common when scores come from a handful of levels.
    let levels = match rng.random_range(0..3) {
        0 => 0,
        1 => rng.random_range(2..20),
        _ => rng.random_range(20..400),
    };
    let shift = rng.random_range(0.0..1.5);
    let prevalence = rng.random_range(0.05..0.95);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    let scores = labels
        .iter()
        .map(|&l| {
            let v: f64 = rng.random::<f64>() + if l { shift } else { 0.0 };
            if levels == 0 {
                v
            } else {
                (v * levels as f64).floor() / levels as f64
            }
        })
        .collect();
    (labels, scores)
}

fn both_classes(labels: &[bool]) -> bool {
    labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
}

// Metric formulas against direct counting.
fn metric_formulas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let n = rng.random_range(0..60);
        let (labels, scores) = random_scores(&mut rng, n);
        let t = rng.random_range(-0.2..2.0);
        let c = confusion(&labels, &scores, t).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            let pred = scores[i] >= t;
            match (labels[i], pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        ensure((c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_), || format!("case {case}: counts {c:?}"))?;
        let m = metrics(&c);
        // IEEE division is correctly rounded, so these are the exact ratios.
        let q = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        let f1 = if tp > 0 { q(2 * tp, 2 * tp + fp + fn_) } else { None };
        ensure(m.sensitivity == q(tp, tp + fn_), || format!("case {case}: sensitivity"))?;
        ensure(m.specificity == q(tn, tn + fp), || format!("case {case}: specificity"))?;
        ensure(m.precision == q(tp, tp + fp), || format!("case {case}: precision"))?;
        ensure(m.f1 == f1, || format!("case {case}: f1 {:?} vs {f1:?}", m.f1))?;
    }
    let published = [(0.842, 0.791, 0.816), (0.514, 0.219, 0.307), (0.247, 0.376, 0.298)];
    for (s, p, want) in published {
        let got = f1_score(p, s).ok_or("undefined f1")?;
        ensure((got - want).abs() <= 0.001, || format!("f1({s}, {p}) = {got:.4}, want {want}"))?;
    }
    Ok("1000 tables exact, published F1 values reproduced".into())
}

/// Mann-Whitney U from mid-ranks.
fn midrank_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}

fn auc_duality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut sets = 0;
    while sets < 100 {
        let (labels, scores) = random_scores(&mut rng, 10_000);
        if !both_classes(&labels) {
            continue;
        }
        sets += 1;
        let rank = roc_auc(&labels, &scores).map_err(|e| e.to_string())?;
        let trap = trapezoid_auc(&roc_curve(&labels, &scores).map_err(|e| e.to_string())?);
        let mid = midrank_auc(&labels, &scores);
        worst = worst.max((rank - trap).abs()).max((rank - mid).abs());
    }
    ensure(worst <= 1e-9, || format!("rank and trapezoid areas differ by {worst:e}"))?;
    let labels: Vec<bool> = (0..500).map(|i| i % 3 == 0).collect();
    let flat = vec![0.42; 500];
    let a = roc_auc(&labels, &flat).map_err(|e| e.to_string())?;
    ensure(a == 0.5, || format!("constant scores gave {a}"))?;
    Ok(format!("100 sets agree within {worst:.1e}, constant scores give 0.5"))
}

fn threshold_calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut fixtures = 0;
    while fixtures < 200 {
        let n = rng.random_range(2..=5000);
        let (labels, scores) = random_scores(&mut rng, n);
        if !both_classes(&labels) {
            continue;
        }
        fixtures += 1;
        let p = labels.iter().filter(|&&l| l).count() as u128;
        let neg = n as u128 - p;
        let mut candidates: Vec<f64> = scores.clone();
        candidates.push(f64::INFINITY);
        candidates.sort_by(|a, b| b.total_cmp(a));
        candidates.dedup();
        // (threshold, tp, tn) by a full pass per candidate.
        let tables: Vec<(f64, u128, u128)> = candidates
            .iter()
            .map(|&t| {
                let mut tp = 0;
                let mut tn = 0;
                for (&l, &s) in labels.iter().zip(&scores) {
                    if l && s >= t {
                        tp += 1;
                    }
                    if !l && s < t {
                        tn += 1;
                    }
                }
                (t, tp, tn)
            })
            .collect();
        // Youden: maximal J, the higher threshold among equals.
        let mut best = tables[0];
        for &row in &tables {
            if row.1 * neg + row.2 * p > best.1 * neg + best.2 * p {
                best = row;
            }
        }
        let youden = youden_threshold(&labels, &scores).map_err(|e| e.to_string())?;
        ensure(youden == best.0, || format!("fixture {fixtures}: youden {youden} vs {}", best.0))?;

        let mut previous = f64::NEG_INFINITY;
        for target in [0.90, 0.95, 0.99] {
            let want = tables
                .iter()
                .filter(|r| r.2 as f64 / neg as f64 >= target)
                .map(|r| r.0)
                .fold(f64::INFINITY, f64::min);
            let got = specificity_threshold(&labels, &scores, target).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("fixture {fixtures}: spec{target} {got} vs {want}"))?;
            ensure(got >= previous, || format!("fixture {fixtures}: thresholds decrease"))?;
            previous = got;
            let c = confusion(&labels, &scores, got).map_err(|e| e.to_string())?;
            let achieved = c.tn as f64 / (c.tn + c.fp) as f64;
            ensure(achieved >= target, || format!("fixture {fixtures}: specificity {achieved} < {target}"))?;
        }
        let set = ThresholdSet::calibrate(&labels, &scores, &[0.99, 0.9, 0.95]).map_err(|e| e.to_string())?;
        ensure(set.youden == youden, || "calibrated set disagrees".into())?;
        ensure(set.specificity.iter().map(|s| s.0).eq([0.9, 0.95, 0.99]), || "targets not sorted".into())?;
    }
    Ok("200 fixtures match the exhaustive scan".into())
}

fn label_aggregation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let fine = GridTransform::new(500_000.0, 4_700_090.0, 1.0, 90, 90).map_err(|e| e.to_string())?;
    let run = |cells: Vec<u8>| -> Result<Vec<u8>, String> {
        let r = Raster::boolean(fine, BYTE_NODATA, cells).map_err(|e| e.to_string())?;
        let out = aggregate_majority(&r, 30, 0.5).map_err(|e| e.to_string())?;
        Ok(out.as_u8().ok_or("not a byte raster")?.to_vec())
    };
    for grid in 0..100 {
        let density = rng.random_range(0.3..0.7);
        let cells: Vec<u8> = (0..90 * 90)
            .map(|_| match rng.random_range(0.0..1.0) {
                x if x < 0.03 => BYTE_NODATA,
                x if x < density => 1,
                _ => 0,
            })
            .collect();
        let got = run(cells.clone())?;
        for by in 0..3 {
            for bx in 0..3 {
                let mut count = 0;
                for y in by * 30..by * 30 + 30 {
                    for x in bx * 30..bx * 30 + 30 {
                        count += (cells[y * 90 + x] == 1) as usize;
                    }
                }
                let want = (2 * count > 900) as u8;
                ensure(got[by * 3 + bx] == want, || format!("grid {grid} block ({bx},{by}): {count}/900"))?;
            }
        }
    }
    for (ones, want) in [(451, 1u8), (450, 0u8)] {
        let mut cells = vec![0u8; 90 * 90];
        // Scatter the true cells through the centre block only.
        let mut placed = 0;
        'fill: for y in 30..60 {
            for x in 30..60 {
                if placed == ones {
                    break 'fill;
                }
                cells[y * 90 + x] = 1;
                placed += 1;
            }
        }
        let got = run(cells)?;
        ensure(got[4] == want, || format!("{ones}/900 gave {}", got[4]))?;
    }
    Ok("100 grids match the block counter, 451/900 true and 450/900 false".into())
}

/// Least-squares SSE of a continuous piecewise-linear fit through fixed
/// vertex years, solved by SVD.
fn svd_sse(years: &[i32], values: &[f64], verts: &[i32]) -> f64 {
    let m = verts.len();
    let a = DMatrix::from_fn(years.len(), m, |i, k| {
        let t = years[i];
        let seg = verts.windows(2).position(|w| t >= w[0] && t <= w[1]).unwrap();
        let w = (t - verts[seg]) as f64 / (verts[seg + 1] - verts[seg]) as f64;
        if k == seg {
            1.0 - w
        } else if k == seg + 1 {
            w
        } else {
            0.0
        }
    });
    let b = DVector::from_column_slice(values);
    let beta = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
    (a * beta - b).norm_squared()
}

fn segmentation_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for case in 0..100 {
        let n = rng.random_range(2..=12);
        let max_segments = rng.random_range(1..=4);
        let mut years = vec![1990 + rng.random_range(0..5)];
        while years.len() < n {
            let last = *years.last().unwrap();
            years.push(last + rng.random_range(1..=2));
        }
        let values: Vec<f64> = match case % 4 {
            // A clean break with a little noise.
            0 => years
                .iter()
                .map(|&y| if y < years[n / 2] { 0.7 } else { 0.2 } + rng.random_range(-0.02..0.02))
                .collect(),
            // Exactly linear: every vertex set ties at zero error.
            1 => years.iter().map(|&y| 0.1 + 0.03 * (y - years[0]) as f64).collect(),
            _ => years.iter().map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let series = AnnualSeries::new(years.clone(), values.clone()).map_err(|e| e.to_string())?;
        let fit = segment_series(&series, max_segments).map_err(|e| e.to_string())?;

        let interior = &years[1..n - 1];
        let tol = tie_tolerance(&values);
        let mut all: Vec<(Vec<i32>, f64)> = Vec::new();
        for mask in 0u32..(1 << interior.len()) {
            if mask.count_ones() as usize + 1 > max_segments {
                continue;
            }
            let mut verts = vec![years[0]];
            verts.extend(interior.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &y)| y));
            verts.push(years[n - 1]);
            let sse = svd_sse(&years, &values, &verts);
            all.push((verts, sse));
        }
        let best = all.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
        let (verts, sse) = all
            .into_iter()
            .filter(|a| a.1 <= best + tol)
            .min_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)))
            .unwrap();
        ensure((fit.sse() - sse).abs() <= 1e-9, || format!("case {case}: sse {} vs {sse}", fit.sse()))?;
        ensure(fit.vertex_years() == verts.as_slice(), || {
            format!("case {case}: vertices {:?} vs {verts:?}", fit.vertex_years())
        })?;
    }
    Ok("100 series match exhaustive enumeration".into())
}

/// Mean cross-entropy of the network on column-major samples, computed with
/// a plain forward pass.
fn plain_loss(net: &Network, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..x.ncols() {
        let mut a: Vec<f64> = x.column(j).iter().copied().collect();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut z = layer.b.clone();
            for (k, ak) in a.iter().enumerate() {
                let col = &layer.w[k * layer.outputs..(k + 1) * layer.outputs];
                for (zo, w) in z.iter_mut().zip(col) {
                    *zo += w * ak;
                }
            }
            if l + 1 < net.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let p = 1.0 / (1.0 + (-a[0]).exp());
        total -= y[j] * p.ln() + (1.0 - y[j]) * (1.0 - p).ln();
    }
    total / x.ncols() as f64
}

fn param(net: &mut Network, l: usize, bias: bool, k: usize) -> &mut f64 {
    if bias {
        &mut net.layers[l].b[k]
    } else {
        &mut net.layers[l].w[k]
    }
}

fn mlp_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let inputs = 8;
    let mut net = Network::he_init(inputs, &MlpParams::default().hidden, &mut rng);
    // Small positive biases keep units off the ReLU kink, where finite
    // differences are meaningless.
    for layer in &mut net.layers {
        layer.b.iter_mut().for_each(|b| *b = rng.random_range(0.05..0.3));
    }
    let x = DMatrix::from_fn(inputs, 20, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..20).map(|j| (j % 2) as f64).collect();
    let (_, grads) = net.loss_and_gradients(&x, &y, None);

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = |net: &mut Network, l: usize, bias: bool, k: usize, analytic: f64| {
        let orig = *param(net, l, bias, k);
        *param(net, l, bias, k) = orig + h;
        let up = plain_loss(net, &x, &y);
        *param(net, l, bias, k) = orig - h;
        let down = plain_loss(net, &x, &y);
        *param(net, l, bias, k) = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    };
    for l in 0..net.layers.len() {
        let nw = net.layers[l].w.len();
        // Every weight of the small layers, an even spread of the large ones.
        let stride = (nw / 400).max(1);
        for k in (0..nw).step_by(stride) {
            probe(&mut net, l, false, k, grads[l].w[k]);
        }
        for k in 0..net.layers[l].b.len() {
            probe(&mut net, l, true, k, grads[l].b[k]);
        }
    }
    ensure(worst < 1e-4, || format!("relative error {worst:e} over {checked} parameters"))?;
    Ok(format!("{checked} parameters across {} layers, worst relative error {worst:.1e}", net.layers.len()))
}

fn gbm_monotonicity() -> Check {
    let params = GbmParams {
        n_trees: 100,
        bagging_fraction: 1.0,
        feature_fraction: 1.0,
        ..GbmParams::default()
    };
    let mut report = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let (n, d) = (600, 5);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<bool> = (0..n)
            .map(|i| {
                let r = &x[i * d..(i + 1) * d];
                let z = 1.5 * r[0] - r[1] * r[2] + 0.5 * r[3].abs();
                rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * z).exp())
            })
            .collect();
        let names = (0..d).map(|k| format!("X{k}")).collect();
        let data = Dataset::new(names, x, y.clone()).map_err(|e| e.to_string())?;
        let loss = |scores: &[f64]| -> f64 {
            scores
                .iter()
                .zip(&y)
                .map(|(&z, &l)| {
                    let p = 1.0 / (1.0 + (-z).exp());
                    -(if l { p.ln() } else { (1.0 - p).ln() })
                })
                .sum::<f64>()
                / n as f64
        };
        let prevalence = y.iter().filter(|&&l| l).count() as f64 / n as f64;
        let mut losses = vec![loss(&vec![(prevalence / (1.0 - prevalence)).ln(); n])];
        train_gbm_with(&data, &params, seed, &mut |_, s| losses.push(loss(s))).map_err(|e| e.to_string())?;
        ensure(losses.len() == 101, || format!("{} iterations observed", losses.len() - 1))?;
        // Allow for rounding in the loss itself, not in the model.
        if let Some(k) = losses.windows(2).position(|w| w[1] > w[0] + 1e-12) {
            return Err(format!("dataset {seed}: loss rose at iteration {}: {} -> {}", k + 1, losses[k], losses[k + 1]));
        }
        report.push(format!("{:.4}->{:.4}", losses[0], losses[100]));
    }
    Ok(format!("loss nonincreasing on 3 datasets ({})", report.join(", ")))
}

fn stratum_oracle(p: f64) -> usize {
    let edges = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0];
    edges.iter().position(|&e| p <= e).unwrap()
}

fn check_plan(prob: &Raster, apothem_km: f64, seed: u64) -> Result<usize, String> {
    let plan = build_validation_plan(prob, apothem_km, 5, seed).map_err(|e| e.to_string())?;
    let again = build_validation_plan(prob, apothem_km, 5, seed).map_err(|e| e.to_string())?;
    ensure(plan == again, || "plan differs between equal seeds".into())?;
    let t = *prob.transform();
    let values = prob.as_f32().ok_or("not a float raster")?;
    let centers: Vec<(f64, f64)> = plan.hexagons.iter().map(|h| h.center).collect();
    // Pixels per hexagon and stratum, by nearest plan centre.
    let mut tally: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut mapped = vec![0usize; centers.len()];
    for row in 0..t.height() {
        for col in 0..t.width() {
            let i = t.index(col, row);
            if prob.is_nodata_at(i) {
                continue;
            }
            let (x, y) = t.pixel_center(col, row);
            let mut d: Vec<(f64, usize)> =
                centers.iter().enumerate().map(|(k, c)| ((c.0 - x).hypot(c.1 - y), k)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            if d.len() > 1 && d[1].0 - d[0].0 < 1e-6 {
                return Err(format!("pixel ({col},{row}) sits on a hexagon edge"));
            }
            mapped[d[0].1] += 1;
            *tally.entry((d[0].1, stratum_oracle(values[i] as f64))).or_default() += 1;
        }
    }
    let pixel_km2 = t.resolution() * t.resolution() / 1e6;
    let mut drawn = 0;
    for (k, hex) in plan.hexagons.iter().enumerate() {
        ensure(hex.mapped_pixels == mapped[k], || format!("hexagon {k}: {} mapped vs {}", hex.mapped_pixels, mapped[k]))?;
        let fraction = (mapped[k] as f64 * pixel_km2 / hex_area(apothem_km)).min(1.0);
        let target = (5.0 * fraction).round() as usize;
        for s in &hex.strata {
            let population = tally.get(&(k, s.stratum)).copied().unwrap_or(0);
            ensure(s.population == population, || format!("hexagon {k} stratum {}: population", s.stratum))?;
            ensure(s.target == target, || format!("hexagon {k}: target {} vs {target}", s.target))?;
            ensure(s.pixels.len() == target.min(population), || format!("hexagon {k} stratum {}: drew {}", s.stratum, s.pixels.len()))?;
            for px in &s.pixels {
                ensure(stratum_oracle(px.prob) == s.stratum, || format!("pixel prob {} in stratum {}", px.prob, s.stratum))?;
            }
            drawn += s.pixels.len();
        }
    }
    Ok(drawn)
}

fn hex_geometry() -> Check {
    let area = hex_area(70.0);
    ensure((area - 16_974.0).abs() <= 1.0, || format!("hex_area(70) = {area}"))?;
    // The two extreme sub-bins at each end share one reporting bin.
    ensure(STRATUM_BIN[0] == STRATUM_BIN[1] && STRATUM_BIN[12] == STRATUM_BIN[13], || "extreme sub-bins not merged".into())?;
    ensure(STRATUM_BIN.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1), || "bins not contiguous".into())?;
    ensure(STRATUM_BIN[13] == 11, || "expected 12 reporting bins".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut draws = Vec::new();
    // A 9 km map under 2 km hexagons, and a 400 km map under 70 km ones.
    for (res, size, apothem) in [(30.0, 300, 2.0), (1000.0, 400, 70.0)] {
        let grid = GridTransform::new(500_000.0, 4_700_000.0 + res * size as f64, res, size, size).map_err(|e| e.to_string())?;
        let cells: Vec<f32> = (0..size * size)
            .map(|_| match rng.random_range(0..20) {
                0 => FLOAT_NODATA as f32,
                1 => 0.0,
                2 => 1.0,
                _ => rng.random::<f32>().powi(3),
            })
            .collect();
        let prob = Raster::float32(grid, FLOAT_NODATA, cells).map_err(|e| e.to_string())?;
        let n = check_plan(&prob, apothem, 5)?;
        let other = build_validation_plan(&prob, apothem, 5, 6).map_err(|e| e.to_string())?;
        let first = build_validation_plan(&prob, apothem, 5, 5).map_err(|e| e.to_string())?;
        ensure(n == 0 || other != first, || "seed has no effect".into())?;
        draws.push(n);
    }
    Ok(format!("hex_area(70) = {area:.1} km2, plans drew {draws:?} pixels as specified"))
}

fn report(dir: &Path) -> Result<KeyValues, String> {
    KeyValues::read(Artifacts::new(dir).report()).map_err(|e| e.to_string())
}

fn end_to_end(out: &Path) -> Check {
    let cfg = PipelineConfig::default();
    ensure(cfg.synth.width == 300 && cfg.synth.height == 300 && cfg.synth.prevalence == 0.025, || {
        "default landscape is not 300x300 at 2.5%".into()
    })?;
    run_pipeline(&cfg, out, None, 1).map_err(|e| format!("{e:#}"))?;
    let kv = report(out)?;
    let get = |k: &str| kv.require::<f64>(k).map_err(|e| e.to_string());
    let auc = get("auc")?;
    ensure(auc >= 0.85, || format!("ensemble AUC {auc:.4} < 0.85"))?;
    let mut bases = Vec::new();
    for name in ["rf", "gbm", "mlp"] {
        let a = get(&format!("auc.{name}"))?;
        ensure(auc >= a - 0.01, || format!("ensemble AUC {auc:.4} trails {name} {a:.4}"))?;
        bases.push(format!("{name} {a:.4}"));
    }
    let (py, ps) = (get("youden.precision")?, get("spec95.precision")?);
    ensure(ps > py, || format!("precision at spec95 {ps:.4} does not exceed Youden {py:.4}"))?;
    Ok(format!(
        "test AUC {auc:.4} ({}), precision spec95 {ps:.3} > Youden {py:.3}",
        bases.join(", ")
    ))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path) -> Check {
    run_pipeline(&PipelineConfig::default(), second, None, 8).map_err(|e| format!("{e:#}"))?;
    let (a, b) = (files_under(first), files_under(second));
    ensure(!a.is_empty() && a == b, || "artifact sets differ".into())?;
    for rel in &a {
        ensure(fs::read(first.join(rel)).unwrap() == fs::read(second.join(rel)).unwrap(), || {
            format!("{} differs", rel.display())
        })?;
    }
    Ok(format!("{} artifacts byte-identical between a 1-worker and an 8-worker run", a.len()))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (dir.path().join("a"), dir.path().join("b"));
    let s = Duration::from_secs;
    let outcomes = [
        criterion(1, "metric formulas", s(1), metric_formulas),
        criterion(2, "AUC duality", s(10), auc_duality),
        criterion(3, "threshold calibration", s(30), threshold_calibration),
        criterion(4, "label aggregation", s(5), label_aggregation),
        criterion(5, "segmentation optimality", s(60), segmentation_optimality),
        criterion(6, "MLP gradients", s(30), mlp_gradients),
        criterion(7, "GBM monotonicity", s(60), gbm_monotonicity),
        criterion(8, "end-to-end benchmark", s(300), || end_to_end(&run_a)),
        criterion(9, "hex geometry", s(5), hex_geometry),
        criterion(10, "determinism", s(300), || determinism(&run_a, &run_b)),
    ];
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
