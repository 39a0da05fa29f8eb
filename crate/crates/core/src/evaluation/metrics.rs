//! Confusion-table metrics, ROC and precision-recall areas, and threshold
//! calibration. A score is classified positive when `score >= threshold`.

use crate::error::{Error, Result};
use crate::kv::KeyValues;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Parameter("scores contain NaN".into()));
    }
    Ok(())
}

pub fn confusion(labels: &[bool], scores: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(labels, scores)?;
    let mut c = ConfusionCounts::default();
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Rates from a confusion table; `None` wherever a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn f1_score(precision: f64, sensitivity: f64) -> Option<f64> {
    let den = precision + sensitivity;
    (den > 0.0).then(|| 2.0 * precision * sensitivity / den)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.fp + c.tn);
    let precision = ratio(c.tp, c.tp + c.fp);
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn); the count form is exact.
    let f1 = match (precision, sensitivity) {
        (Some(_), Some(_)) if c.tp > 0 => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    Metrics {
        sensitivity,
        specificity,
        precision,
        f1,
    }
}

/// Score groups in descending order: (score, positives, negatives).
fn descending_groups(labels: &[bool], scores: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let (p, n) = if labels[i] { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == scores[i] => {
                g.1 += p;
                g.2 += n;
            }
            _ => groups.push((scores[i], p, n)),
        }
    }
    groups
}

fn class_totals(labels: &[bool]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    (pos, labels.len() as u64 - pos)
}

fn require_both_classes(labels: &[bool]) -> Result<(u64, u64)> {
    let (p, n) = class_totals(labels);
    if p == 0 || n == 0 {
        return Err(Error::Undefined(
            "both classes must be present".into(),
        ));
    }
    Ok((p, n))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed exactly in integer arithmetic before the final
/// division.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_inputs(labels, scores)?;
    let (p, n) = require_both_classes(labels)?;
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for &(_, gp, gn) in descending_groups(labels, scores).iter().rev() {
        twice_u += gp as u128 * (2 * neg_below + gn as u128);
        neg_below += gn as u128;
    }
    Ok(twice_u as f64 / (2 * p as u128 * n as u128) as f64)
}

/// ROC points (false positive rate, true positive rate) from the strictest
/// threshold down, starting at (0, 0).
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_inputs(labels, scores)?;
    let (p, n) = require_both_classes(labels)?;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (_, gp, gn) in descending_groups(labels, scores) {
        tp += gp;
        fp += gn;
        pts.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(pts)
}

pub fn trapezoid_auc(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Area under the precision-recall step curve: the sum over distinct score
/// thresholds of recall increment times precision.
pub fn pr_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_inputs(labels, scores)?;
    let (p, _) = class_totals(labels);
    if p == 0 {
        return Err(Error::Undefined("precision-recall needs a positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for (_, gp, gn) in descending_groups(labels, scores) {
        tp += gp;
        fp += gn;
        let recall = tp as f64 / p as f64;
        area += (recall - last_recall) * (tp as f64 / (tp + fp) as f64);
        last_recall = recall;
    }
    Ok(area)
}

/// Candidate thresholds from strictest to loosest, each with the confusion
/// table it induces: `+inf`, then every distinct score descending.
pub fn threshold_sweep(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, ConfusionCounts)>> {
    check_inputs(labels, scores)?;
    let (p, n) = class_totals(labels);
    let mut out = vec![(
        f64::INFINITY,
        ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: n,
            fn_: p,
        },
    )];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (s, gp, gn) in descending_groups(labels, scores) {
        tp += gp;
        fp += gn;
        out.push((
            s,
            ConfusionCounts {
                tp,
                fp,
                tn: n - fp,
                fn_: p - tp,
            },
        ));
    }
    Ok(out)
}

/// Youden's J for a table with both classes present.
pub fn youden_j(c: &ConfusionCounts) -> f64 {
    c.tp as f64 / (c.tp + c.fn_) as f64 + c.tn as f64 / (c.tn + c.fp) as f64 - 1.0
}

/// Threshold maximizing sensitivity + specificity - 1; ties go to the higher
/// threshold. J is compared exactly as `tp*N + tn*P` over the common
/// denominator `P*N`.
pub fn youden_threshold(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (p, n) = require_both_classes(labels)?;
    let mut best: Option<(u128, f64)> = None;
    for (t, c) in threshold_sweep(labels, scores)? {
        let j = c.tp as u128 * n as u128 + c.tn as u128 * p as u128;
        if best.is_none_or(|(b, _)| j > b) {
            best = Some((j, t));
        }
    }
    Ok(best.expect("sweep holds the +inf candidate").1)
}

/// Lowest candidate threshold whose specificity is at least `target`.
pub fn specificity_threshold(labels: &[bool], scores: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Parameter(format!(
            "specificity target must lie in (0,1), got {target}"
        )));
    }
    require_both_classes(labels)?;
    let mut chosen = f64::INFINITY;
    for (t, c) in threshold_sweep(labels, scores)? {
        if (c.tn as f64 / (c.tn + c.fp) as f64) < target {
            break;
        }
        chosen = t;
    }
    Ok(chosen)
}

/// The Youden-optimal threshold plus one threshold per specificity target.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub youden: f64,
    /// (target, threshold), targets ascending.
    pub specificity: Vec<(f64, f64)>,
}

impl ThresholdSet {
    pub fn calibrate(labels: &[bool], scores: &[f64], targets: &[f64]) -> Result<Self> {
        let mut targets = targets.to_vec();
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        let specificity = targets
            .iter()
            .map(|&t| Ok((t, specificity_threshold(labels, scores, t)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            youden: youden_threshold(labels, scores)?,
            specificity,
        })
    }

    pub fn spec_name(target: f64) -> String {
        let pct = target * 100.0;
        if (pct - pct.round()).abs() < 1e-9 {
            format!("spec{}", pct.round() as i64)
        } else {
            format!("spec{pct}")
        }
    }

    /// Named thresholds in file order: `youden`, then `specNN` ascending.
    pub fn named(&self) -> Vec<(String, f64)> {
        std::iter::once(("youden".to_string(), self.youden))
            .chain(self.specificity.iter().map(|&(t, v)| (Self::spec_name(t), v)))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for (n, v) in self.named() {
            kv.push(n, v);
        }
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let youden = kv.require::<f64>("youden")?;
        let mut specificity = Vec::new();
        for (k, v) in kv.entries() {
            if k == "youden" {
                continue;
            }
            let pct: f64 = k
                .strip_prefix("spec")
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::Manifest(format!("unknown threshold name {k}")))?;
            let value: f64 = v
                .parse()
                .map_err(|_| Error::Manifest(format!("bad threshold {k}={v}")))?;
            specificity.push((pct / 100.0, value));
        }
        specificity.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { youden, specificity })
    }
}
