//! The work behind each subcommand, shared with the pipeline driver.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use shrubmap_core::chm::{build_chm, label_cloud_coarse, label_shrub_fine, splat_returns, PointCloud, ShrubRule, Splat};
use shrubmap_core::evaluation::{
    auc_on_patchwork_sample, build_validation_plan, confusion, metrics, pr_auc, roc_auc, ConfusionCounts,
    HexValidationPlan, ThresholdSet,
};
use shrubmap_core::kv::KeyValues;
use shrubmap_core::predictors::{assemble_stack, Epoch, PredictorStack, StackInputs, StackParams};
use shrubmap_core::raster::{aggregate_majority, GridTransform, MaskSpec, Raster, FLOAT_NODATA};
use shrubmap_core::sampling::{split_records, stratified_balanced_sample, SampleSet, Split, DEFAULT_FRACTIONS};
use shrubmap_learners::{
    train_forest, train_gbm, train_mlp, AnyModel, Dataset, EnsembleModel, ForestParams, GbmParams,
    MlpParams,
};

use crate::failure::UsageError;

/// Canopy height grid covering the cloud, snapped to multiples of `res`,
/// or the refinement of `like` when given.
pub fn chm_grid(cloud: &PointCloud, res: f64, like: Option<&GridTransform>) -> Result<GridTransform> {
    if !(res > 0.0) {
        bail!(UsageError(format!("resolution must be positive, got {res}")));
    }
    if let Some(g) = like {
        let factor = g.resolution() / res;
        if (factor - factor.round()).abs() > 1e-9 || factor < 1.0 {
            bail!(UsageError(format!(
                "template resolution {} is not a multiple of {res}",
                g.resolution()
            )));
        }
        return Ok(g.refine(factor.round() as usize)?);
    }
    if cloud.is_empty() {
        bail!(UsageError("cannot size a grid for an empty cloud".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for r in cloud.returns() {
        x0 = x0.min(r.x);
        x1 = x1.max(r.x);
        y0 = y0.min(r.y);
        y1 = y1.max(r.y);
    }
    let left = (x0 / res).floor() * res;
    let top = ((y1 / res).floor() + 1.0) * res;
    let width = ((x1 - left) / res).floor() as usize + 1;
    let height = ((top - y0) / res).ceil().max(1.0) as usize;
    Ok(GridTransform::new(left, top, res, width, height)?)
}

pub fn chm_build(cloud: &PointCloud, res: f64, splat: Option<Splat>, like: Option<&GridTransform>) -> Result<Raster> {
    let grid = chm_grid(cloud, res, like)?;
    let cloud = match splat {
        Some(s) => splat_returns(cloud, s.pulse_width_m, s.points_per_circle)?,
        None => cloud.clone(),
    };
    Ok(build_chm(&cloud, grid))
}

/// Shrub labels from a CHM, aggregated by `factor` with a strict majority and
/// optionally masked by land cover and elevation on the coarse grid.
pub fn chm_label(chm: &Raster, rule: &ShrubRule, factor: usize, mask: Option<(&Raster, &Raster)>) -> Result<Raster> {
    let fine = label_shrub_fine(chm, rule)?;
    let coarse = if factor > 1 { aggregate_majority(&fine, factor, 0.5)? } else { fine };
    Ok(match mask {
        Some((lc, dem)) => coarse.with_nodata_where(&MaskSpec::default().excluded_cells(lc, dem)?),
        None => coarse,
    })
}

/// Coarse labels for a synthetic bundle straight from its point cloud.
pub fn label_bundle(
    cloud: &PointCloud,
    inputs: &StackInputs,
    chm_res: f64,
    splat: Splat,
    rule: &ShrubRule,
) -> Result<Raster> {
    let grid = *inputs.landcover.transform();
    let factor = grid.resolution() / chm_res;
    if (factor - factor.round()).abs() > 1e-9 || factor < 1.0 {
        bail!(UsageError(format!("label grid {} m is not a multiple of {chm_res} m", grid.resolution())));
    }
    let excluded = MaskSpec::default().excluded_cells(&inputs.landcover, &inputs.elevation)?;
    Ok(label_cloud_coarse(
        cloud,
        grid,
        factor.round() as usize,
        Some(splat),
        rule,
        Some(&excluded),
    )?)
}

/// Stack inputs from a manifest; `epoch` overrides any EPOCH raster it lists.
pub fn assemble(manifest: &Path, epoch: Option<i32>) -> Result<PredictorStack> {
    let kv = KeyValues::read(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let (inputs, epoch_raster) = StackInputs::load(&kv, base)?;
    let epoch = match (epoch, epoch_raster) {
        (Some(y), _) => Epoch::Year(y),
        (None, Some(r)) => Epoch::PerPixel(r),
        (None, None) => bail!(UsageError("no --epoch given and the manifest has no EPOCH raster".into())),
    };
    Ok(assemble_stack(&inputs, &epoch, &StackParams::default())?)
}

pub fn sample(labels: &Raster, stack: &PredictorStack, features: &[String], n: usize, seed: u64) -> Result<SampleSet> {
    let records = stratified_balanced_sample(labels, stack, features, n, seed, 0)?;
    Ok(split_records(records, features.to_vec(), DEFAULT_FRACTIONS, seed.wrapping_add(1))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Forest,
    Gbm,
    Mlp,
}

impl Learner {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "rf" => Self::Forest,
            "gbm" => Self::Gbm,
            "mlp" => Self::Mlp,
            _ => bail!(UsageError(format!("unknown model {s}; expected rf, gbm or mlp"))),
        })
    }
}

pub enum LearnerParams {
    Forest(ForestParams),
    Gbm(GbmParams),
    Mlp(MlpParams),
}

pub fn train(set: &SampleSet, params: &LearnerParams, seed: u64) -> Result<AnyModel> {
    let data = Dataset::from_sample(set, Split::Train)?;
    Ok(match params {
        LearnerParams::Forest(p) => AnyModel::Forest(train_forest(&data, p, seed)?),
        LearnerParams::Gbm(p) => AnyModel::Gbm(train_gbm(&data, p, seed)?),
        LearnerParams::Mlp(p) => {
            let val = Dataset::from_sample(set, Split::Validation)?;
            AnyModel::Mlp(train_mlp(&data, &val, p, seed)?)
        }
    })
}

/// Fits the stacker on the validation split.
pub fn stack_models(set: &SampleSet, models: [AnyModel; 3]) -> Result<EnsembleModel> {
    let [AnyModel::Forest(rf), AnyModel::Gbm(gbm), AnyModel::Mlp(mlp)] = models else {
        bail!(UsageError("stacking needs an rf, a gbm and an mlp model, in that order".into()));
    };
    let val = Dataset::from_sample(set, Split::Validation)?;
    Ok(EnsembleModel::assemble(rf, gbm, mlp, &val)?)
}

fn split_scores(set: &SampleSet, split: Split, model: &AnyModel) -> Result<(Vec<bool>, Vec<f64>)> {
    let data = Dataset::from_sample(set, split)?;
    if data.names != model.feature_names() {
        bail!(UsageError(format!(
            "sample features {:?} differ from model features {:?}",
            data.names,
            model.feature_names()
        )));
    }
    if matches!(model, AnyModel::Stacker(_)) {
        bail!(UsageError("a bare stacker needs base probabilities; use the ensemble model".into()));
    }
    let scores = model.classifier().predict_proba(&data.x)?;
    Ok((data.y, scores))
}

pub fn calibrate(set: &SampleSet, model: &AnyModel, targets: &[f64]) -> Result<ThresholdSet> {
    let (labels, scores) = split_scores(set, Split::Validation, model)?;
    Ok(ThresholdSet::calibrate(&labels, &scores, targets)?)
}

/// Probability raster over every pixel whose features are all valid.
pub fn predict(model: &AnyModel, stack: &PredictorStack) -> Result<Raster> {
    if matches!(model, AnyModel::Stacker(_)) {
        bail!(UsageError("a bare stacker needs base probabilities; use the ensemble model".into()));
    }
    let names = model.feature_names().to_vec();
    let bands = stack.feature_bands(&names)?;
    let n = stack.transform().len();
    let valid: Vec<usize> = (0..n).filter(|&i| bands.iter().all(|b| !b.is_nodata_at(i))).collect();
    let mut x = Vec::with_capacity(valid.len() * names.len());
    for &i in &valid {
        x.extend(bands.iter().map(|b| b.get(i).expect("valid cell")));
    }
    let probs = model.classifier().predict_proba(&x)?;
    let mut cells = vec![FLOAT_NODATA as f32; n];
    for (&i, p) in valid.iter().zip(probs) {
        cells[i] = p as f32;
    }
    Ok(Raster::float32(*stack.transform(), FLOAT_NODATA, cells)?)
}

/// One boolean raster per named threshold: shrub where prob >= threshold.
pub fn classify(prob: &Raster, thresholds: &ThresholdSet) -> Result<Vec<(String, Raster)>> {
    let cells = prob.expect_f32("probability")?;
    thresholds
        .named()
        .into_iter()
        .map(|(name, t)| {
            let flags = cells
                .iter()
                .enumerate()
                .map(|(i, &p)| if prob.is_nodata_at(i) { 255 } else { (p as f64 >= t) as u8 })
                .collect();
            Ok((name, Raster::boolean(*prob.transform(), 255, flags)?))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nodata".to_string(), |v| v.to_string())
}

fn push_counts(kv: &mut KeyValues, prefix: &str, threshold: f64, c: &ConfusionCounts) {
    let m = metrics(c);
    kv.push(format!("{prefix}.threshold"), threshold);
    kv.push(format!("{prefix}.tp"), c.tp);
    kv.push(format!("{prefix}.fp"), c.fp);
    kv.push(format!("{prefix}.tn"), c.tn);
    kv.push(format!("{prefix}.fn"), c.fn_);
    kv.push(format!("{prefix}.sensitivity"), fmt_opt(m.sensitivity));
    kv.push(format!("{prefix}.specificity"), fmt_opt(m.specificity));
    kv.push(format!("{prefix}.precision"), fmt_opt(m.precision));
    kv.push(format!("{prefix}.f1"), fmt_opt(m.f1));
}

/// Wall-to-wall inputs for the patchwork section of the report.
pub struct Patchwork<'a> {
    pub labels: &'a Raster,
    pub prob: &'a Raster,
    pub n: usize,
    pub seed: u64,
}

/// Test-split metrics for `model` (and its base learners), plus optional
/// wall-to-wall metrics over every labeled, mapped pixel.
pub fn evaluate(
    set: &SampleSet,
    model: &AnyModel,
    thresholds: &ThresholdSet,
    patchwork: Option<Patchwork>,
) -> Result<KeyValues> {
    let (labels, scores) = split_scores(set, Split::Test, model)?;
    let mut kv = KeyValues::default();
    kv.push("model", model.kind().name());
    kv.push("split", Split::Test.name());
    kv.push("records", labels.len());
    kv.push("positives", labels.iter().filter(|&&l| l).count());
    kv.push("auc", roc_auc(&labels, &scores)?);
    kv.push("pr_auc", pr_auc(&labels, &scores)?);
    if let AnyModel::Ensemble(e) = model {
        let data = Dataset::from_sample(set, Split::Test)?;
        let base = e.base_probabilities(&data.x)?;
        for (k, name) in ["rf", "gbm", "mlp"].iter().enumerate() {
            let s: Vec<f64> = base.iter().map(|b| b[k]).collect();
            kv.push(format!("auc.{name}"), roc_auc(&labels, &s)?);
        }
    }
    for (name, t) in thresholds.named() {
        push_counts(&mut kv, &name, t, &confusion(&labels, &scores, t)?);
    }
    if let Some(pw) = patchwork {
        pw.labels.transform().ensure_same(pw.prob.transform(), "probability raster")?;
        let mut l = Vec::new();
        let mut s = Vec::new();
        for i in 0..pw.labels.len() {
            if let (Some(lab), Some(p)) = (pw.labels.get_bool(i), pw.prob.get(i)) {
                l.push(lab);
                s.push(p);
            }
        }
        kv.push("patchwork.pixels", l.len());
        kv.push("patchwork.positives", l.iter().filter(|&&v| v).count());
        kv.push("patchwork.auc_sample", pw.n.min(l.len()));
        kv.push("patchwork.auc", auc_on_patchwork_sample(pw.labels, pw.prob, pw.n, pw.seed)?);
        for (name, t) in thresholds.named() {
            push_counts(&mut kv, &format!("patchwork.{name}"), t, &confusion(&l, &s, t)?);
        }
    }
    Ok(kv)
}

pub fn validate_plan(prob: &Raster, apothem_km: f64, per_bin: usize, seed: u64) -> Result<HexValidationPlan> {
    Ok(build_validation_plan(prob, apothem_km, per_bin, seed)?)
}

/// Writes the plan's sample list to `path` and its per-stratum summary
/// beside it with a `.summary.tsv` suffix.
pub fn write_plan(plan: &HexValidationPlan, path: &Path) -> Result<()> {
    fs::write(path, plan.samples_tsv()).with_context(|| format!("writing {}", path.display()))?;
    let summary = path.with_extension("summary.tsv");
    fs::write(&summary, plan.summary_tsv()).with_context(|| format!("writing {}", summary.display()))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<AnyModel> {
    AnyModel::read(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdSet> {
    let kv = KeyValues::read(path)?;
    Ok(ThresholdSet::from_kv(&kv)?)
}
