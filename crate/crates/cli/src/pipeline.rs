//! End-to-end driver: synth, label, predictors, sample, train, stack,
//! calibrate, predict, evaluate, validate-plan.
//!
//! Every stage reads what earlier stages wrote, so a run can resume from any
//! stage and a failure leaves the earlier artifacts in place.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use shrubmap_core::chm::{read_cloud, ShrubRule, Splat};
use shrubmap_core::kv::KeyValues;
use shrubmap_core::predictors::{PredictorStack, StackInputs};
use shrubmap_core::raster::{read_raster, write_raster};
use shrubmap_core::sampling::SampleSet;
use shrubmap_core::synth::{generate, BUNDLE_MANIFEST, CLOUD_FILE};
use shrubmap_learners::AnyModel;

use crate::config::{EpochChoice, PipelineConfig};
use crate::failure::{StageFailure, UsageError};
use crate::ops::{self, LearnerParams, Patchwork};

pub const STAGES: [&str; 10] = [
    "synth",
    "label",
    "predictors",
    "sample",
    "train",
    "stack",
    "calibrate",
    "predict",
    "evaluate",
    "validate-plan",
];

/// Canopy height model cell size used to label synthetic bundles.
pub const CHM_RESOLUTION_M: f64 = 1.0;

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels30.sras")
    }
    pub fn stack(&self) -> PathBuf {
        self.root.join("stack")
    }
    pub fn sample(&self) -> PathBuf {
        self.root.join("sample.tsv")
    }
    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.smdl"))
    }
    pub fn thresholds(&self) -> PathBuf {
        self.root.join("thresholds.txt")
    }
    pub fn prob(&self) -> PathBuf {
        self.root.join("prob.sras")
    }
    pub fn class(&self, name: &str) -> PathBuf {
        self.root.join("classes").join(format!("{name}.sras"))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.tsv")
    }
}

fn stage(name: &'static str, f: impl FnOnce() -> Result<()>) -> Result<()> {
    info!("stage {name}: start");
    let t = Instant::now();
    f().context(StageFailure { stage: name })?;
    info!("stage {name}: done in {:.2?}", t.elapsed());
    Ok(())
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs the stages from `from` (default: the first) with `workers` threads
/// (0 lets the thread pool decide).
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, from: Option<&str>, workers: usize) -> Result<()> {
    let start = match from {
        None => 0,
        Some(s) => STAGES
            .iter()
            .position(|&n| n == s)
            .ok_or_else(|| UsageError(format!("unknown stage {s}; stages are {}", STAGES.join(", "))))?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the worker pool")?;
    pool.install(|| run_stages(cfg, &Artifacts::new(out), start))
}

fn run_stages(cfg: &PipelineConfig, a: &Artifacts, start: usize) -> Result<()> {
    mkdir(&a.root)?;
    let resolved = cfg.to_kv();
    info!("resolved configuration:");
    for (k, v) in resolved.entries() {
        info!("  {k}={v}");
    }
    resolved.write(a.config())?;
    let run = |i: usize| i >= start;

    if run(0) {
        stage("synth", || {
            let land = generate(&cfg.synth)?;
            info!(
                "landscape {}x{}: {} patches, prevalence {:.4}, {} returns",
                cfg.synth.width,
                cfg.synth.height,
                land.patches,
                land.achieved_prevalence,
                land.cloud.len()
            );
            Ok(land.write(a.synth())?)
        })?;
    }
    let manifest = a.synth().join(BUNDLE_MANIFEST);
    if run(1) {
        stage("label", || {
            let kv = KeyValues::read(&manifest)?;
            let (inputs, _) = StackInputs::load(&kv, &a.synth())?;
            let cloud = read_cloud(a.synth().join(CLOUD_FILE))?;
            let splat = Splat {
                pulse_width_m: cfg.pulse_width_m,
                points_per_circle: cfg.points_per_circle,
            };
            let rule = ShrubRule::new(cfg.min_height_m, cfg.max_height_m)?;
            let labels = ops::label_bundle(&cloud, &inputs, CHM_RESOLUTION_M, splat, &rule)?;
            Ok(write_raster(&labels, a.labels())?)
        })?;
    }
    if run(2) {
        stage("predictors", || {
            let year = match cfg.epoch {
                EpochChoice::Patchwork => None,
                EpochChoice::Year(y) => Some(y),
            };
            let stack = ops::assemble(&manifest, year)?;
            Ok(stack.write(a.stack())?)
        })?;
    }
    if run(3) {
        stage("sample", || {
            let labels = read_raster(a.labels())?;
            let stack = PredictorStack::read(a.stack())?;
            let set = ops::sample(&labels, &stack, &cfg.features, cfg.sample_n, cfg.sample_seed)?;
            Ok(set.write(a.sample())?)
        })?;
    }
    if run(4) {
        stage("train", || {
            let set = SampleSet::read(a.sample())?;
            mkdir(&a.root.join("models"))?;
            let jobs = [
                ("rf", LearnerParams::Forest(cfg.forest.clone()), cfg.forest_seed),
                ("gbm", LearnerParams::Gbm(cfg.gbm.clone()), cfg.gbm_seed),
                ("mlp", LearnerParams::Mlp(cfg.mlp.clone()), cfg.mlp_seed),
            ];
            for (name, params, seed) in jobs {
                let t = Instant::now();
                let model = ops::train(&set, &params, seed).with_context(|| format!("training {name}"))?;
                if let AnyModel::Mlp(m) = &model {
                    info!("mlp kept epoch {} of {}", m.best_epoch, m.history.len());
                }
                info!("trained {name} in {:.2?}", t.elapsed());
                model.write(a.model(name))?;
            }
            Ok(())
        })?;
    }
    if run(5) {
        stage("stack", || {
            let set = SampleSet::read(a.sample())?;
            let models = ["rf", "gbm", "mlp"].map(|n| ops::read_model(&a.model(n)));
            let [rf, gbm, mlp] = models;
            let ens = ops::stack_models(&set, [rf?, gbm?, mlp?])?;
            if ens.stacker.ridge > 0.0 {
                info!("stacker used the ridge fallback");
            }
            Ok(AnyModel::Ensemble(Box::new(ens)).write(a.model("ensemble"))?)
        })?;
    }
    if run(6) {
        stage("calibrate", || {
            let set = SampleSet::read(a.sample())?;
            let AnyModel::Ensemble(mut ens) = ops::read_model(&a.model("ensemble"))? else {
                bail!("{} is not an ensemble model", a.model("ensemble").display());
            };
            let model = AnyModel::Ensemble(ens.clone());
            let t = ops::calibrate(&set, &model, &cfg.targets)?;
            t.to_kv().write(a.thresholds())?;
            ens.thresholds = Some(t);
            Ok(AnyModel::Ensemble(ens).write(a.model("ensemble"))?)
        })?;
    }
    if run(7) {
        stage("predict", || {
            let model = ops::read_model(&a.model("ensemble"))?;
            let stack = PredictorStack::read(a.stack())?;
            let prob = ops::predict(&model, &stack)?;
            write_raster(&prob, a.prob())?;
            let thresholds = ops::read_thresholds(&a.thresholds())?;
            mkdir(&a.root.join("classes"))?;
            for (name, r) in ops::classify(&prob, &thresholds)? {
                write_raster(&r, a.class(&name))?;
            }
            Ok(())
        })?;
    }
    if run(8) {
        stage("evaluate", || {
            let set = SampleSet::read(a.sample())?;
            let model = ops::read_model(&a.model("ensemble"))?;
            let thresholds = ops::read_thresholds(&a.thresholds())?;
            let labels = read_raster(a.labels())?;
            let prob = read_raster(a.prob())?;
            let patchwork = Patchwork {
                labels: &labels,
                prob: &prob,
                n: cfg.patchwork_n,
                seed: cfg.patchwork_seed,
            };
            let report = ops::evaluate(&set, &model, &thresholds, Some(patchwork))?;
            for key in ["auc", "auc.rf", "auc.gbm", "auc.mlp", "patchwork.auc"] {
                if let Some(v) = report.get(key) {
                    info!("{key} = {v}");
                }
            }
            Ok(report.write(a.report())?)
        })?;
    }
    if run(9) {
        stage("validate-plan", || {
            let prob = read_raster(a.prob())?;
            let plan = ops::validate_plan(&prob, cfg.apothem_km, cfg.per_bin, cfg.plan_seed)?;
            info!("validation plan: {} hexagons, {} pixels", plan.hexagons.len(), plan.sample_count());
            ops::write_plan(&plan, &a.plan())
        })?;
    }
    Ok(())
}
