//! Command-line surface. Every subcommand runs as a named stage so failures
//! report where they happened.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use shrubmap_core::chm::{read_cloud, ShrubRule, Splat};
use shrubmap_core::kv::KeyValues;
use shrubmap_core::predictors::{PredictorStack, DEFAULT_FEATURES};
use shrubmap_core::raster::{read_raster, write_raster};
use shrubmap_core::sampling::SampleSet;
use shrubmap_core::synth::{generate, LandscapeSpec};
use shrubmap_learners::AnyModel;

use crate::config::{forest_params, gbm_params, list, mlp_params, PipelineConfig};
use crate::failure::{exit_code, StageFailure, UsageError, EXIT_USAGE};
use crate::ops::{self, Learner, LearnerParams, Patchwork};
use crate::pipeline::run_pipeline;

#[derive(Debug, Parser)]
#[command(name = "shrubmap", version, about = "Shrubland mapping from LiDAR labels and Landsat predictors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic landscape bundle.
    Synth {
        /// key=value landscape specification; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Canopy height models and shrub labels.
    #[command(subcommand)]
    Chm(ChmCommand),
    /// Predictor stack assembly.
    #[command(subcommand)]
    Predictors(PredictorsCommand),
    /// Draw a balanced sample and split it into train, validation and test.
    Sample {
        /// Boolean label raster.
        #[arg(long)]
        labels: PathBuf,
        /// Predictor stack directory.
        #[arg(long)]
        stack: PathBuf,
        /// Total records, half shrub and half not; must be even.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated feature bands (default: the 14 standard predictors).
        #[arg(long)]
        features: Option<String>,
        /// Output sample table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one base learner on the training split.
    Train {
        #[arg(long)]
        sample: PathBuf,
        /// rf, gbm or mlp.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Hyperparameter override as key=value; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the logistic stacker on the validation split.
    Stack {
        #[arg(long)]
        val_sample: PathBuf,
        /// The rf, gbm and mlp model files, in that order.
        #[arg(long, num_args = 3)]
        models: Vec<PathBuf>,
        /// Output ensemble model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Youden and target-specificity thresholds on the validation split.
    Calibrate {
        #[arg(long)]
        val_sample: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated specificity targets.
        #[arg(long, default_value = "0.90,0.95,0.99")]
        targets: String,
        /// Output thresholds file (name=value lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Probability raster from a model and a predictor stack.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        /// Output probability raster.
        #[arg(long)]
        out: PathBuf,
        /// Thresholds file; with --classes-dir writes one class raster per threshold.
        #[arg(long, requires = "classes_dir")]
        thresholds: Option<PathBuf>,
        #[arg(long, requires = "thresholds")]
        classes_dir: Option<PathBuf>,
    },
    /// Metrics report on the test split, optionally wall to wall.
    Evaluate {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        /// Output report (key=value lines).
        #[arg(long)]
        report: PathBuf,
        /// Label raster for the wall-to-wall section; needs --prob.
        #[arg(long, requires = "prob")]
        labels: Option<PathBuf>,
        /// Probability raster for the wall-to-wall section; needs --labels.
        #[arg(long, requires = "labels")]
        prob: Option<PathBuf>,
        /// Pixels sampled for the wall-to-wall AUC.
        #[arg(long, default_value_t = 1_000_000)]
        patchwork_n: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Hexagon and probability-bin validation sample.
    ValidatePlan {
        #[arg(long)]
        prob: PathBuf,
        #[arg(long, default_value_t = 70.0)]
        apothem_km: f64,
        #[arg(long, default_value_t = 5)]
        per_bin: usize,
        #[arg(long, default_value_t = 9)]
        seed: u64,
        /// Output sample list; the per-stratum summary goes beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage on a synthetic landscape.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// key=value configuration file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration override as key=value; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Artifacts directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this stage, reusing earlier artifacts.
    #[arg(long)]
    pub from: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum ChmCommand {
    /// Rasterize the highest return per cell.
    Build {
        #[arg(long)]
        cloud: PathBuf,
        /// Cell size in map units.
        #[arg(long, default_value_t = 1.0)]
        res: f64,
        /// Splat diameter; 0 disables splatting.
        #[arg(long, default_value_t = 0.5)]
        pulse_width: f64,
        #[arg(long, default_value_t = 8)]
        points_per_circle: usize,
        /// Raster whose extent the CHM refines instead of the cloud bounds.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shrub labels: heights within [min, max], then block majority.
    Label {
        #[arg(long)]
        chm: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        min: f64,
        #[arg(long, default_value_t = 5.0)]
        max: f64,
        /// Aggregation factor; 1 keeps the CHM grid.
        #[arg(long, default_value_t = 30)]
        aggregate: usize,
        /// Land cover for masking; needs --elevation.
        #[arg(long, requires = "elevation")]
        landcover: Option<PathBuf>,
        #[arg(long, requires = "landcover")]
        elevation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PredictorsCommand {
    /// Build the stack from an inputs manifest.
    Assemble {
        #[arg(long)]
        manifest: PathBuf,
        /// Prediction year; defaults to the manifest's EPOCH raster.
        #[arg(long)]
        epoch: Option<i32>,
        /// Output stack directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn kv_args(items: &[String]) -> Result<KeyValues> {
    let mut text = String::new();
    for item in items {
        if !item.contains('=') {
            return Err(UsageError(format!("expected KEY=VALUE, got {item}")).into());
        }
        text.push_str(item);
        text.push('\n');
    }
    KeyValues::parse(&text).map_err(|e| UsageError(e.to_string()).into())
}

fn in_stage(name: &'static str, f: impl FnOnce() -> Result<()>) -> Result<()> {
    f().context(StageFailure { stage: name })
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out } => in_stage("synth", || {
            let spec = match spec {
                Some(p) => LandscapeSpec::from_kv(&KeyValues::read(&p)?)?,
                None => LandscapeSpec::default(),
            };
            Ok(generate(&spec)?.write(&out)?)
        }),
        Command::Chm(ChmCommand::Build {
            cloud,
            res,
            pulse_width,
            points_per_circle,
            like,
            out,
        }) => in_stage("chm", || {
            let cloud = read_cloud(&cloud)?;
            let like = like.map(read_raster).transpose()?;
            let splat = (pulse_width > 0.0).then_some(Splat {
                pulse_width_m: pulse_width,
                points_per_circle,
            });
            let chm = ops::chm_build(&cloud, res, splat, like.as_ref().map(|r| r.transform()))?;
            Ok(write_raster(&chm, &out)?)
        }),
        Command::Chm(ChmCommand::Label {
            chm,
            min,
            max,
            aggregate,
            landcover,
            elevation,
            out,
        }) => in_stage("label", || {
            let chm = read_raster(&chm)?;
            let rule = ShrubRule::new(min, max)?;
            let mask = match (landcover, elevation) {
                (Some(l), Some(e)) => Some((read_raster(l)?, read_raster(e)?)),
                _ => None,
            };
            let labels = ops::chm_label(&chm, &rule, aggregate, mask.as_ref().map(|(l, e)| (l, e)))?;
            Ok(write_raster(&labels, &out)?)
        }),
        Command::Predictors(PredictorsCommand::Assemble { manifest, epoch, out }) => {
            in_stage("predictors", || Ok(ops::assemble(&manifest, epoch)?.write(&out)?))
        }
        Command::Sample {
            labels,
            stack,
            n,
            seed,
            features,
            out,
        } => in_stage("sample", || {
            let features: Vec<String> = match features {
                Some(f) => list(&f, "features")?,
                None => DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            };
            let labels = read_raster(&labels)?;
            let stack = PredictorStack::read(&stack)?;
            Ok(ops::sample(&labels, &stack, &features, n, seed)?.write(&out)?)
        }),
        Command::Train {
            sample,
            model,
            seed,
            params,
            out,
        } => in_stage("train", || {
            let kv = kv_args(&params)?;
            let params = match Learner::parse(&model)? {
                Learner::Forest => LearnerParams::Forest(forest_params(&kv)?),
                Learner::Gbm => LearnerParams::Gbm(gbm_params(&kv)?),
                Learner::Mlp => LearnerParams::Mlp(mlp_params(&kv)?),
            };
            let set = SampleSet::read(&sample)?;
            Ok(ops::train(&set, &params, seed)?.write(&out)?)
        }),
        Command::Stack { val_sample, models, out } => in_stage("stack", || {
            let set = SampleSet::read(&val_sample)?;
            let loaded: Vec<AnyModel> = models.iter().map(|p| ops::read_model(p)).collect::<Result<_>>()?;
            let models: [AnyModel; 3] = loaded.try_into().expect("clap enforces three models");
            Ok(AnyModel::Ensemble(Box::new(ops::stack_models(&set, models)?)).write(&out)?)
        }),
        Command::Calibrate {
            val_sample,
            model,
            targets,
            out,
        } => in_stage("calibrate", || {
            let targets: Vec<f64> = list(&targets, "targets")?;
            if targets.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                return Err(UsageError(format!("targets must lie in (0,1): {targets:?}")).into());
            }
            let set = SampleSet::read(&val_sample)?;
            let model = ops::read_model(&model)?;
            Ok(ops::calibrate(&set, &model, &targets)?.to_kv().write(&out)?)
        }),
        Command::Predict {
            model,
            stack,
            out,
            thresholds,
            classes_dir,
        } => in_stage("predict", || {
            let model = ops::read_model(&model)?;
            let stack = PredictorStack::read(&stack)?;
            let prob = ops::predict(&model, &stack)?;
            write_raster(&prob, &out)?;
            if let (Some(t), Some(dir)) = (thresholds, classes_dir) {
                let t = ops::read_thresholds(&t)?;
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for (name, r) in ops::classify(&prob, &t)? {
                    write_raster(&r, dir.join(format!("{name}.sras")))?;
                }
            }
            Ok(())
        }),
        Command::Evaluate {
            sample,
            model,
            thresholds,
            report,
            labels,
            prob,
            patchwork_n,
            seed,
        } => in_stage("evaluate", || {
            let set = SampleSet::read(&sample)?;
            let model = ops::read_model(&model)?;
            let thresholds = ops::read_thresholds(&thresholds)?;
            let rasters = match (labels, prob) {
                (Some(l), Some(p)) => Some((read_raster(l)?, read_raster(p)?)),
                _ => None,
            };
            let patchwork = rasters.as_ref().map(|(l, p)| Patchwork {
                labels: l,
                prob: p,
                n: patchwork_n,
                seed,
            });
            Ok(ops::evaluate(&set, &model, &thresholds, patchwork)?.write(&report)?)
        }),
        Command::ValidatePlan {
            prob,
            apothem_km,
            per_bin,
            seed,
            out,
        } => in_stage("validate-plan", || {
            let prob = read_raster(&prob)?;
            ops::write_plan(&ops::validate_plan(&prob, apothem_km, per_bin, seed)?, &out)
        }),
        Command::Pipeline(args) => {
            let mut kv = match &args.config {
                Some(p) => KeyValues::read(p).with_context(|| format!("reading {}", p.display()))?,
                None => KeyValues::default(),
            };
            let overrides = kv_args(&args.overrides)?;
            let mut merged = KeyValues::default();
            for (k, v) in kv.entries() {
                if overrides.get(k).is_none() {
                    merged.push(k.clone(), v);
                }
            }
            for (k, v) in overrides.entries() {
                merged.push(k.clone(), v);
            }
            kv = merged;
            let cfg = PipelineConfig::from_kv(&kv)?;
            run_pipeline(&cfg, &args.out, args.from.as_deref(), args.workers)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
}
