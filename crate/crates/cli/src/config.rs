//! Flat `key=value` configuration: learner hyperparameters and the
//! resolved pipeline configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use shrubmap_core::kv::KeyValues;
use shrubmap_core::predictors::DEFAULT_FEATURES;
use shrubmap_core::synth::LandscapeSpec;
use shrubmap_learners::{ForestParams, GbmParams, MlpParams};

use crate::failure::UsageError;

/// Entries of `kv` under `prefix.`, with the prefix removed.
pub fn section(kv: &KeyValues, prefix: &str) -> KeyValues {
    let mut out = KeyValues::default();
    for (k, v) in kv.entries() {
        if let Some(rest) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
            out.push(rest, v);
        }
    }
    out
}

fn check(kv: &KeyValues, allowed: &[&str], what: &str) -> Result<()> {
    if let Some(k) = kv.keys().find(|k| !allowed.contains(k)) {
        return Err(UsageError(format!("unknown {what} key {k}")).into());
    }
    Ok(())
}

fn get<T: std::str::FromStr>(kv: &KeyValues, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match kv.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|e| UsageError(format!("{key}={v}: {e}")).into()),
    }
}

pub fn list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| UsageError(format!("{key}={text}: {e}")).into())
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn forest_params(kv: &KeyValues) -> Result<ForestParams> {
    check(kv, &["n_trees", "bootstrap_fraction", "min_node", "features_per_split"], "forest")?;
    let d = ForestParams::default();
    let p = ForestParams {
        n_trees: get(kv, "n_trees", d.n_trees)?,
        bootstrap_fraction: get(kv, "bootstrap_fraction", d.bootstrap_fraction)?,
        min_node: get(kv, "min_node", d.min_node)?,
        features_per_split: get(kv, "features_per_split", d.features_per_split)?,
    };
    p.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(p)
}

pub fn forest_kv(p: &ForestParams) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("n_trees", p.n_trees);
    kv.push("bootstrap_fraction", p.bootstrap_fraction);
    kv.push("min_node", p.min_node);
    kv.push("features_per_split", p.features_per_split);
    kv
}

const GBM_KEYS: [&str; 11] = [
    "n_trees",
    "max_leaves",
    "learning_rate",
    "min_leaf",
    "min_per_bin",
    "max_bins",
    "l1",
    "l2",
    "bagging_fraction",
    "feature_fraction",
    "min_child_hessian",
];

pub fn gbm_params(kv: &KeyValues) -> Result<GbmParams> {
    check(kv, &GBM_KEYS, "boosting")?;
    let d = GbmParams::default();
    let p = GbmParams {
        n_trees: get(kv, "n_trees", d.n_trees)?,
        max_leaves: get(kv, "max_leaves", d.max_leaves)?,
        learning_rate: get(kv, "learning_rate", d.learning_rate)?,
        min_leaf: get(kv, "min_leaf", d.min_leaf)?,
        min_per_bin: get(kv, "min_per_bin", d.min_per_bin)?,
        max_bins: get(kv, "max_bins", d.max_bins)?,
        l1: get(kv, "l1", d.l1)?,
        l2: get(kv, "l2", d.l2)?,
        bagging_fraction: get(kv, "bagging_fraction", d.bagging_fraction)?,
        feature_fraction: get(kv, "feature_fraction", d.feature_fraction)?,
        min_child_hessian: get(kv, "min_child_hessian", d.min_child_hessian)?,
    };
    p.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(p)
}

pub fn gbm_kv(p: &GbmParams) -> KeyValues {
    let mut kv = KeyValues::default();
    let values = [
        p.n_trees.to_string(),
        p.max_leaves.to_string(),
        p.learning_rate.to_string(),
        p.min_leaf.to_string(),
        p.min_per_bin.to_string(),
        p.max_bins.to_string(),
        p.l1.to_string(),
        p.l2.to_string(),
        p.bagging_fraction.to_string(),
        p.feature_fraction.to_string(),
        p.min_child_hessian.to_string(),
    ];
    for (k, v) in GBM_KEYS.iter().zip(values) {
        kv.push(*k, v);
    }
    kv
}

pub fn mlp_params(kv: &KeyValues) -> Result<MlpParams> {
    check(
        kv,
        &["hidden", "dropout", "epochs", "batch_size", "learning_rate", "momentum"],
        "network",
    )?;
    let d = MlpParams::default();
    let p = MlpParams {
        hidden: match kv.get("hidden") {
            Some(v) => list(v, "hidden")?,
            None => d.hidden,
        },
        dropout: get(kv, "dropout", d.dropout)?,
        epochs: get(kv, "epochs", d.epochs)?,
        batch_size: get(kv, "batch_size", d.batch_size)?,
        learning_rate: get(kv, "learning_rate", d.learning_rate)?,
        momentum: get(kv, "momentum", d.momentum)?,
    };
    p.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(p)
}

pub fn mlp_kv(p: &MlpParams) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("hidden", join(&p.hidden));
    kv.push("dropout", p.dropout);
    kv.push("epochs", p.epochs);
    kv.push("batch_size", p.batch_size);
    kv.push("learning_rate", p.learning_rate);
    kv.push("momentum", p.momentum);
    kv
}

/// Which year the predictors describe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochChoice {
    /// Each pixel at the LiDAR year of its tile.
    Patchwork,
    Year(i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub synth: LandscapeSpec,
    pub epoch: EpochChoice,
    pub features: Vec<String>,
    pub pulse_width_m: f64,
    pub points_per_circle: usize,
    pub min_height_m: f64,
    pub max_height_m: f64,
    pub sample_n: usize,
    pub sample_seed: u64,
    pub forest: ForestParams,
    pub forest_seed: u64,
    pub gbm: GbmParams,
    pub gbm_seed: u64,
    pub mlp: MlpParams,
    pub mlp_seed: u64,
    pub targets: Vec<f64>,
    pub patchwork_n: usize,
    pub patchwork_seed: u64,
    pub apothem_km: f64,
    pub per_bin: usize,
    pub plan_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: LandscapeSpec::default(),
            epoch: EpochChoice::Patchwork,
            features: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            pulse_width_m: 0.5,
            points_per_circle: 8,
            min_height_m: 1.0,
            max_height_m: 5.0,
            sample_n: 3000,
            sample_seed: 42,
            forest: ForestParams::default(),
            forest_seed: 7,
            gbm: GbmParams::default(),
            gbm_seed: 8,
            mlp: MlpParams::default(),
            mlp_seed: 9,
            targets: vec![0.90, 0.95, 0.99],
            patchwork_n: 1_000_000,
            patchwork_seed: 11,
            // A 70 km hexagon dwarfs the synthetic landscape.
            apothem_km: 2.0,
            per_bin: 5,
            plan_seed: 9,
        }
    }
}

const TOP_KEYS: [&str; 14] = [
    "epoch",
    "features",
    "chm.pulse_width",
    "chm.points_per_circle",
    "chm.min_height",
    "chm.max_height",
    "sample.n",
    "sample.seed",
    "thresholds.targets",
    "evaluate.patchwork_n",
    "evaluate.seed",
    "plan.apothem_km",
    "plan.per_bin",
    "plan.seed",
];

impl PipelineConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let mut seeds = KeyValues::default();
        let mut top = KeyValues::default();
        for (k, v) in kv.entries() {
            let prefixed = ["synth.", "rf.", "gbm.", "mlp."].iter().any(|p| k.starts_with(p));
            if prefixed {
                continue;
            }
            if TOP_KEYS.contains(&k.as_str()) {
                top.push(k.clone(), v);
            } else {
                return Err(UsageError(format!("unknown configuration key {k}")).into());
            }
        }
        let mut learner = |prefix: &str| {
            let mut params = KeyValues::default();
            for (k, v) in section(kv, prefix).entries() {
                if k == "seed" {
                    seeds.push(prefix, v);
                } else {
                    params.push(k.clone(), v);
                }
            }
            params
        };
        let rf = learner("rf");
        let gbm = learner("gbm");
        let mlp = learner("mlp");
        let synth = section(kv, "synth");
        let epoch = match top.get("epoch") {
            None | Some("patchwork") => EpochChoice::Patchwork,
            Some(y) => EpochChoice::Year(
                y.parse()
                    .map_err(|_| UsageError(format!("epoch must be a year or 'patchwork', got {y}")))?,
            ),
        };
        let cfg = Self {
            synth: LandscapeSpec::from_kv(&synth).map_err(|e| UsageError(format!("synth: {e}")))?,
            epoch,
            features: match top.get("features") {
                Some(v) => list(v, "features")?,
                None => d.features,
            },
            pulse_width_m: get(&top, "chm.pulse_width", d.pulse_width_m)?,
            points_per_circle: get(&top, "chm.points_per_circle", d.points_per_circle)?,
            min_height_m: get(&top, "chm.min_height", d.min_height_m)?,
            max_height_m: get(&top, "chm.max_height", d.max_height_m)?,
            sample_n: get(&top, "sample.n", d.sample_n)?,
            sample_seed: get(&top, "sample.seed", d.sample_seed)?,
            forest: forest_params(&rf)?,
            forest_seed: get(&seeds, "rf", d.forest_seed)?,
            gbm: gbm_params(&gbm)?,
            gbm_seed: get(&seeds, "gbm", d.gbm_seed)?,
            mlp: mlp_params(&mlp)?,
            mlp_seed: get(&seeds, "mlp", d.mlp_seed)?,
            targets: match top.get("thresholds.targets") {
                Some(v) => list(v, "thresholds.targets")?,
                None => d.targets,
            },
            patchwork_n: get(&top, "evaluate.patchwork_n", d.patchwork_n)?,
            patchwork_seed: get(&top, "evaluate.seed", d.patchwork_seed)?,
            apothem_km: get(&top, "plan.apothem_km", d.apothem_km)?,
            per_bin: get(&top, "plan.per_bin", d.per_bin)?,
            plan_seed: get(&top, "plan.seed", d.plan_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path).with_context(|| format!("reading configuration {}", path.display()))?;
        Self::from_kv(&kv)
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            bail!(UsageError("at least one feature is required".into()));
        }
        if self.targets.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            bail!(UsageError(format!("specificity targets must lie in (0,1): {:?}", self.targets)));
        }
        if self.sample_n == 0 || self.sample_n % 2 != 0 {
            bail!(UsageError(format!("sample.n must be a positive even number, got {}", self.sample_n)));
        }
        if !(self.apothem_km > 0.0) || self.per_bin == 0 || self.patchwork_n == 0 {
            bail!(UsageError("plan apothem, per-bin count and patchwork sample size must be positive".into()));
        }
        Ok(())
    }

    /// Every setting, defaults included, in a stable order.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for (k, v) in self.synth.to_kv().entries() {
            kv.push(format!("synth.{k}"), v);
        }
        kv.push(
            "epoch",
            match self.epoch {
                EpochChoice::Patchwork => "patchwork".to_string(),
                EpochChoice::Year(y) => y.to_string(),
            },
        );
        kv.push("features", join(&self.features));
        kv.push("chm.pulse_width", self.pulse_width_m);
        kv.push("chm.points_per_circle", self.points_per_circle);
        kv.push("chm.min_height", self.min_height_m);
        kv.push("chm.max_height", self.max_height_m);
        kv.push("sample.n", self.sample_n);
        kv.push("sample.seed", self.sample_seed);
        let learners = [
            ("rf", forest_kv(&self.forest), self.forest_seed),
            ("gbm", gbm_kv(&self.gbm), self.gbm_seed),
            ("mlp", mlp_kv(&self.mlp), self.mlp_seed),
        ];
        for (prefix, params, seed) in learners {
            for (k, v) in params.entries() {
                kv.push(format!("{prefix}.{k}"), v);
            }
            kv.push(format!("{prefix}.seed"), seed);
        }
        kv.push("thresholds.targets", join(&self.targets));
        kv.push("evaluate.patchwork_n", self.patchwork_n);
        kv.push("evaluate.seed", self.patchwork_seed);
        kv.push("plan.apothem_km", self.apothem_km);
        kv.push("plan.per_bin", self.per_bin);
        kv.push("plan.seed", self.plan_seed);
        kv
    }
}
