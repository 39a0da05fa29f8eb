//! The stacked ensemble and a common prediction interface for all models.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use shrubmap_core::evaluation::ThresholdSet;
use shrubmap_core::kv::KeyValues;

use crate::dataset::Dataset;
use crate::error::{LearnError, Result};
use crate::forest::ForestModel;
use crate::gbm::GbmModel;
use crate::mlp::MlpModel;
use crate::stacker::{train_stacker, StackerModel};

/// Probability output shared by the base learners, the stacker and the ensemble.
pub trait Classifier: Sync {
    /// Expected row length.
    fn n_features(&self) -> usize;

    /// Probability for one row whose length has already been checked.
    fn score_row(&self, x: &[f64]) -> f64;

    fn predict_one(&self, x: &[f64]) -> Result<f64> {
        self.check(x.len())?;
        Ok(self.score_row(x))
    }

    /// Row-major batch prediction. Every row is scored independently, so the
    /// result equals mapping `predict_one` over the rows.
    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_features();
        if d == 0 || x.len() % d != 0 {
            return Err(LearnError::Dimension(format!(
                "{} values do not split into rows of {d}",
                x.len()
            )));
        }
        Ok(x.par_chunks(d).map(|r| self.score_row(r)).collect())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n_features() {
            return Err(LearnError::Dimension(format!(
                "model expects {} features, got {len}",
                self.n_features()
            )));
        }
        Ok(())
    }
}

impl Classifier for ForestModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }
    fn score_row(&self, x: &[f64]) -> f64 {
        self.predict_row(x)
    }
}

impl Classifier for GbmModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }
    fn score_row(&self, x: &[f64]) -> f64 {
        self.predict_row(x)
    }
}

impl Classifier for MlpModel {
    fn n_features(&self) -> usize {
        MlpModel::n_features(self)
    }
    fn score_row(&self, x: &[f64]) -> f64 {
        self.predict_row(x)
    }
}

impl Classifier for StackerModel {
    fn n_features(&self) -> usize {
        StackerModel::n_features(self)
    }
    fn score_row(&self, x: &[f64]) -> f64 {
        self.predict_row(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub feature_names: Vec<String>,
    pub forest: ForestModel,
    pub gbm: GbmModel,
    pub mlp: MlpModel,
    pub stacker: StackerModel,
    #[serde(serialize_with = "thresholds_out", deserialize_with = "thresholds_in")]
    pub thresholds: Option<ThresholdSet>,
}

impl EnsembleModel {
    /// Fits the stacker on `validation` from the three base predictions.
    pub fn assemble(forest: ForestModel, gbm: GbmModel, mlp: MlpModel, validation: &Dataset) -> Result<Self> {
        for (name, names) in [
            ("forest", &forest.feature_names),
            ("gbm", &gbm.feature_names),
            ("mlp", &mlp.encoder.input_names().to_vec()),
        ] {
            if *names != validation.names {
                return Err(LearnError::Dimension(format!(
                    "{name} was trained on {names:?}, validation has {:?}",
                    validation.names
                )));
            }
        }
        let base = base_probabilities(&forest, &gbm, &mlp, &validation.x)?;
        let stacker = train_stacker(validation, &base)?;
        Ok(Self {
            feature_names: validation.names.clone(),
            forest,
            gbm,
            mlp,
            stacker,
            thresholds: None,
        })
    }

    /// Base probabilities (forest, gbm, mlp) for each row.
    pub fn base_probabilities(&self, x: &[f64]) -> Result<Vec<[f64; 3]>> {
        base_probabilities(&self.forest, &self.gbm, &self.mlp, x)
    }
}

fn base_probabilities(forest: &ForestModel, gbm: &GbmModel, mlp: &MlpModel, x: &[f64]) -> Result<Vec<[f64; 3]>> {
    let f = forest.predict_proba(x)?;
    let g = gbm.predict_proba(x)?;
    let m = mlp.predict_proba(x)?;
    Ok(f.into_iter().zip(g).zip(m).map(|((a, b), c)| [a, b, c]).collect())
}

impl Classifier for EnsembleModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }
    fn score_row(&self, x: &[f64]) -> f64 {
        let base = [
            self.forest.predict_row(x),
            self.gbm.predict_row(x),
            self.mlp.predict_row(x),
        ];
        crate::gbm::sigmoid(self.stacker.linear_score(x, &base))
    }
}

// Thresholds may be infinite, which JSON cannot carry, so they travel as
// their key=value text.
fn thresholds_out<S: Serializer>(t: &Option<ThresholdSet>, s: S) -> std::result::Result<S::Ok, S::Error> {
    t.as_ref().map(|t| t.to_kv().to_string()).serialize(s)
}

fn thresholds_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<ThresholdSet>, D::Error> {
    let text: Option<String> = Option::deserialize(d)?;
    text.map(|t| {
        let kv = KeyValues::parse(&t).map_err(serde::de::Error::custom)?;
        ThresholdSet::from_kv(&kv).map_err(serde::de::Error::custom)
    })
    .transpose()
}
