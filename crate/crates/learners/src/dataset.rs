//! Dense row-major training matrices and feature encodings.

use serde::{Deserialize, Serialize};
use shrubmap_core::predictors::stack::CATEGORICAL_BANDS;
use shrubmap_core::sampling::{SampleSet, Split};

use crate::error::{LearnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    /// Row-major, `len() * n_features()` values.
    pub x: Vec<f64>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Vec<f64>, y: Vec<bool>) -> Result<Self> {
        if x.len() != names.len() * y.len() {
            return Err(LearnError::Dimension(format!(
                "{} values for {} rows of {} features",
                x.len(),
                y.len(),
                names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::Parameter("features must be finite".into()));
        }
        Ok(Self { names, x, y })
    }

    pub fn from_sample(set: &SampleSet, split: Split) -> Result<Self> {
        let (x, y) = set.matrix(split);
        Self::new(set.feature_names.clone(), x.into_iter().map(f64::from).collect(), y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.n_features().max(1))
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&l| l).count()
    }
}

/// How categorical columns expand into indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OneHot {
    /// One indicator per training level.
    Full,
    /// The first (smallest) level is the reference and gets no indicator.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Column {
    Numeric { mean: f64, sd: f64 },
    Categorical { levels: Vec<i64>, first_indicator: usize },
}

/// Standardizes numeric columns with training statistics and one-hot encodes
/// categorical ones. Unseen levels encode as all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    names: Vec<String>,
    columns: Vec<Column>,
    one_hot: OneHot,
    width: usize,
}

impl Encoder {
    pub fn fit(data: &Dataset, one_hot: OneHot) -> Result<Self> {
        if data.is_empty() {
            return Err(LearnError::EmptyTraining);
        }
        let n = data.len() as f64;
        let skip = (one_hot == OneHot::Reference) as usize;
        let mut columns = Vec::with_capacity(data.n_features());
        let mut width = 0;
        for (j, name) in data.names.iter().enumerate() {
            let values = data.rows().map(|r| r[j]);
            if CATEGORICAL_BANDS.contains(&name.as_str()) {
                let mut levels: Vec<i64> = values.map(|v| v.round() as i64).collect();
                levels.sort_unstable();
                levels.dedup();
                let used = levels.len() - skip;
                columns.push(Column::Categorical {
                    levels,
                    first_indicator: width,
                });
                width += used;
            } else {
                let mean = values.clone().sum::<f64>() / n;
                let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                columns.push(Column::Numeric { mean, sd });
                width += 1;
            }
        }
        Ok(Self {
            names: data.names.clone(),
            columns,
            one_hot,
            width,
        })
    }

    pub fn input_names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Output column names: numeric names, then `NAME=level` indicators.
    pub fn output_names(&self) -> Vec<String> {
        let skip = (self.one_hot == OneHot::Reference) as usize;
        let mut out = Vec::with_capacity(self.width);
        for (c, name) in self.columns.iter().zip(&self.names) {
            match c {
                Column::Numeric { .. } => out.push(name.clone()),
                Column::Categorical { levels, .. } => {
                    out.extend(levels[skip..].iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        out
    }

    pub fn encode_row(&self, row: &[f64], out: &mut [f64]) {
        let skip = (self.one_hot == OneHot::Reference) as usize;
        let mut k = 0;
        for (c, &v) in self.columns.iter().zip(row) {
            match c {
                Column::Numeric { mean, sd } => {
                    out[k] = (v - mean) / sd;
                    k += 1;
                }
                Column::Categorical {
                    levels,
                    first_indicator,
                } => {
                    let used = levels.len() - skip;
                    out[*first_indicator..first_indicator + used].fill(0.0);
                    if let Ok(pos) = levels.binary_search(&(v.round() as i64)) {
                        if pos >= skip {
                            out[first_indicator + pos - skip] = 1.0;
                        }
                    }
                    k = first_indicator + used;
                }
            }
        }
    }

    pub fn encode(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check(data.n_features())?;
        let mut out = vec![0.0; data.len() * self.width];
        if self.width > 0 {
            for (row, dst) in data.rows().zip(out.chunks_exact_mut(self.width)) {
                self.encode_row(row, dst);
            }
        }
        Ok(out)
    }

    pub fn check(&self, n_features: usize) -> Result<()> {
        if n_features != self.columns.len() {
            return Err(LearnError::Dimension(format!(
                "encoder expects {} features, got {n_features}",
                self.columns.len()
            )));
        }
        Ok(())
    }
}
