//! Accuracy metrics, threshold calibration and validation sampling plans.

mod hex;
mod metrics;

pub use hex::*;
pub use metrics::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// ROC AUC over a seeded uniform sample of `n` pixels valid in both rasters.
/// With `n` at or above the valid population every pixel is used. A sample
/// holding a single class is redrawn once at twice the size.
pub fn auc_on_patchwork_sample(labels: &Raster, probs: &Raster, n: usize, seed: u64) -> Result<f64> {
    labels
        .transform()
        .ensure_same(probs.transform(), "probability raster")?;
    labels.expect_bool("labels")?;
    let p = probs.expect_f32("probabilities")?;
    let valid: Vec<usize> = (0..labels.len())
        .filter(|&i| !labels.is_nodata_at(i) && !probs.is_nodata_at(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut size = n;
    for attempt in 0..2 {
        let chosen: Vec<usize> = if size >= valid.len() {
            valid.clone()
        } else {
            rand::seq::index::sample(&mut rng, valid.len(), size)
                .into_iter()
                .map(|j| valid[j])
                .collect()
        };
        let l: Vec<bool> = chosen.iter().map(|&i| labels.get_bool(i) == Some(true)).collect();
        let s: Vec<f64> = chosen.iter().map(|&i| p[i] as f64).collect();
        match roc_auc(&l, &s) {
            Err(Error::Undefined(_)) if attempt == 0 && size < valid.len() => size *= 2,
            other => return other,
        }
    }
    unreachable!("second attempt always returns")
}
