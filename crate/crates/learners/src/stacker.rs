//! Logistic meta-learner over encoded predictors and the three base-model
//! probabilities, fit by iteratively reweighted least squares.

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Encoder, OneHot};
use crate::error::{LearnError, Result};
use crate::gbm::sigmoid;

pub const N_BASE: usize = 3;
pub const MAX_ITERATIONS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-8;
/// Penalty used only when the unpenalized fit separates the data.
pub const FALLBACK_RIDGE: f64 = 1e-6;
/// Coefficient size beyond which the unpenalized fit is taken as separated.
const SEPARATION_BOUND: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackerModel {
    pub encoder: Encoder,
    pub intercept: f64,
    /// Encoded predictor coefficients followed by one per base probability.
    pub coefficients: Vec<f64>,
    /// Intercept first, then in coefficient order.
    pub standard_errors: Vec<f64>,
    pub ridge: f64,
    pub iterations: usize,
    pub log_loss: f64,
}

impl StackerModel {
    /// Raw predictors plus the base probabilities.
    pub fn n_features(&self) -> usize {
        self.encoder.input_names().len() + N_BASE
    }

    pub fn linear_score(&self, x: &[f64], base: &[f64]) -> f64 {
        let mut enc = vec![0.0; self.encoder.width()];
        self.encoder.encode_row(x, &mut enc);
        let mut z = self.intercept;
        for (c, v) in self.coefficients.iter().zip(enc.iter().chain(base)) {
            z += c * v;
        }
        z
    }

    /// `row` holds the raw predictors followed by the base probabilities.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let k = self.encoder.input_names().len();
        sigmoid(self.linear_score(&row[..k], &row[k..]))
    }

    pub fn term_names(&self) -> Vec<String> {
        let mut names = self.encoder.output_names();
        names.extend(["P_RF", "P_GBM", "P_MLP"].map(String::from));
        names
    }
}

struct Fit {
    beta: DVector<f64>,
    covariance: DMatrix<f64>,
    iterations: usize,
    loss: f64,
}

fn mean_log_loss(eta: &DVector<f64>, y: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&z, &l)| {
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - l * z
        })
        .sum::<f64>()
        / y.len() as f64
}

/// Newton iterations on the mean log-loss plus `ridge/2 * |beta|^2`
/// (intercept unpenalized). `None` when the Hessian is not positive definite.
fn irls(x: &DMatrix<f64>, y: &[f64], ridge: f64) -> Option<Fit> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    let penalty = |b: &DVector<f64>| 0.5 * ridge * b.rows(1, p - 1).norm_squared();
    let mut loss = mean_log_loss(&(x * &beta), y) + penalty(&beta);
    let mut iterations = 0;
    let mut hessian = DMatrix::zeros(p, p);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let eta = x * &beta;
        let prob = eta.map(sigmoid);
        let w = prob.map(|q| q * (1.0 - q));
        let mut grad = x.transpose() * (&prob - &yv) / nf;
        let mut xw = x.clone();
        for (mut row, &wi) in xw.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        hessian = x.transpose() * xw / nf;
        for j in 1..p {
            hessian[(j, j)] += ridge;
            grad[j] += ridge * beta[j];
        }
        let step = hessian.clone().cholesky()?.solve(&grad);
        // Halve the step until the loss does not increase.
        let mut scale = 1.0;
        let (next, next_loss) = loop {
            let cand = &beta - &step * scale;
            let l = mean_log_loss(&(x * &cand), y) + penalty(&cand);
            if l <= loss || scale < 1e-10 {
                break (cand, l);
            }
            scale *= 0.5;
        };
        if !next_loss.is_finite() || next.iter().any(|b| !b.is_finite()) {
            return None;
        }
        let change = loss - next_loss;
        beta = next;
        loss = next_loss;
        if change.abs() < TOLERANCE {
            break;
        }
    }
    let covariance = hessian.cholesky()?.inverse() / nf;
    Some(Fit {
        beta,
        covariance,
        iterations,
        loss,
    })
}

/// Fits the stacker on validation records and their base probabilities.
pub fn train_stacker(validation: &Dataset, base_probs: &[[f64; N_BASE]]) -> Result<StackerModel> {
    if validation.is_empty() {
        return Err(LearnError::EmptyTraining);
    }
    if base_probs.len() != validation.len() {
        return Err(LearnError::Dimension(format!(
            "{} base probability triples for {} records",
            base_probs.len(),
            validation.len()
        )));
    }
    if base_probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(LearnError::Parameter("base probabilities must lie in [0,1]".into()));
    }
    let encoder = Encoder::fit(validation, OneHot::Reference)?;
    let w = encoder.width();
    let p = 1 + w + N_BASE;
    let n = validation.len();
    let mut design = DMatrix::zeros(n, p);
    let mut enc = vec![0.0; w];
    for (i, (row, base)) in validation.rows().zip(base_probs).enumerate() {
        encoder.encode_row(row, &mut enc);
        design[(i, 0)] = 1.0;
        for (j, v) in enc.iter().chain(base.iter()).enumerate() {
            design[(i, j + 1)] = *v;
        }
    }
    let y: Vec<f64> = validation.y.iter().map(|&l| l as u8 as f64).collect();

    let separated = |f: &Fit| f.beta.iter().any(|b| b.abs() > SEPARATION_BOUND);
    let (fit, ridge) = match irls(&design, &y, 0.0) {
        Some(f) if !separated(&f) => (f, 0.0),
        _ => {
            info!("stacker: unpenalized fit is separated or singular, refitting with ridge {FALLBACK_RIDGE}");
            let f = irls(&design, &y, FALLBACK_RIDGE)
                .ok_or_else(|| LearnError::Numeric("stacker Hessian is singular even with ridge".into()))?;
            (f, FALLBACK_RIDGE)
        }
    };
    let standard_errors = (0..p).map(|j| fit.covariance[(j, j)].max(0.0).sqrt()).collect();
    Ok(StackerModel {
        encoder,
        intercept: fit.beta[0],
        coefficients: fit.beta.iter().skip(1).copied().collect(),
        standard_errors,
        ridge,
        iterations: fit.iterations,
        log_loss: fit.loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use shrubmap_core::evaluation::roc_auc;

    fn null_data(n: usize, seed: u64) -> (Dataset, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = vec!["A".into(), "B".into(), "LCSEC".into()];
        let mut x = Vec::new();
        for _ in 0..n {
            x.extend([rng.random::<f64>(), rng.random::<f64>() * 10.0, rng.random_range(1..4) as f64]);
        }
        let y = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        let base = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        (Dataset::new(names, x, y).unwrap(), base)
    }

    fn intercept_only_loss(y: &[bool]) -> f64 {
        let p = y.iter().filter(|&&l| l).count() as f64 / y.len() as f64;
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }

    #[test]
    fn zero_coefficients_give_one_half() {
        let (data, base) = null_data(50, 1);
        let mut m = train_stacker(&data, &base).unwrap();
        m.intercept = 0.0;
        m.coefficients.fill(0.0);
        for (r, b) in data.rows().zip(&base) {
            let row: Vec<f64> = r.iter().chain(b).copied().collect();
            assert_eq!(m.predict_row(&row), 0.5);
        }
    }

    #[test]
    fn null_inputs_get_insignificant_coefficients() {
        let (data, base) = null_data(3000, 2);
        let m = train_stacker(&data, &base).unwrap();
        assert_eq!(m.ridge, 0.0);
        assert_eq!(m.term_names().len(), m.coefficients.len());
        for (c, se) in m.coefficients.iter().zip(&m.standard_errors[1..]) {
            assert!(c.abs() < 3.0 * se, "{c} vs se {se}");
        }
        let prevalence = data.positives() as f64 / data.len() as f64;
        let mean: f64 = data
            .rows()
            .zip(&base)
            .map(|(r, b)| sigmoid(m.linear_score(r, b)))
            .sum::<f64>()
            / data.len() as f64;
        assert!((mean - prevalence).abs() < 1e-6);
    }

    #[test]
    fn optimum_solves_the_score_equations() {
        let (mut data, base) = null_data(800, 3);
        // Make the labels depend on the inputs.
        for (i, b) in base.iter().enumerate() {
            data.y[i] = b[0] + 0.3 * data.row(i)[0] > 0.8;
        }
        let m = train_stacker(&data, &base).unwrap();
        let mut enc = vec![0.0; m.encoder.width()];
        let mut score = vec![0.0; 1 + m.coefficients.len()];
        for ((r, b), &l) in data.rows().zip(&base).zip(&data.y) {
            m.encoder.encode_row(r, &mut enc);
            let resid = l as u8 as f64 - sigmoid(m.linear_score(r, b));
            score[0] += resid;
            for (s, v) in score[1..].iter_mut().zip(enc.iter().chain(b)) {
                *s += resid * v;
            }
        }
        let worst = score.iter().fold(0.0f64, |a, s| a.max(s.abs())) / data.len() as f64;
        assert!(worst < 1e-6, "{score:?}");
    }

    #[test]
    fn perfect_base_probabilities_trigger_ridge_and_beat_intercept() {
        let (data, _) = null_data(200, 4);
        let base: Vec<[f64; 3]> = data.y.iter().map(|&l| [l as u8 as f64; 3]).collect();
        let m = train_stacker(&data, &base).unwrap();
        assert_eq!(m.ridge, FALLBACK_RIDGE);
        assert!(m.log_loss < intercept_only_loss(&data.y));
    }

    #[test]
    fn ranking_follows_the_linear_score() {
        let (mut data, base) = null_data(500, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (i, b) in base.iter().enumerate() {
            data.y[i] = b[1] + 0.5 * rng.random::<f64>() > 0.8;
        }
        let m = train_stacker(&data, &base).unwrap();
        let lin: Vec<f64> = data.rows().zip(&base).map(|(r, b)| m.linear_score(r, b)).collect();
        let prob: Vec<f64> = lin.iter().map(|&z| sigmoid(z)).collect();
        assert!(prob.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(roc_auc(&data.y, &lin).unwrap(), roc_auc(&data.y, &prob).unwrap());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (data, base) = null_data(20, 6);
        assert!(train_stacker(&data, &base[..19]).is_err());
        let mut bad = base.clone();
        bad[0][1] = 1.5;
        assert!(train_stacker(&data, &bad).is_err());
    }
}
