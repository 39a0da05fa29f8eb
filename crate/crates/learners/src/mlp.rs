//! Fully connected ReLU network with dropout before a sigmoid output,
//! trained by minibatch SGD with momentum on the binary cross-entropy.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shrubmap_core::evaluation::pr_auc;

use crate::dataset::{Dataset, Encoder, OneHot};
use crate::error::{LearnError, Result};
use crate::gbm::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    /// Dropout rate applied to the last hidden layer during training.
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128, 64, 32, 16],
            dropout: 0.2,
            epochs: 1000,
            batch_size: 256,
            learning_rate: 1e-3,
            momentum: 0.9,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(LearnError::Parameter("hidden layers must be nonempty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LearnError::Parameter(format!("dropout must lie in [0,1), got {}", self.dropout)));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(LearnError::Parameter("epochs, batch size and learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LearnError::Parameter(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Dense layer with a column-major `outputs x inputs` weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn he_uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            b: vec![0.0; outputs],
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.outputs, self.inputs, &self.w)
    }

    /// `out = W a + b`, accumulating inputs in index order.
    fn apply(&self, a: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.b);
        for (k, &ak) in a.iter().enumerate() {
            if ak != 0.0 {
                let col = &self.w[k * self.outputs..(k + 1) * self.outputs];
                for (o, &wk) in out.iter_mut().zip(col) {
                    *o += wk * ak;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn he_init(inputs: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            layers: sizes.windows(2).map(|w| Layer::he_uniform(w[0], w[1], rng)).collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.outputs).collect()
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    /// Output probability for one encoded row (no dropout).
    pub fn forward_row(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut z);
            if l < last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut a, &mut z);
        }
        sigmoid(a[0])
    }

    /// Mean cross-entropy over a batch (`x` column-major, one column per
    /// sample) and its gradient for every layer. `keep` holds the inverted
    /// dropout multipliers of the last hidden layer, if any.
    pub fn loss_and_gradients(&self, x: &DMatrix<f64>, y: &[f64], keep: Option<&DMatrix<f64>>) -> (f64, Vec<Layer>) {
        let batch = x.ncols();
        let last = self.layers.len() - 1;
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.matrix() * acts.last().expect("input");
            let b = DVector::from_column_slice(&layer.b);
            for mut c in z.column_iter_mut() {
                c += &b;
            }
            pre.push(z.clone());
            if l < last {
                let mut a = z.map(|v| v.max(0.0));
                if l == last - 1 {
                    if let Some(k) = keep {
                        a.component_mul_assign(k);
                    }
                }
                acts.push(a);
            } else {
                acts.push(z);
            }
        }
        let logits = acts.last().expect("output");
        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(1, batch);
        for j in 0..batch {
            let z = logits[(0, j)];
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            loss += softplus - y[j] * z;
            delta[(0, j)] = (sigmoid(z) - y[j]) / batch as f64;
        }
        loss /= batch as f64;

        let mut grads = vec![Layer::zeros(0, 0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let gw = &delta * acts[l].transpose();
            let gb: Vec<f64> = delta.row_iter().map(|r| r.sum()).collect();
            grads[l] = Layer {
                inputs: self.layers[l].inputs,
                outputs: self.layers[l].outputs,
                w: gw.as_slice().to_vec(),
                b: gb,
            };
            if l > 0 {
                let mut back = self.layers[l].matrix().transpose() * &delta;
                if l == last {
                    if let Some(k) = keep {
                        back.component_mul_assign(k);
                    }
                }
                let relu = pre[l - 1].map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                back.component_mul_assign(&relu);
                delta = back;
            }
        }
        (loss, grads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
    pub encoder: Encoder,
    pub network: Network,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Validation score after every epoch.
    pub history: Vec<f64>,
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.encoder.input_names().len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut enc = vec![0.0; self.encoder.width()];
        self.encoder.encode_row(x, &mut enc);
        self.network.forward_row(&enc)
    }
}

/// Validation scorer called after each epoch with (epoch, predictions, labels).
pub type EpochScorer<'a> = &'a mut dyn FnMut(usize, &[f64], &[bool]) -> Result<f64>;

pub fn train_mlp(train: &Dataset, validation: &Dataset, params: &MlpParams, seed: u64) -> Result<MlpModel> {
    train_mlp_with_scorer(train, validation, params, seed, &mut |_, p, y| Ok(pr_auc(y, p)?))
}

/// Trains for `params.epochs` epochs and keeps the weights of the epoch with
/// the highest validation score (the earliest on ties).
pub fn train_mlp_with_scorer(
    train: &Dataset,
    validation: &Dataset,
    params: &MlpParams,
    seed: u64,
    scorer: EpochScorer,
) -> Result<MlpModel> {
    params.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(LearnError::EmptyTraining);
    }
    if validation.names != train.names {
        return Err(LearnError::Dimension("validation features differ from training".into()));
    }
    let encoder = Encoder::fit(train, OneHot::Full)?;
    let d = encoder.width();
    let x = encoder.encode(train)?;
    let xv = encoder.encode(validation)?;
    let y: Vec<f64> = train.y.iter().map(|&l| l as u8 as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::he_init(d, &params.hidden, &mut rng);
    let mut velocity: Vec<Layer> = net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
    let keep_scale = 1.0 / (1.0 - params.dropout);
    let last_hidden = *params.hidden.last().expect("validated");

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut history = Vec::with_capacity(params.epochs);
    let mut buf = Vec::new();
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch_size) {
            buf.clear();
            for &i in chunk {
                buf.extend_from_slice(&x[i * d..(i + 1) * d]);
            }
            let xb = DMatrix::from_column_slice(d, chunk.len(), &buf);
            let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let keep = (params.dropout > 0.0).then(|| {
                DMatrix::from_fn(last_hidden, chunk.len(), |_, _| {
                    if rng.random::<f64>() < params.dropout {
                        0.0
                    } else {
                        keep_scale
                    }
                })
            });
            let (loss, grads) = net.loss_and_gradients(&xb, &yb, keep.as_ref());
            if !loss.is_finite() {
                return Err(LearnError::Divergence { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            for ((layer, v), g) in net.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((w, vw), gw) in layer.w.iter_mut().zip(&mut v.w).zip(&g.w) {
                    *vw = params.momentum * *vw - params.learning_rate * gw;
                    *w += *vw;
                }
                for ((b, vb), gb) in layer.b.iter_mut().zip(&mut v.b).zip(&g.b) {
                    *vb = params.momentum * *vb - params.learning_rate * gb;
                    *b += *vb;
                }
            }
        }
        let mean_loss = epoch_loss / train.len() as f64;
        let finite = net.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()));
        if !mean_loss.is_finite() || !finite {
            return Err(LearnError::Divergence { epoch, loss: mean_loss });
        }
        let preds: Vec<f64> = xv.chunks_exact(d).map(|r| net.forward_row(r)).collect();
        // Finite but enormous weights still overflow on the way through.
        if preds.iter().any(|p| p.is_nan()) {
            return Err(LearnError::Divergence { epoch, loss: mean_loss });
        }
        let score = scorer(epoch, &preds, &validation.y)?;
        log::debug!("mlp epoch {epoch}: train loss {mean_loss:.5}, validation score {score:.5}");
        history.push(score);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, net.clone()));
        }
    }
    let (_, best_epoch, network) = best.expect("at least one epoch");
    Ok(MlpModel {
        params: params.clone(),
        encoder,
        network,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = x.chunks(d).map(|r| r[0] - r[1 % d] + 0.3 * rng.random::<f64>() > 0.0).collect();
        Dataset::new((0..d).map(|j| format!("F{j}")).collect(), x, y).unwrap()
    }

    fn batch(data: &Dataset) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_column_slice(data.n_features(), data.len(), &data.x);
        (x, data.y.iter().map(|&l| l as u8 as f64).collect())
    }

    /// Central differences against the analytic gradient for the chosen
    /// parameters of every layer. Relative error uses a floor so that
    /// vanishing gradients are judged on absolute error.
    fn max_gradient_error(net: &Network, data: &Dataset, per_layer: Option<usize>) -> f64 {
        let (x, y) = batch(data);
        let (_, grads) = net.loss_and_gradients(&x, &y, None);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut worst: f64 = 0.0;
        for l in 0..net.layers.len() {
            let nw = net.layers[l].w.len();
            let weights: Vec<usize> = match per_layer {
                Some(k) if k < nw => rand::seq::index::sample(&mut rng, nw, k).into_vec(),
                _ => (0..nw).collect(),
            };
            let params = weights
                .into_iter()
                .map(|i| (false, i))
                .chain((0..net.layers[l].b.len()).map(|i| (true, i)));
            for (bias, i) in params {
                let mut probe = net.clone();
                let slot = |n: &mut Network| -> *mut f64 {
                    if bias {
                        &mut n.layers[l].b[i]
                    } else {
                        &mut n.layers[l].w[i]
                    }
                };
                let base = unsafe { *slot(&mut probe) };
                unsafe { *slot(&mut probe) = base + h };
                let up = probe.loss_and_gradients(&x, &y, None).0;
                unsafe { *slot(&mut probe) = base - h };
                let down = probe.loss_and_gradients(&x, &y, None).0;
                let numeric = (up - down) / (2.0 * h);
                let analytic = if bias { grads[l].b[i] } else { grads[l].w[i] };
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    /// He init with nonzero biases: with zero biases a unit whose inputs are
    /// all inactive sits exactly on the ReLU kink, where no derivative exists.
    fn kink_free_net(inputs: usize, hidden: &[usize], seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::he_init(inputs, hidden, &mut rng);
        for l in &mut net.layers {
            l.b.iter_mut().for_each(|b| *b = rng.random_range(0.05..0.3));
        }
        net
    }

    #[test]
    fn gradients_match_finite_differences_on_small_net() {
        let data = fixture(20, 6, 1);
        let net = kink_free_net(6, &[5, 4, 3], 2);
        let err = max_gradient_error(&net, &data, None);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_match_finite_differences_on_default_widths() {
        let data = fixture(20, 8, 3);
        let net = kink_free_net(8, &MlpParams::default().hidden, 4);
        assert_eq!(net.widths(), [256, 128, 64, 32, 16, 1]);
        let err = max_gradient_error(&net, &data, Some(60));
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_weights_output_sigmoid_of_bias() {
        let mut net = Network::he_init(4, &[8, 3], &mut ChaCha8Rng::seed_from_u64(1));
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        net.layers.last_mut().unwrap().b[0] = 0.7;
        for x in [[0.0; 4], [1.0, -2.0, 3.0, 9.0]] {
            assert_eq!(net.forward_row(&x), sigmoid(0.7));
        }
    }

    #[test]
    fn keeps_weights_of_best_epoch() {
        let train = fixture(300, 4, 5);
        let val = fixture(100, 4, 6);
        let params = MlpParams {
            hidden: vec![16, 8],
            epochs: 10,
            batch_size: 32,
            ..MlpParams::default()
        };
        let sequence = [0.1, 0.2, 0.9, 0.4, 0.9, 0.3, 0.2, 0.1, 0.5, 0.6];
        let m = train_mlp_with_scorer(&train, &val, &params, 7, &mut |e, _, _| Ok(sequence[e - 1])).unwrap();
        assert_eq!(m.best_epoch, 3);
        assert_eq!(m.history, sequence);
        let three = MlpParams { epochs: 3, ..params.clone() };
        let m3 = train_mlp_with_scorer(&train, &val, &three, 7, &mut |e, _, _| Ok(e as f64)).unwrap();
        assert_eq!(m.network, m3.network);
    }

    #[test]
    fn learns_and_is_deterministic() {
        let train = fixture(600, 4, 8);
        let val = fixture(200, 4, 9);
        let params = MlpParams {
            hidden: vec![16, 8],
            epochs: 30,
            learning_rate: 0.05,
            ..MlpParams::default()
        };
        let m = train_mlp(&train, &val, &params, 1).unwrap();
        assert!(m.history[m.best_epoch - 1] > 0.9, "{:?}", m.history);
        assert_eq!(m, train_mlp(&train, &val, &params, 1).unwrap());
        let p = m.predict_row(val.row(0));
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let train = fixture(100, 3, 10);
        let params = MlpParams {
            hidden: vec![8],
            epochs: 50,
            learning_rate: 1e12,
            momentum: 0.0,
            dropout: 0.0,
            ..MlpParams::default()
        };
        match train_mlp(&train, &train, &params, 1) {
            Err(LearnError::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
