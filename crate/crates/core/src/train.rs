//! Losses, ADAM and the training loop.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gnn::{FeatureMatrix, GnnModel};

/// Softmax cross-entropy with max subtraction. Returns the loss and its
/// gradient `softmax(logits) - one_hot(label)`.
pub fn cross_entropy(logits: &DVector<f64>, label: usize) -> Result<(f64, DVector<f64>)> {
    if label >= logits.len() {
        return Err(invalid(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.max();
    let shifted = logits.map(|z| z - max);
    let sum: f64 = shifted.iter().map(|z| z.exp()).sum();
    let log_sum = sum.ln();
    let loss = log_sum - shifted[label];
    let mut grad = shifted.map(|z| (z - log_sum).exp());
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean squared error over unmasked entries; the gradient is zero on masked
/// entries. An all-masked vector has zero loss.
pub fn mse(pred: &DVector<f64>, target: &DVector<f64>, mask: &[bool]) -> Result<(f64, DVector<f64>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(invalid(format!(
            "mse length mismatch: pred {}, target {}, mask {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = DVector::zeros(pred.len());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - target[i];
            loss += d * d;
            grad[i] = 2.0 * d / count as f64;
        }
    }
    Ok((loss / count as f64, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: usize, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999)
    }

    pub fn with_betas(params: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(invalid(format!(
            "adam state has {} entries, params {}, grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Rmse,
}

impl Metric {
    fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Metric::Accuracy => candidate > incumbent,
            Metric::Rmse => candidate < incumbent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values { target: DVector<f64>, mask: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: FeatureMatrix,
    pub target: Target,
}

impl Sample {
    pub fn class(input: FeatureMatrix, label: usize) -> Self {
        Self {
            input,
            target: Target::Class(label),
        }
    }

    /// Single regression target.
    pub fn value(input: FeatureMatrix, value: f64) -> Self {
        Self {
            input,
            target: Target::Values {
                target: DVector::from_element(1, value),
                mask: vec![true],
            },
        }
    }
}

/// Train, validation and test samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub metric: Metric,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Validation is evaluated every this many epochs (and at the last one).
    #[serde(default = "default_cadence")]
    pub validate_every: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_cadence() -> usize {
    1
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64, loss: LossKind, metric: Metric) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            seed,
            loss,
            metric,
            beta1: default_beta1(),
            beta2: default_beta2(),
            validate_every: default_cadence(),
        }
    }

    fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.validate_every == 0 {
            return Err(invalid("batch size and validation cadence must be positive"));
        }
        if self.epochs > 0 && self.batch_size > train_len {
            return Err(invalid(format!(
                "batch size {} exceeds training set of {train_len}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// One epoch of history. Validation columns are NaN on epochs without
/// validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub metric: f64,
}

pub const HISTORY_HEADER: [&str; 4] = ["epoch", "train_loss", "val_loss", "metric"];

pub fn write_history<W: Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.metric.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_history(rows: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    write_history(rows, std::fs::File::create(path)?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last epoch.
    pub model: GnnModel,
    /// Model at the epoch with the best validation metric (the final model
    /// when no validation set is given).
    pub best: GnnModel,
    pub best_epoch: Option<usize>,
    pub history: Vec<HistoryRow>,
}

fn sample_loss(model: &GnnModel, sample: &Sample, kind: LossKind) -> Result<(f64, DVector<f64>, crate::gnn::ModelCache)> {
    let (out, cache) = model.forward(&sample.input)?;
    let (loss, grad) = match (&sample.target, kind) {
        (Target::Class(c), LossKind::CrossEntropy) => cross_entropy(&out, *c)?,
        (Target::Values { target, mask }, LossKind::Mse) => mse(&out, target, mask)?,
        _ => return Err(invalid(format!("{kind:?} loss does not match the sample target"))),
    };
    Ok((loss, grad, cache))
}

/// Mean loss over a sample set without gradients.
pub fn mean_loss(model: &GnnModel, samples: &[Sample], kind: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = samples
        .par_iter()
        .map(|s| sample_loss(model, s, kind).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mini-batch ADAM on the mean batch loss. Batches are reshuffled every epoch
/// from a stream derived from `(seed, epoch)`; per-sample gradients are
/// computed in parallel and summed in batch order.
pub fn train(model: GnnModel, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(data.train.len())?;
    let mut model = model;
    let mut params = model.params_flat();
    let mut adam = AdamState::with_betas(params.len(), config.learning_rate, config.beta1, config.beta2);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (loss, grad_out, cache) = sample_loss(&model, &data.train[i], config.loss)?;
                    Ok((loss, model.backward(&cache, &grad_out)?.flat()))
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v * scale;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss * scale,
                });
            }
            epoch_loss += batch_loss;
            adam_step(&mut adam, &mut params, &grad)?;
            model.set_params_flat(&params)?;
        }
        let train_loss = epoch_loss / data.train.len() as f64;

        let validate = !data.validation.is_empty()
            && ((epoch + 1) % config.validate_every == 0 || epoch + 1 == config.epochs);
        let (val_loss, metric) = if validate {
            let v = mean_loss(&model, &data.validation, config.loss)?;
            let m = evaluate(&model, &data.validation, config.metric)?;
            if best.as_ref().map_or(true, |(b, _, _)| config.metric.better(m, *b)) {
                best = Some((m, epoch, params.clone()));
            }
            (v, m)
        } else {
            (f64::NAN, f64::NAN)
        };
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} metric {metric:.6}");
        history.push(HistoryRow {
            epoch,
            train_loss,
            val_loss,
            metric,
        });
    }

    let (best_model, best_epoch) = match best {
        Some((_, epoch, p)) => {
            let mut m = model.clone();
            m.set_params_flat(&p)?;
            (m, Some(epoch))
        }
        None => (model.clone(), None),
    };
    Ok(TrainOutcome {
        model,
        best: best_model,
        best_epoch,
        history,
    })
}

/// Accuracy (fraction of argmax hits, first index on ties) or RMSE over all
/// unmasked regression entries.
pub fn evaluate(model: &GnnModel, samples: &[Sample], metric: Metric) -> Result<f64> {
    evaluate_with(model, samples, metric, None)
}

/// RMSE with predictions clamped to `[lo, hi]` before comparison.
pub fn rmse_clamped(model: &GnnModel, samples: &[Sample], lo: f64, hi: f64) -> Result<f64> {
    evaluate_with(model, samples, Metric::Rmse, Some((lo, hi)))
}

fn evaluate_with(model: &GnnModel, samples: &[Sample], metric: Metric, clamp: Option<(f64, f64)>) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("cannot evaluate on an empty sample set"));
    }
    let outputs = samples
        .par_iter()
        .map(|s| model.predict(&s.input))
        .collect::<Result<Vec<_>>>()?;
    match metric {
        Metric::Accuracy => {
            let mut hits = 0usize;
            for (s, out) in samples.iter().zip(&outputs) {
                let Target::Class(c) = s.target else {
                    return Err(invalid("accuracy needs class targets"));
                };
                if argmax(out) == c {
                    hits += 1;
                }
            }
            Ok(hits as f64 / samples.len() as f64)
        }
        Metric::Rmse => {
            let (mut sum, mut count) = (0.0, 0usize);
            for (s, out) in samples.iter().zip(&outputs) {
                let Target::Values { target, mask } = &s.target else {
                    return Err(invalid("rmse needs value targets"));
                };
                for i in 0..out.len() {
                    if mask[i] {
                        let p = clamp.map_or(out[i], |(lo, hi)| out[i].clamp(lo, hi));
                        sum += (p - target[i]).powi(2);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(invalid("no unmasked entries to evaluate"));
            }
            Ok((sum / count as f64).sqrt())
        }
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{build_model, Architecture, LayerArch, ModelConfig, Nonlinearity, PoolingStrategy, Summarizer};
    use crate::graphon::Graphon;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = cross_entropy(&DVector::zeros(10), 3).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        let mut z = DVector::zeros(4);
        z[2] = 50.0;
        assert!(cross_entropy(&z, 2).unwrap().0 < 1e-20);
        let (l, _) = cross_entropy(&DVector::from_vec(vec![1.0, 0.0]), 0).unwrap();
        assert!((l - 0.313262).abs() < 1e-6);
        assert!(cross_entropy(&z, 4).is_err());
    }

    #[test]
    fn mse_examples() {
        let p = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(mse(&p, &p, &[true, true]).unwrap().0, 0.0);
        let (l, g) = mse(&DVector::from_element(1, 3.0), &DVector::from_element(1, 5.0), &[true]).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g[0], -4.0);
        let t = DVector::from_vec(vec![0.0, 7.0, 2.0]);
        let p = DVector::from_vec(vec![1.0, 5.0, -3.0]);
        let (l, g) = mse(&p, &t, &[false, true, false]).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g.as_slice(), &[0.0, -4.0, 0.0]);
    }

    #[test]
    fn adam_examples() {
        let mut s = AdamState::new(3, 0.001);
        let mut p = vec![1.0, -2.0, 0.5];
        adam_step(&mut s, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);

        let mut s = AdamState::new(1, 0.001);
        let mut p = vec![0.0];
        adam_step(&mut s, &mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);

        let mut s = AdamState::new(1, 0.01);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam_step(&mut s, &mut p, &[-3.7]).unwrap();
            last = p[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_gradient_sums_to_zero(z in prop::collection::vec(-30.0f64..30.0, 2..12), pick in 0usize..100) {
            let label = pick % z.len();
            let (_, g) = cross_entropy(&DVector::from_vec(z), label).unwrap();
            prop_assert!(g.sum().abs() < 1e-12);
        }

        #[test]
        fn adam_update_bounded_by_lr(g in 1e-6f64..1e3, lr in 1e-4f64..1e-1, steps in 1usize..200) {
            let mut s = AdamState::new(1, lr);
            let mut p = vec![0.0];
            for _ in 0..steps {
                let before = p[0];
                adam_step(&mut s, &mut p, &[g]).unwrap();
                prop_assert!((p[0] - before).abs() <= lr * (1.0 + 1e-6));
            }
        }

        #[test]
        fn loss_gradients_match_directional_derivatives(
            z in prop::collection::vec(-5.0f64..5.0, 2..8),
            d in prop::collection::vec(-1.0f64..1.0, 8),
            pick in 0usize..100,
        ) {
            let n = z.len();
            let z = DVector::from_vec(z);
            let dir = DVector::from_iterator(n, d.into_iter().take(n));
            let h = 1e-6;
            let label = pick % n;
            let (_, g) = cross_entropy(&z, label).unwrap();
            let num = (cross_entropy(&(&z + &dir * h), label).unwrap().0
                - cross_entropy(&(&z - &dir * h), label).unwrap().0) / (2.0 * h);
            let ana = g.dot(&dir);
            prop_assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1e-2));

            let target = z.map(|v| v * 0.5 + 1.0);
            let mask: Vec<bool> = (0..n).map(|i| i % 3 != 1).collect();
            let (_, g) = mse(&z, &target, &mask).unwrap();
            let num = (mse(&(&z + &dir * h), &target, &mask).unwrap().0
                - mse(&(&z - &dir * h), &target, &mask).unwrap().0) / (2.0 * h);
            let ana = g.dot(&dir);
            prop_assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1e-2));
        }
    }

    fn toy() -> (GnnModel, Dataset) {
        // two isolated nodes; class = which node carries the larger value
        let arch = Architecture {
            input_features: 1,
            layers: vec![LayerArch {
                features: 1,
                taps: 1,
                nonlinearity: Nonlinearity::Identity,
                summarizer: Summarizer::Mean,
            }],
            outputs: 2,
        };
        let model = build_model(
            &Graphon::constant(0.0).unwrap(),
            &ModelConfig::new(vec![2], arch, PoolingStrategy::Graphon, 1),
        )
        .unwrap();
        let mut train = Vec::new();
        for i in 0..20 {
            let a = 0.1 + i as f64 * 0.05;
            train.push(Sample::class(DMatrix::from_column_slice(2, 1, &[a + 1.0, a]), 0));
            train.push(Sample::class(DMatrix::from_column_slice(2, 1, &[a, a + 1.0]), 1));
        }
        let validation = train.iter().step_by(5).cloned().collect();
        (model, Dataset { train, validation, test: Vec::new() })
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (model, data) = toy();
        let cfg = TrainConfig::new(0, 4, 0.01, 0, LossKind::CrossEntropy, Metric::Accuracy);
        let out = train(model.clone(), &data, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model.params_flat(), model.params_flat());
    }

    #[test]
    fn separable_toy_loss_decreases() {
        let (model, data) = toy();
        let cfg = TrainConfig::new(10, 40, 0.05, 3, LossKind::CrossEntropy, Metric::Accuracy);
        let out = train(model, &data, &cfg).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{:?}", out.history);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (model, data) = toy();
        let cfg = TrainConfig::new(6, 7, 0.02, 11, LossKind::CrossEntropy, Metric::Accuracy);
        let a = train(model.clone(), &data, &cfg).unwrap();
        let b = train(model, &data, &cfg).unwrap();
        let bits = |h: &[HistoryRow]| -> Vec<[u64; 3]> {
            h.iter().map(|r| [r.train_loss.to_bits(), r.val_loss.to_bits(), r.metric.to_bits()]).collect()
        };
        assert_eq!(bits(&a.history), bits(&b.history));
        assert_eq!(a.model.params_flat(), b.model.params_flat());
        // earlier epochs do not depend on the run length
        let (model, data) = toy();
        let short = train(model, &data, &TrainConfig { epochs: 3, ..cfg }).unwrap();
        assert_eq!(bits(&short.history), bits(&a.history[..3]));
    }

    #[test]
    fn divergence_is_reported() {
        let (model, mut data) = toy();
        data.train[5].input[(0, 0)] = f64::NAN;
        let cfg = TrainConfig::new(2, 40, 0.01, 0, LossKind::CrossEntropy, Metric::Accuracy);
        assert!(matches!(train(model, &data, &cfg), Err(Error::Divergence { epoch: 0, batch: 0, .. })));
    }

    #[test]
    fn batch_larger_than_training_set_rejected() {
        let (model, data) = toy();
        let cfg = TrainConfig::new(1, 41, 0.01, 0, LossKind::CrossEntropy, Metric::Accuracy);
        assert!(train(model, &data, &cfg).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let arch = Architecture {
            input_features: 1,
            layers: vec![LayerArch {
                features: 1,
                taps: 1,
                nonlinearity: Nonlinearity::Identity,
                summarizer: Summarizer::Mean,
            }],
            outputs: 2,
        };
        let mut model = build_model(
            &Graphon::constant(0.0).unwrap(),
            &ModelConfig::new(vec![2], arch, PoolingStrategy::Graphon, 1),
        )
        .unwrap();
        // identity readout: output = input
        model.set_params_flat(&[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let x = |a: f64, b: f64| DMatrix::from_column_slice(2, 1, &[a, b]);
        let all = vec![Sample::class(x(1.0, 0.0), 0), Sample::class(x(0.0, 1.0), 1)];
        assert_eq!(evaluate(&model, &all, Metric::Accuracy).unwrap(), 1.0);
        let quarter = vec![
            Sample::class(x(1.0, 0.0), 0),
            Sample::class(x(1.0, 0.0), 1),
            Sample::class(x(0.0, 1.0), 0),
            Sample::class(x(2.0, 1.0), 1),
        ];
        assert_eq!(evaluate(&model, &quarter, Metric::Accuracy).unwrap(), 0.25);

        let reg = vec![
            Sample {
                input: x(3.0, 3.0),
                target: Target::Values { target: DVector::from_vec(vec![3.0, 3.0]), mask: vec![true, true] },
            };
            3
        ];
        assert_eq!(evaluate(&model, &reg, Metric::Rmse).unwrap(), 0.0);
        assert!(evaluate(&model, &reg, Metric::Accuracy).is_err());
    }

    #[test]
    fn history_csv_round_trip() {
        let rows = vec![
            HistoryRow { epoch: 0, train_loss: 0.5, val_loss: 0.25, metric: 0.75 },
            HistoryRow { epoch: 1, train_loss: 0.1 + 0.2, val_loss: f64::NAN, metric: f64::NAN },
        ];
        let mut buf = Vec::new();
        write_history(&rows, &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let back: Vec<Vec<f64>> = r
            .records()
            .map(|rec| rec.unwrap().iter().map(|f| f.parse().unwrap()).collect())
            .collect();
        assert_eq!(back[1][1].to_bits(), (0.1f64 + 0.2).to_bits());
        assert!(back[1][2].is_nan());
        assert_eq!(back[0], vec![0.0, 0.5, 0.25, 0.75]);
    }
}
