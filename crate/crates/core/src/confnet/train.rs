use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_gradients, predict_sequence, ForwardMode};
use super::ConfidenceModelParams;
use crate::data::{Dataset, DomainTag};
use crate::error::{Error, Result};
use crate::features::{assemble_features, FeatureSequence};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.patience > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad training config {self:?}")))
        }
    }
}

/// Adam with bias correction, one moment buffer per flat parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: &TrainConfig, n_params: usize) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ConfidenceModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Per-column mean and population variance over every row.
pub fn feature_statistics(seqs: &[FeatureSequence], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n: usize = seqs.iter().map(|s| s.len()).sum();
    let mut mean = vec![0.0; dim];
    for row in seqs.iter().flat_map(|s| &s.features) {
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut var = vec![0.0; dim];
    for row in seqs.iter().flat_map(|s| &s.features) {
        for ((v, x), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    (mean, var)
}

/// Pooled MAE over every epoch of every sequence, dropout off.
fn evaluate(params: &ConfidenceModelParams, seqs: &[FeatureSequence]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for seq in seqs {
        let targets = seq.targets.as_ref().expect("training sequences carry targets");
        for (y, t) in predict_sequence(params, seq)?.iter().zip(targets) {
            sum += (y - t).abs();
        }
        n += seq.len();
    }
    Ok(sum / n as f64)
}

fn split_sequences(dataset: &Dataset, tag: DomainTag) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::new();
    for rec in dataset.split(tag) {
        rec.labels()?;
        out.extend(assemble_features(rec)?);
    }
    Ok(out)
}

/// Fit the confidence network on the ID_TRAIN recordings of `dataset`,
/// early-stopping on the pooled MAE of the ID_VAL recordings.
///
/// Epoch 0 of the history is the untrained model. One Adam step is taken per
/// (recording, channel pair) sequence; the returned weights are the best
/// validation epoch, rounded to f32.
pub fn train(
    model: &ConfidenceModelParams,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_seqs = split_sequences(dataset, DomainTag::IdTrain)?;
    let val_seqs = split_sequences(dataset, DomainTag::IdVal)?;
    if train_seqs.is_empty() || val_seqs.is_empty() {
        return Err(Error::Insufficient(format!(
            "training needs ID_TRAIN and ID_VAL recordings ({} / {} sequences)",
            train_seqs.len(),
            val_seqs.len()
        )));
    }

    let mut params = model.clone();
    let (mean, var) = feature_statistics(&train_seqs, params.config.input_dim);
    params.norm_mean = mean;
    params.norm_var = var;
    params.quantize();

    let mut flat = params.to_flat();
    let mut adam = Adam::new(config, flat.len());
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_mae: evaluate(&params, &train_seqs)?,
        val_mae: evaluate(&params, &val_seqs)?,
    }];
    if !history[0].val_mae.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut best = params.clone();
    let mut best_val = history[0].val_mae;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut step: u64 = 0;

    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut epochs_seen = 0usize;
        for &i in &order {
            let seq = &train_seqs[i];
            let mode = ForwardMode::Training {
                seed: config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step),
            };
            step += 1;
            let (loss, grad) = loss_and_gradients(&params, &[seq], mode)
                .map_err(|e| match e {
                    Error::Diverged { .. } => Error::Diverged { epoch },
                    other => other,
                })?;
            loss_sum += loss * seq.len() as f64;
            epochs_seen += seq.len();
            adam.update(&mut flat, &grad.to_flat());
            params.set_flat(&flat);
        }
        let val_mae = evaluate(&params, &val_seqs)?;
        let train_mae = loss_sum / epochs_seen as f64;
        if !val_mae.is_finite() || !train_mae.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_mae,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    best.quantize();
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> Result<Vec<u8>> {
    crate::io::csv_bytes(history)
}
