//! Shallow backpropagation training: Adam on an MSE loss over tanh outputs,
//! stopped at a train-error floor or an epoch cap.

mod adam;
mod checkpoint;
mod gradcheck;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{require_both_classes, Label, Sample};
use crate::error::{Error, Result};
use crate::network::Network;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, GradCheckEntry, GradCheckOptions, GradCheckReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Training stops after the first epoch whose train error is at or below this.
    pub min_train_error: f64,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 50,
            min_train_error: 0.03,
            batch_size: 32,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_train_error > 0.0 && self.min_train_error < 1.0) {
            return Err(Error::Config("training.min_train_error must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("training.max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("training.learning_rate must be positive".into()));
        }
        let AdamHyper { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::Config("training.adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// One-hot target in tanh range: `+1` for the class slot, `-1` elsewhere.
pub fn encode_target(label: Label) -> [f64; 2] {
    match label {
        Label::Healthy => [1.0, -1.0],
        Label::Glaucoma => [-1.0, 1.0],
    }
}

/// Argmax of the class scores; ties resolve to the first class.
pub fn predict_label(scores: &[f64]) -> Label {
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > scores[b] { i } else { b });
    Label::from_index(best).unwrap_or(Label::Healthy)
}

/// Mean squared error over the output vector and its gradient.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,train_error\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.train_error));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub adam: AdamState,
    /// True when the train-error floor ended training before the epoch cap.
    pub converged: bool,
}

/// Trains on every sample.
pub fn train(net: &mut Network, data: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let all: Vec<usize> = (0..data.len()).collect();
    train_subset(net, data, &all, cfg)
}

/// Trains on `data[indices]`. Each epoch reshuffles with the seeded stream,
/// runs mini-batch Adam steps on the batch-mean loss, and records the mean
/// loss and misclassification rate seen during the epoch.
pub fn train_subset(net: &mut Network, data: &[Sample], indices: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Dataset(format!("sample index {bad} out of range")));
    }
    require_both_classes(indices.iter().map(|&i| &data[i].label))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.param_buffers());
    let mut grads = net.zero_gradients();
    let mut order = indices.to_vec();
    let mut history = TrainHistory::default();
    let mut converged = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut errors = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &data[i];
                let trace = net.forward_trace(&s.image)?;
                let (loss, mut g) = mse_loss(trace.output(), &encode_target(s.label))?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: b,
                        layer: trace.first_non_finite().unwrap_or_else(|| "loss".into()),
                    });
                }
                loss_sum += loss;
                if predict_label(trace.output()) != s.label {
                    errors += 1;
                }
                g.iter_mut().for_each(|v| *v *= scale);
                net.backward(&trace, &g, &mut grads)?;
            }
            if let Some(buf) = grads.buffers.iter().position(|b| b.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    layer: net.param_names()[buf].clone(),
                });
            }
            adam_step(&mut net.param_buffers_mut(), &grads.buffers, &mut adam, cfg.learning_rate, &cfg.adam)?;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            train_error: errors as f64 / order.len() as f64,
        };
        log::info!(
            "epoch {:>2}: loss {:.5} train error {:.4}",
            record.epoch,
            record.mean_loss,
            record.train_error
        );
        history.epochs.push(record);
        if record.train_error <= cfg.min_train_error {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        adam,
        converged,
    })
}

/// Per-sample scores and predicted labels.
pub fn predict(net: &Network, data: &[Sample], indices: &[usize]) -> Result<Vec<(Vec<f64>, Label)>> {
    indices
        .iter()
        .map(|&i| {
            let scores = net.forward(&data[i].image)?;
            let label = predict_label(&scores);
            Ok((scores, label))
        })
        .collect()
}
