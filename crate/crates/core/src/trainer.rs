//! Deterministic SGD training loop.
//!
//! One epoch = a seeded shuffle of the training set cut into batches,
//! each stepped with SGD. Weight decay applies to convolution and
//! classifier weights and the normalization affine parameters; biases
//! are exempt. Activation parameters follow their own plain update rule
//! (no momentum, no decay, ordering projection) and stay frozen for the
//! first `freeze_epochs` epochs. With the same seed and configuration,
//! two runs produce bitwise-identical parameter trajectories.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::kernels::{softmax_xent, Mode};
use crate::layers::Activation;
use crate::net::{BackwardOptions, GcNet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Activation parameters do not move during the first this-many
    /// epochs, letting the surrounding weights settle first.
    pub freeze_epochs: usize,
    pub weight_decay: f64,
    /// Momentum coefficient for the non-activation parameters; `None`
    /// for plain SGD.
    pub momentum: Option<f64>,
    /// Epochs at whose start the learning rate is multiplied by
    /// `lr_drop_factor` (each milestone applies once, cumulatively).
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Test-set evaluation runs every this-many epochs (and always on
    /// the final epoch).
    pub eval_every: usize,
    /// Zeroes the wall-clock column in the metrics so that identical
    /// runs produce identical files.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 50,
            batch_size: 64,
            freeze_epochs: 3,
            weight_decay: 5e-4,
            momentum: None,
            lr_drop_epochs: vec![30, 40],
            lr_drop_factor: 0.1,
            seed: 0,
            eval_every: 1,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} is not usable", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate drop factor must be in (0, 1], got {}",
                self.lr_drop_factor
            )));
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!(
                    "momentum must be in [0, 1), got {m}"
                )));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".to_string()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay {} is not usable",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// Learning rate in force at a given epoch, after milestone drops.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_drop_factor.powi(drops as i32)
    }
}

/// Ascending-order snapshot of one activation parameter set.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ActSnapshot {
    pub block: usize,
    pub unit: usize,
    pub endpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

/// Everything recorded about one epoch.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_err: f64,
    pub test_err: Option<f64>,
    pub seconds: f64,
    pub activations: Vec<ActSnapshot>,
}

/// Current activation parameters of every learnable-activation block.
pub fn act_snapshots(net: &GcNet) -> Vec<ActSnapshot> {
    let mut out = Vec::new();
    for (i, block) in net.blocks.iter().enumerate() {
        if let Activation::GRelu(layer) = &block.act {
            for (u, unit) in layer.units().iter().enumerate() {
                out.push(ActSnapshot {
                    block: i + 1,
                    unit: u,
                    endpoints: unit.ascending_endpoints(),
                    slopes: unit.ascending_slopes(),
                });
            }
        }
    }
    out
}

/// One SGD step on a flat parameter vector. Coordinates with
/// `update[j] == false` are left untouched (and their velocity stays
/// zero); `decay[j]` selects which coordinates feel weight decay.
#[allow(clippy::too_many_arguments)] // a flat step genuinely has this many knobs
pub fn sgd_step(
    theta: &mut [f64],
    grad: &[f64],
    update: &[bool],
    decay: &[bool],
    velocity: &mut [f64],
    lr: f64,
    weight_decay: f64,
    momentum: Option<f64>,
) -> Result<()> {
    let len = theta.len();
    if grad.len() != len || update.len() != len || decay.len() != len || velocity.len() != len {
        return Err(Error::Dimension(format!(
            "flat step length mismatch: theta {len}, grad {}, update {}, decay {}, velocity {}",
            grad.len(),
            update.len(),
            decay.len(),
            velocity.len()
        )));
    }
    for j in 0..len {
        if !update[j] {
            continue;
        }
        let mut g = grad[j];
        if decay[j] {
            g += weight_decay * theta[j];
        }
        let step = match momentum {
            Some(mu) => {
                velocity[j] = mu * velocity[j] + g;
                velocity[j]
            }
            None => g,
        };
        theta[j] -= lr * step;
    }
    Ok(())
}

/// Index of the largest value; the first maximum wins on ties.
fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn error_count(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let (n, s) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} logit rows for {} labels",
            labels.len()
        )));
    }
    let mut wrong = 0;
    for (i, &label) in labels.iter().enumerate() {
        if argmax_row(&logits.data()[i * s..(i + 1) * s]) != label {
            wrong += 1;
        }
    }
    Ok(wrong)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub error_rate: f64,
}

/// Evaluation-mode loss and error rate over a dataset, in fixed batch
/// order (no shuffling; running statistics are used, so batch size does
/// not affect the result).
pub fn evaluate(net: &mut GcNet, ds: &Dataset, batch_size: usize) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".to_string()));
    }
    let n = ds.len();
    let size = batch_size.max(1);
    let mut loss_sum = 0.0;
    let mut wrong = 0;
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(size) {
        let (images, labels) = ds.gather(chunk)?;
        let (logits, _) = net.forward(&images, Mode::Eval)?;
        let out = softmax_xent(&logits, &labels)?;
        loss_sum += out.loss * chunk.len() as f64;
        wrong += error_count(&logits, &labels)?;
    }
    Ok(EvalResult {
        loss: loss_sum / n as f64,
        error_rate: wrong as f64 / n as f64,
    })
}

/// Trains in place, returning one record per epoch. `on_epoch` runs
/// after each epoch with the freshly updated network (for checkpointing
/// or logging).
pub fn train_with<F>(
    net: &mut GcNet,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&GcNet, &EpochRecord) -> Result<()>,
{
    cfg.validate()?;
    if let Some(&bad) = train.labels.iter().find(|&&l| l >= net.class_count) {
        return Err(Error::Data(format!(
            "training label {bad} out of range for {} classes",
            net.class_count
        )));
    }

    let layout = net.param_layout();
    let update_mask: Vec<bool> = layout
        .iter()
        .flat_map(|s| std::iter::repeat_n(!s.kind.is_activation(), s.len))
        .collect();
    let decay_mask: Vec<bool> = layout
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.kind.decays(), s.len))
        .collect();
    let mut velocity = vec![0.0; update_mask.len()];

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let act_learning = epoch >= cfg.freeze_epochs;
        let opts = BackwardOptions {
            accumulate_act: act_learning,
            cascade_scale: 1.0,
        };

        let mut loss_sum = 0.0;
        let mut wrong = 0usize;
        for batch in batches(train.len(), cfg.batch_size, cfg.seed, epoch)? {
            let (images, labels) = train.gather(&batch)?;
            let (logits, cache) = net.forward(&images, Mode::Train)?;
            let out = softmax_xent(&logits, &labels)?;
            if !out.loss.is_finite() {
                let place = cache
                    .first_non_finite()
                    .unwrap_or_else(|| "logits".to_string());
                return Err(Error::Numeric(format!(
                    "training loss became non-finite at epoch {epoch}; first non-finite layer: {place}"
                )));
            }
            loss_sum += out.loss * batch.len() as f64;
            wrong += error_count(&logits, &labels)?;

            let grads = net.backward(&cache, &out.logit_grad, &opts)?;
            let mut theta = net.flatten_params();
            let flat_grads = net.flatten_grads(&grads)?;
            sgd_step(
                &mut theta,
                &flat_grads,
                &update_mask,
                &decay_mask,
                &mut velocity,
                lr,
                cfg.weight_decay,
                cfg.momentum,
            )?;
            net.load_flat_params(&theta)?;
            if act_learning {
                net.apply_act_updates(&grads, lr)?;
            }
        }

        let run_eval = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let test_err = match (test, run_eval) {
            (Some(ds), true) => Some(evaluate(net, ds, cfg.batch_size)?.error_rate),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_err: wrong as f64 / train.len() as f64,
            test_err,
            seconds: if cfg.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
            activations: act_snapshots(net),
        };
        on_epoch(net, &record)?;
        records.push(record);
    }
    Ok(records)
}

pub fn train(
    net: &mut GcNet,
    train_set: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    train_with(net, train_set, test, cfg, |_, _| Ok(()))
}

/// Fixed-schema metrics table: epoch,train_loss,train_err,test_err,seconds.
/// A skipped evaluation leaves the test_err field empty.
pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_err,test_err,seconds\n");
    for r in records {
        let test = r.test_err.map_or(String::new(), |v| format!("{v}"));
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_err, test, r.seconds
        ));
    }
    s
}

pub fn write_metrics_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, metrics_csv(records))?;
    Ok(())
}

/// One JSON object per line, carrying the full record including the
/// activation snapshots.
pub fn metrics_jsonl(records: &[EpochRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Format(format!("metrics: {e}")))?,
        );
        s.push('\n');
    }
    Ok(s)
}

pub fn write_metrics_jsonl(path: &Path, records: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, metrics_jsonl(records)?)?;
    Ok(())
}

/// Reads back a metrics JSONL file.
pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("metrics line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
