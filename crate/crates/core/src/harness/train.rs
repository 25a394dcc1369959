//! Mini-batch Adam training with validation-driven early stopping.


use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::model::Model;
use crate::corpus::{batch_indices, EncodedSample};
use crate::error::{Error, Result};
use crate::numerics::adam_step;

/// Wall-clock seconds; always 0 on wasm32, which has no std clock.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Self(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch training losses.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_r_at_1: f64,
    pub valid_r_at_2: f64,
    pub valid_r_at_5: f64,
    pub improved: bool,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    /// Every batch loss, in order.
    pub batch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_valid_r_at_1: f64,
    pub stopped_early: bool,
}

/// Extra knobs beyond the config.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Stop as soon as validation R@1 reaches this value.
    pub target_r_at_1: Option<f64>,
}

pub fn evaluate_samples(model: &Model, split: &str, samples: &[EncodedSample]) -> Result<MetricsReport> {
    evaluate_report(model, split, samples, false)
}

/// Metrics of `samples`; with `buckets`, also per context-length bucket of
/// the model's dataset.
pub fn evaluate_report(model: &Model, split: &str, samples: &[EncodedSample], buckets: bool) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidData(format!("split {split} has no samples")));
    }
    let start = Stopwatch::start();
    let logits = model.predict(samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let counts: Vec<usize> = samples.iter().map(|s| s.context.real_rows()).collect();
    let b = buckets.then_some((model.config.dataset, counts.as_slice()));
    let mut r = MetricsReport::from_logits(split, &logits, &labels, b)?;
    r.ablation = model.config.ablation.active().iter().map(|s| s.to_string()).collect();
    r.config_hash = model.config.hash();
    r.wall_time_secs = start.secs();
    Ok(r)
}

/// Train in place. On return `model` holds the parameters of the best
/// validation epoch.
pub fn train(
    model: &mut Model,
    train_set: &[EncodedSample],
    valid_set: &[EncodedSample],
    opts: TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::InvalidData("training and validation sets must be non-empty".into()));
    }
    let cfg = model.config.clone();
    let hyper = cfg.adam();
    let mut history = History {
        config_hash: cfg.hash(),
        epochs: Vec::new(),
        batch_losses: Vec::new(),
        best_epoch: 0,
        best_valid_r_at_1: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best = model.store.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Stopwatch::start();
        let order = batch_indices(train_set.len(), cfg.batch_size, cfg.seed.wrapping_add(epoch as u64));
        let mut sum = 0.0;
        for (step, idx) in order.iter().enumerate() {
            let batch: Vec<&EncodedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let diverged = |value| Error::DivergedLoss {
                epoch,
                step: step + 1,
                value,
            };
            let (loss, grads, _) = match model.batch_gradients(&batch) {
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                r => r?,
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(loss));
            }
            adam_step(&mut model.store, &grads, &hyper)?;
            history.batch_losses.push(loss);
            sum += loss;
        }
        let valid = evaluate_samples(model, "valid", valid_set)?;
        let improved = valid.r_at_1 > history.best_valid_r_at_1;
        if improved {
            history.best_epoch = epoch;
            history.best_valid_r_at_1 = valid.r_at_1;
            best = model.store.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / order.len() as f64,
            valid_loss: valid.mean_loss,
            valid_r_at_1: valid.r_at_1,
            valid_r_at_2: valid.r_at_2,
            valid_r_at_5: valid.r_at_5,
            improved,
            wall_time_secs: start.secs(),
        };
        on_epoch(&rec);
        history.epochs.push(rec);
        if opts.target_r_at_1.is_some_and(|t| valid.r_at_1 >= t) {
            break;
        }
        if stale >= cfg.patience.max(1) {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.store = best;
    Ok(history)
}
