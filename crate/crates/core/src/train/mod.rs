//! Losses, Adam, learning-rate schedules and the epoch loop.

mod adam;
mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use loss::{batch_loss, evaluate, loss_and_grad, metric_value, LossKind, Metric};

use crate::datagen::SequenceBatch;
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::net::DeepModel;

/// Smallest validation improvement that resets the plateau counter.
pub const PLATEAU_MIN_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `factor` once the validation loss has failed to
    /// beat its best value by `1e-6` for `patience` consecutive epochs.
    ReduceOnPlateau {
        factor: f64,
        patience: usize,
    },
    /// Multiply the rate by `factor` every `every` iterations.
    StepDecay {
        factor: f64,
        every: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stops mid-epoch once this many updates have been made.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub schedule: Schedule,
    pub loss: LossKind,
    /// Training stops instead of lowering the rate below this.
    pub min_lr: f64,
    /// Maximum global gradient norm.
    pub gradient_clip: Option<f64>,
    /// Tensor name prefixes that are never updated.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 10,
            max_iterations: None,
            seed: 0,
            schedule: Schedule::ReduceOnPlateau {
                factor: 0.5,
                patience: 3,
            },
            loss: LossKind::Mse,
            min_lr: 1e-6,
            gradient_clip: None,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.min_lr >= 0.0) {
            return bad(format!("min_lr must be >= 0, got {}", self.min_lr));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return bad(format!("gradient_clip must be positive, got {c}"));
            }
        }
        match self.schedule {
            Schedule::Constant => {}
            Schedule::ReduceOnPlateau { factor, patience } => {
                if !(factor > 0.0 && factor < 1.0) || patience == 0 {
                    return bad(format!(
                        "plateau schedule needs 0 < factor < 1 and patience >= 1, got {factor}, {patience}"
                    ));
                }
            }
            Schedule::StepDecay { factor, every } => {
                if !(factor > 0.0 && factor < 1.0) || every == 0 {
                    return bad(format!(
                        "step decay needs 0 < factor < 1 and every >= 1, got {factor}, {every}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One record per epoch; epoch 0 describes the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epoch: usize,
    /// Full-set loss for epoch 0, mean mini-batch loss afterwards.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate in force after this epoch's schedule update.
    pub lr: f64,
    pub extra: BTreeMap<String, f64>,
}

impl Metrics {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn write_metrics_jsonl(path: &Path, metrics: &[Metrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in metrics {
        writeln!(f, "{}", m.to_json_line()?)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxIterations,
    MinLr,
    /// The epoch callback asked to stop.
    Requested,
}

/// Returned by an epoch callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DeepModel,
    pub metrics: Vec<Metrics>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Called after each epoch's metrics are computed (including epoch 0);
/// may add entries to `extra`, record snapshots or end training.
pub type EpochCallback<'a> = dyn FnMut(&DeepModel, &mut Metrics) -> Result<Control> + 'a;

/// Mini-batch Adam training. Epoch `e` visits the training set in the
/// order `Rng::new(seed).fork(e).permutation(n)`.
pub fn train(
    model: DeepModel,
    train_set: &SequenceBatch,
    val_set: &SequenceBatch,
    config: &TrainConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = model;
    let mut adam = AdamState::new(model.num_params());
    let mut lr = config.learning_rate;
    let base_rng = Rng::new(config.seed);

    let first_val = finite_or_diverged(batch_loss(&model, val_set, config.loss)?, 0, 0)?;
    let mut m0 = Metrics {
        epoch: 0,
        train_loss: finite_or_diverged(batch_loss(&model, train_set, config.loss)?, 0, 0)?,
        val_loss: first_val,
        lr,
        extra: BTreeMap::new(),
    };
    let first = on_epoch(&model, &mut m0)?;
    let mut metrics = vec![m0];
    if first == Control::Stop {
        return Ok(TrainOutcome {
            model,
            metrics,
            iterations: 0,
            stop: StopReason::Requested,
        });
    }

    let mut best_val = first_val;
    let mut stale = 0usize;
    let mut iterations = 0usize;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=config.max_epochs {
        let order = base_rng.fork(epoch as u64).permutation(train_set.n());
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut halt = None;
        for idx in order.chunks(config.batch_size) {
            if config.max_iterations.is_some_and(|m| iterations >= m) {
                halt = Some(StopReason::MaxIterations);
                break;
            }
            let batch = train_set.subset(idx)?;
            let (y, cache) = model.forward(&batch)?;
            let (loss, dy) = loss_and_grad(config.loss, &y, batch.targets())?;
            finite_or_diverged(loss, epoch, epoch - 1)?;
            let mut grads = model.backward(&cache, &dy)?;
            grads.zero_frozen(&config.frozen);
            if let Some(max) = config.gradient_clip {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.step_model(&mut model, &grads, lr)?;
            iterations += 1;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
            if let Schedule::StepDecay { factor, every } = config.schedule {
                if iterations % every == 0 {
                    if lr * factor < config.min_lr {
                        halt = Some(StopReason::MinLr);
                        break;
                    }
                    lr *= factor;
                }
            }
        }
        if seen == 0 {
            // The iteration budget ran out exactly at an epoch boundary.
            stop = StopReason::MaxIterations;
            break 'epochs;
        }
        let val = finite_or_diverged(batch_loss(&model, val_set, config.loss)?, epoch, epoch - 1)?;
        if let Schedule::ReduceOnPlateau { factor, patience } = config.schedule {
            if val < best_val - PLATEAU_MIN_DELTA {
                best_val = val;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    stale = 0;
                    if lr * factor < config.min_lr {
                        halt.get_or_insert(StopReason::MinLr);
                    } else {
                        lr *= factor;
                    }
                }
            }
        }
        let mut m = Metrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: val,
            lr,
            extra: BTreeMap::new(),
        };
        let control = on_epoch(&model, &mut m)?;
        metrics.push(m);
        if control == Control::Stop {
            stop = StopReason::Requested;
            break;
        }
        if let Some(reason) = halt {
            stop = reason;
            break;
        }
        if config.max_iterations.is_some_and(|m| iterations >= m) {
            stop = StopReason::MaxIterations;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        metrics,
        iterations,
        stop,
    })
}

fn finite_or_diverged(loss: f64, epoch: usize, last_good_epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Diverged { epoch, last_good_epoch })
    }
}
