use serde::{Deserialize, Serialize};

use crate::datagen::SequenceBatch;
use crate::error::{mismatch, Error, Result};
use crate::net::DeepModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean of squared errors over every output entry.
    Mse,
    /// Mean softmax cross-entropy; outputs are logits, targets class indices.
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Accuracy,
}

fn class_index(z: f64, classes: usize) -> Result<usize> {
    if z < 0.0 || z.fract() != 0.0 || z as usize >= classes {
        return Err(Error::InvalidArgument(format!(
            "target {z} is not a class index below {classes}"
        )));
    }
    Ok(z as usize)
}

fn classes(outputs: &[f64], targets: &[f64]) -> Result<usize> {
    if targets.is_empty() || outputs.len() % targets.len() != 0 {
        return Err(mismatch("cross-entropy logits", targets.len(), outputs.len()));
    }
    Ok(outputs.len() / targets.len())
}

/// Loss value and its gradient with respect to `outputs`.
pub fn loss_and_grad(kind: LossKind, outputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    match kind {
        LossKind::Mse => {
            if outputs.len() != targets.len() {
                return Err(mismatch("MSE outputs", targets.len(), outputs.len()));
            }
            let n = outputs.len() as f64;
            let mut loss = 0.0;
            let grad = outputs
                .iter()
                .zip(targets)
                .map(|(y, z)| {
                    let e = y - z;
                    loss += e * e;
                    2.0 * e / n
                })
                .collect();
            Ok((loss / n, grad))
        }
        LossKind::CrossEntropy => {
            let c = classes(outputs, targets)?;
            let n = targets.len() as f64;
            let mut loss = 0.0;
            let mut grad = vec![0.0; outputs.len()];
            for (p, &z) in targets.iter().enumerate() {
                let k = class_index(z, c)?;
                let logits = &outputs[p * c..(p + 1) * c];
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let log_z = max + sum.ln();
                loss += log_z - logits[k];
                for (j, g) in grad[p * c..(p + 1) * c].iter_mut().enumerate() {
                    *g = ((logits[j] - log_z).exp() - f64::from(u8::from(j == k))) / n;
                }
            }
            Ok((loss / n, grad))
        }
    }
}

/// Loss of `model` on `batch`.
pub fn batch_loss(model: &DeepModel, batch: &SequenceBatch, kind: LossKind) -> Result<f64> {
    let y = model.predict(batch)?;
    Ok(loss_and_grad(kind, &y, batch.targets())?.0)
}

/// Mean squared error, or argmax accuracy with class-index targets.
pub fn metric_value(metric: Metric, outputs: &[f64], targets: &[f64]) -> Result<f64> {
    match metric {
        Metric::Mse => Ok(loss_and_grad(LossKind::Mse, outputs, targets)?.0),
        Metric::Accuracy => {
            let c = classes(outputs, targets)?;
            let mut hits = 0usize;
            for (p, &z) in targets.iter().enumerate() {
                let k = class_index(z, c)?;
                let row = &outputs[p * c..(p + 1) * c];
                // First maximal logit wins ties.
                let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                hits += usize::from(best == k);
            }
            Ok(hits as f64 / targets.len() as f64)
        }
    }
}

pub fn evaluate(model: &DeepModel, batch: &SequenceBatch, metric: Metric) -> Result<f64> {
    metric_value(metric, &model.predict(batch)?, batch.targets())
}
