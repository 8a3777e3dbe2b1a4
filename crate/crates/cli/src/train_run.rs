//! Train a model on the adding problem or on windows of a CSV series.

use std::path::Path;

use anyhow::{Context, Result};
use pararnn::datagen::{gen_adding_problem, load_csv_series, SequenceBatch};
use pararnn::linalg::Rng;
use pararnn::net::{checkpoint, init_params};
use pararnn::train::{evaluate, train, write_metrics_jsonl, Control, Metric, Metrics, StopReason};
use serde::Serialize;

use crate::config::{prepare_out, write_json, Task, TrainRunConfig};
use crate::Outcome;

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub test_mse: f64,
    /// Variance of the test targets, the MSE of the best constant.
    pub test_target_variance: f64,
    pub iterations: usize,
    pub epochs: usize,
    pub stop: StopReason,
    pub target_test_mse: Option<f64>,
    /// Iterations done when the target was first reached.
    pub iterations_to_target: Option<usize>,
    pub passed: bool,
}

fn scaled_count(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// Train, validation and test sets for the task.
pub fn datasets(task: &Task, scale: f64, rng: &Rng) -> Result<(SequenceBatch, SequenceBatch, SequenceBatch)> {
    match task {
        Task::Adding {
            t,
            n_train,
            n_val,
            n_test,
        } => Ok((
            gen_adding_problem(scaled_count(*n_train, scale), *t, &rng.fork(0))?,
            gen_adding_problem(scaled_count(*n_val, scale), *t, &rng.fork(1))?,
            gen_adding_problem(scaled_count(*n_test, scale), *t, &rng.fork(2))?,
        )),
        Task::Csv {
            path,
            target,
            window,
            horizon,
            split,
        } => {
            let all = load_csv_series(path, target, *window, *horizon)
                .with_context(|| format!("loading series from {}", path.display()))?;
            Ok(all.split_fractions(split.0, split.1)?)
        }
    }
}

fn target_variance(b: &SequenceBatch) -> f64 {
    let z = b.targets();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64
}

pub fn run(cfg: &TrainRunConfig, out: &Path) -> Result<(Outcome, TrainSummary, Vec<Metrics>)> {
    let rng = Rng::new(cfg.seed);
    let mut resolved = cfg.clone();
    resolved.train.seed = cfg.seed;
    prepare_out(out, &resolved)?;

    let (train_set, val_set, test_set) = datasets(&cfg.task, cfg.scale, &rng)?;
    let arch = cfg.model.architecture(train_set.d_in(), train_set.d_out());
    let model = init_params(&arch, &cfg.init, &mut rng.fork(3))?;

    let target = cfg.target_test_mse;
    let mut reached = None;
    let mut iterations = 0usize;
    let per_epoch = train_set.n().div_ceil(resolved.train.batch_size.max(1));
    let mut on_epoch = |m: &pararnn::net::DeepModel, rec: &mut Metrics| {
        let mse = evaluate(m, &test_set, Metric::Mse)?;
        iterations = (rec.epoch * per_epoch).min(resolved.train.max_iterations.unwrap_or(usize::MAX));
        rec.extra.insert("test_mse".into(), mse);
        rec.extra.insert("iterations".into(), iterations as f64);
        match target {
            Some(t) if mse < t => {
                reached.get_or_insert(iterations);
                Ok(Control::Stop)
            }
            _ => Ok(Control::Continue),
        }
    };
    let outcome = train(model, &train_set, &val_set, &resolved.train, &mut on_epoch)?;
    let test_mse = evaluate(&outcome.model, &test_set, Metric::Mse)?;

    write_metrics_jsonl(&out.join("metrics.jsonl"), &outcome.metrics)?;
    checkpoint::save(&outcome.model, &out.join("checkpoint.model"))?;
    let passed = match target {
        Some(_) => reached.is_some(),
        None => test_mse.is_finite(),
    };
    let summary = TrainSummary {
        test_mse,
        test_target_variance: target_variance(&test_set),
        iterations: outcome.iterations,
        epochs: outcome.metrics.len() - 1,
        stop: outcome.stop,
        target_test_mse: target,
        iterations_to_target: reached,
        passed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let text = format!(
        "test MSE {:.6} (target variance {:.6}) after {} iterations, stop: {:?}{}",
        summary.test_mse,
        summary.test_target_variance,
        summary.iterations,
        summary.stop,
        match (target, reached) {
            (Some(t), Some(i)) => format!("; below {t} at iteration {i}"),
            (Some(t), None) => format!("; never below {t}"),
            _ => String::new(),
        }
    );
    Ok((Outcome { passed, summary: text }, summary, outcome.metrics))
}
