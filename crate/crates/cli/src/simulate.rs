//! Generate data from a recurrent DGP, fit a one-layer model and follow
//! its recurrent matrix across epochs.

use std::path::Path;

use anyhow::Result;
use pararnn::datagen::{gen_rnn_dgp, DgpSpec};
use pararnn::features::{
    classify_block_diagonal, classify_features, snapshot_histogram, FeatureHistogram, FeatureReport,
};
use pararnn::linalg::{Mat, Rng};
use pararnn::net::{
    checkpoint, init_params, Activation, AggregatorSpec, Architecture, CellKind, DeepModel, OutputMode,
};
use pararnn::train::{evaluate, train, write_metrics_jsonl, Control, Metric, Metrics, StopReason};
use serde::Serialize;

use crate::config::{prepare_out, write_json, SimulateConfig};
use crate::Outcome;

#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub report: FeatureReport,
    pub histogram: FeatureHistogram,
}

#[derive(Clone, Debug, Serialize)]
pub struct FeaturesFile {
    pub ground_truth: FeatureReport,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub test_mse: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// `‖W_h − W_h*‖_F` per epoch, starting at epoch 0.
    pub wh_distance: Vec<f64>,
    pub initial_order_one_fraction: f64,
    pub final_order_one_fraction: f64,
    pub final_counts: std::collections::BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct SimulateResult {
    pub metrics: Vec<Metrics>,
    pub features: FeaturesFile,
    pub summary: SimulateSummary,
    pub model: DeepModel,
}

/// Data spec after the preset, explicit override and scale are applied.
pub fn resolve_data(cfg: &SimulateConfig) -> Result<DgpSpec> {
    let spec = match &cfg.data {
        Some(d) => d.clone(),
        None => DgpSpec::preset(&cfg.preset)?,
    };
    Ok(if cfg.scale == 1.0 {
        spec
    } else {
        spec.scaled(cfg.scale)?
    })
}

/// One tanh layer over the data dimension. A readout in the DGP is matched
/// by a feed-forward aggregator; otherwise the states are the outputs.
pub fn architecture(spec: &DgpSpec, block_size: Option<usize>) -> Architecture {
    Architecture {
        cell: CellKind::Rnn,
        d_in: spec.d_in,
        hidden: spec.d,
        block_size: block_size.unwrap_or(spec.d),
        layers: 1,
        activation: Activation::Tanh,
        aggregator: match &spec.readout {
            Some(r) => AggregatorSpec::FeedForward {
                inner: spec.d,
                out: r.d_out,
            },
            None => AggregatorSpec::Identity,
        },
        head: None,
        input_projection: false,
        mode: OutputMode::SeqToOne,
    }
}

fn recurrent_dense(model: &DeepModel) -> Mat {
    model.layers[0].recurrent_matrices()[0].1.to_dense()
}

/// Runs the experiment and writes its artifacts into `out`.
pub fn run(cfg: &SimulateConfig, out: &Path) -> Result<(Outcome, SimulateResult)> {
    let spec = resolve_data(cfg)?;
    let rng = Rng::new(cfg.seed);
    let mut resolved = cfg.clone();
    resolved.data = Some(spec.clone());
    resolved.scale = 1.0;
    resolved.train.seed = rng.fork(2).seed();
    prepare_out(out, &resolved)?;

    let (data, truth) = gen_rnn_dgp(&spec, &rng.fork(0))?;
    let (train_set, val_set, test_set) = data.split_fractions(cfg.split.0, cfg.split.1)?;
    let arch = architecture(&spec, cfg.block_size);
    let model = init_params(&arch, &cfg.init, &mut rng.fork(1))?;

    let truth_report = classify_features(&truth.w_h, cfg.classify)?;
    let mut reports = Vec::new();
    let mut epochs = Vec::new();
    let mut distance = Vec::new();
    let opts = cfg.classify;
    let mut on_epoch = |m: &DeepModel, rec: &mut Metrics| {
        let w = &m.layers[0].recurrent_matrices()[0].1;
        let report = classify_block_diagonal(w, opts)?;
        let dist = recurrent_dense(m).sub(&truth.w_h)?.frobenius_norm();
        rec.extra.insert("wh_distance".into(), dist);
        rec.extra
            .insert("order_one_fraction".into(), report.order_one_fraction());
        rec.extra.insert("real_fraction".into(), report.real_fraction());
        rec.extra.insert("features".into(), report.features.len() as f64);
        rec.extra.insert("nullity".into(), report.nullity as f64);
        distance.push(dist);
        epochs.push(rec.epoch);
        reports.push(report);
        Ok(Control::Continue)
    };
    let outcome = train(model, &train_set, &val_set, &resolved.train, &mut on_epoch)?;
    let test_mse = evaluate(&outcome.model, &test_set, Metric::Mse)?;

    let histograms = snapshot_histogram(&reports)?;
    let snapshots: Vec<Snapshot> = reports
        .into_iter()
        .zip(histograms)
        .zip(&epochs)
        .map(|((report, mut histogram), &epoch)| {
            histogram.snapshot_index = epoch;
            Snapshot {
                epoch,
                report,
                histogram,
            }
        })
        .collect();
    let first = &snapshots[0];
    let last = snapshots.last().expect("epoch 0 is always recorded");
    let summary = SimulateSummary {
        test_mse,
        iterations: outcome.iterations,
        stop: outcome.stop,
        wh_distance: distance,
        initial_order_one_fraction: first.report.order_one_fraction(),
        final_order_one_fraction: last.report.order_one_fraction(),
        final_counts: last.histogram.counts.clone(),
    };
    let features = FeaturesFile {
        ground_truth: truth_report,
        snapshots,
    };

    write_metrics_jsonl(&out.join("metrics.jsonl"), &outcome.metrics)?;
    write_json(&out.join("features.json"), &features)?;
    write_json(&out.join("summary.json"), &summary)?;
    checkpoint::save(&outcome.model, &out.join("checkpoint.model"))?;

    let text = format!(
        "test MSE {:.6}; ||W_h - W_h*||_F {:.4} -> {:.4}; order-1 share {:.3} -> {:.3}; final types {:?}",
        summary.test_mse,
        summary.wh_distance[0],
        summary.wh_distance.last().copied().unwrap_or(f64::NAN),
        summary.initial_order_one_fraction,
        summary.final_order_one_fraction,
        summary.final_counts,
    );
    Ok((
        Outcome {
            passed: true,
            summary: text,
        },
        SimulateResult {
            metrics: outcome.metrics,
            features,
            summary,
            model: outcome.model,
        },
    ))
}
