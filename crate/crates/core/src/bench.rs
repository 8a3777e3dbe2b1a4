//! Wall-clock timing of one recurrent layer across block sizes, and the
//! test-error sweep over block sizes on generated data.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_rnn_dgp, DgpSpec, SequenceBatch, TargetLayout};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Rng};
use crate::net::{init_params, Activation, AggregatorSpec, Architecture, CellKind, DeepModel, InitScheme, OutputMode};
use crate::train::{evaluate, train, Control, Metric, TrainConfig};

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Plain mean and sample std (0 for a single value).
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }

    /// Median of the means of up to five contiguous groups, with the
    /// sample std of all values.
    pub fn median_of_means(xs: &[f64]) -> Stat {
        let groups = xs.len().min(5);
        let mut means: Vec<f64> = (0..groups)
            .map(|g| {
                let lo = g * xs.len() / groups;
                let hi = (g + 1) * xs.len() / groups;
                xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        means.sort_by(f64::total_cmp);
        let mid = means.len() / 2;
        let center = if means.len() % 2 == 1 {
            means[mid]
        } else {
            0.5 * (means[mid - 1] + means[mid])
        };
        Stat {
            mean: center,
            std: Stat::of(xs).std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub d: usize,
    pub d_s: usize,
    pub k: usize,
    pub t: usize,
    pub reps: usize,
    pub forward_ms: Option<Stat>,
    pub backward_ms: Option<Stat>,
    pub test_mse: Option<Stat>,
    /// Logical cores visible to the process.
    pub cores: usize,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub d: usize,
    pub t: usize,
    pub d_in: usize,
    /// Sequences per timed pass.
    pub batch: usize,
    pub reps: usize,
    pub warmup: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            d: 128,
            t: 128,
            d_in: 1,
            batch: 16,
            reps: 500,
            warmup: 5,
        }
    }
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn timing_batch(cfg: &TimingConfig, rng: &mut Rng) -> Result<SequenceBatch> {
    let x = rng.gaussian_vec(0.0, 1.0, cfg.batch * cfg.t * cfg.d_in)?;
    SequenceBatch::new(
        cfg.batch,
        cfg.t,
        cfg.d_in,
        1,
        x,
        vec![0.0; cfg.batch],
        TargetLayout::Last,
    )
}

fn validate_timing(cfg: &TimingConfig, d_s: usize) -> Result<()> {
    if d_s == 0 || cfg.d % d_s != 0 {
        return Err(Error::InvalidArgument(format!(
            "block size {d_s} must divide d = {}",
            cfg.d
        )));
    }
    if cfg.reps == 0 || cfg.batch == 0 || cfg.t == 0 || cfg.d_in == 0 {
        return Err(Error::InvalidArgument(
            "reps, batch, t and d_in must be positive".into(),
        ));
    }
    Ok(())
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Dense vanilla tanh layer with no block structure, used as the timing
/// reference for a single full block.
#[derive(Clone, Debug)]
pub struct DenseRnn {
    pub w_h: Mat,
    pub w_x: Mat,
    pub b: Vec<f64>,
}

/// Pre-activations and states of one sequence, `t * d` each.
pub struct DenseTrace {
    pre: Vec<f64>,
    h: Vec<f64>,
}

/// Gradients of [`DenseRnn`] parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub w_h: Mat,
    pub w_x: Mat,
    pub b: Vec<f64>,
}

impl DenseRnn {
    pub fn random(d: usize, d_in: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w_h: Mat::new(d, d, rng.uniform_vec(-bound, bound, d * d)?)?,
            w_x: Mat::new(d, d_in, rng.uniform_vec(-bound, bound, d * d_in)?)?,
            b: rng.uniform_vec(-bound, bound, d)?,
        })
    }

    fn forward_one(&self, xs: &[f64]) -> DenseTrace {
        let d = self.w_h.rows();
        let d_in = self.w_x.cols();
        let t = xs.len() / d_in;
        let mut pre = vec![0.0; t * d];
        let mut h = vec![0.0; t * d];
        for s in 0..t {
            let p = &mut pre[s * d..(s + 1) * d];
            p.copy_from_slice(&self.b);
            self.w_x.matvec_add_into(&xs[s * d_in..(s + 1) * d_in], p);
            let (done, rest) = h.split_at_mut(s * d);
            if s > 0 {
                self.w_h.matvec_add_into(&done[(s - 1) * d..], p);
            }
            for (hv, &a) in rest[..d].iter_mut().zip(p.iter()) {
                *hv = Activation::Tanh.apply(a);
            }
        }
        DenseTrace { pre, h }
    }

    fn backward_one(&self, xs: &[f64], tr: &DenseTrace, dh: &[f64], g: &mut DenseGrads) {
        let d = self.w_h.rows();
        let d_in = self.w_x.cols();
        let t = xs.len() / d_in;
        let mut carry = vec![0.0; d];
        let mut da = vec![0.0; d];
        for s in (0..t).rev() {
            let row = s * d..(s + 1) * d;
            for ((((o, &a), &hv), &up), &c) in da
                .iter_mut()
                .zip(&tr.pre[row.clone()])
                .zip(&tr.h[row.clone()])
                .zip(&dh[row])
                .zip(&carry)
            {
                *o = (up + c) * Activation::Tanh.derivative(a, hv);
            }
            for (gb, v) in g.b.iter_mut().zip(&da) {
                *gb += v;
            }
            g.w_x.add_outer(1.0, &da, &xs[s * d_in..(s + 1) * d_in]);
            carry.iter_mut().for_each(|c| *c = 0.0);
            if s > 0 {
                g.w_h.add_outer(1.0, &da, &tr.h[(s - 1) * d..s * d]);
                self.w_h.matvec_t_add_into(&da, &mut carry);
            }
        }
    }

    /// States `[sample][step][unit]` and the per-sequence traces.
    pub fn forward(&self, batch: &SequenceBatch) -> (Vec<f64>, Vec<DenseTrace>) {
        let traces: Vec<DenseTrace> = (0..batch.n())
            .into_par_iter()
            .map(|i| self.forward_one(batch.input(i)))
            .collect();
        let mut states = Vec::with_capacity(batch.n() * batch.t() * self.w_h.rows());
        for tr in &traces {
            states.extend_from_slice(&tr.h);
        }
        (states, traces)
    }

    /// Parameter gradients for upstream state gradients `dh`, laid out like
    /// the states.
    pub fn backward(&self, batch: &SequenceBatch, traces: &[DenseTrace], dh: &[f64]) -> DenseGrads {
        let per = batch.t() * self.w_h.rows();
        let zeros = || DenseGrads {
            w_h: Mat::zeros(self.w_h.rows(), self.w_h.cols()),
            w_x: Mat::zeros(self.w_x.rows(), self.w_x.cols()),
            b: vec![0.0; self.b.len()],
        };
        let chunks: Vec<DenseGrads> = (0..batch.n().div_ceil(8))
            .into_par_iter()
            .map(|c| {
                let mut g = zeros();
                for i in c * 8..((c + 1) * 8).min(batch.n()) {
                    self.backward_one(batch.input(i), &traces[i], &dh[i * per..(i + 1) * per], &mut g);
                }
                g
            })
            .collect();
        let mut total = zeros();
        for g in chunks {
            for (a, b) in total.w_h.data_mut().iter_mut().zip(g.w_h.data()) {
                *a += b;
            }
            for (a, b) in total.w_x.data_mut().iter_mut().zip(g.w_x.data()) {
                *a += b;
            }
            for (a, b) in total.b.iter_mut().zip(&g.b) {
                *a += b;
            }
        }
        total
    }
}

/// Powers of two from 1 to `d` that divide `d`.
pub fn power_of_two_sweep(d: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |s| Some(s * 2))
        .take_while(|&s| s <= d)
        .filter(|s| d % s == 0)
        .collect()
}

enum Subject {
    Layer(DeepModel),
    Dense(DenseRnn),
}

impl Subject {
    /// One timed forward and one timed backward pass, in milliseconds.
    fn pass(&self, batch: &SequenceBatch, upstream: &[f64]) -> Result<(f64, f64)> {
        match self {
            Subject::Layer(model) => {
                let start = Instant::now();
                let (y, cache) = model.forward(batch)?;
                let f = ms_since(start);
                std::hint::black_box(y);
                let start = Instant::now();
                let g = model.backward(&cache, upstream)?;
                let b = ms_since(start);
                std::hint::black_box(g);
                Ok((f, b))
            }
            Subject::Dense(model) => {
                let start = Instant::now();
                let (y, traces) = model.forward(batch);
                let f = ms_since(start);
                std::hint::black_box(y);
                let start = Instant::now();
                let g = model.backward(batch, &traces, upstream);
                let b = ms_since(start);
                std::hint::black_box(g);
                Ok((f, b))
            }
        }
    }
}

/// Times full forward and backward passes of a single tanh layer for every
/// block size, plus the dense reference when `dense` is set (reported last,
/// with `d_s = d`). All subjects share one random batch. Repetitions are
/// interleaved across subjects, in random order, so that machine drift
/// affects each alike; warmup passes are discarded and weights are never
/// modified.
pub fn timing_sweep(cfg: &TimingConfig, block_sizes: &[usize], dense: bool, rng: &Rng) -> Result<Vec<BenchResult>> {
    for &s in block_sizes {
        validate_timing(cfg, s)?;
    }
    validate_timing(cfg, cfg.d)?;
    let batch = timing_batch(cfg, &mut rng.fork(0))?;
    let upstream = vec![1.0; cfg.batch * cfg.t * cfg.d];
    let mut subjects = Vec::new();
    for &s in block_sizes {
        let mut arch = Architecture::rnn(cfg.d_in, cfg.d, s, Activation::Tanh);
        arch.mode = OutputMode::SeqToSeq;
        let model = init_params(&arch, &InitScheme::UniformScaled, &mut rng.fork(1 + s as u64))?;
        subjects.push((s, Subject::Layer(model)));
    }
    if dense {
        subjects.push((
            cfg.d,
            Subject::Dense(DenseRnn::random(cfg.d, cfg.d_in, &mut rng.fork(u64::MAX))?),
        ));
    }
    let mut fwd = vec![Vec::with_capacity(cfg.reps); subjects.len()];
    let mut bwd = vec![Vec::with_capacity(cfg.reps); subjects.len()];
    // A fresh subject order every repetition, so no subject always runs
    // right after the same neighbour.
    let mut order_rng = rng.fork(u64::MAX - 1);
    for rep in 0..cfg.warmup + cfg.reps {
        for j in order_rng.permutation(subjects.len()) {
            let (f, b) = subjects[j].1.pass(&batch, &upstream)?;
            if rep >= cfg.warmup {
                fwd[j].push(f);
                bwd[j].push(b);
            }
        }
    }
    Ok(subjects
        .iter()
        .enumerate()
        .map(|(j, &(d_s, _))| BenchResult {
            d: cfg.d,
            d_s,
            k: cfg.d / d_s,
            t: cfg.t,
            reps: cfg.reps,
            forward_ms: Some(Stat::median_of_means(&fwd[j])),
            backward_ms: Some(Stat::median_of_means(&bwd[j])),
            test_mse: None,
            cores: cores(),
            threads: rayon::current_num_threads(),
        })
        .collect())
}

/// [`timing_sweep`] for a single block size.
pub fn time_layer(cfg: &TimingConfig, d_s: usize, rng: &Rng) -> Result<BenchResult> {
    Ok(timing_sweep(cfg, &[d_s], false, rng)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseSweepConfig {
    pub data: DgpSpec,
    pub block_sizes: Vec<usize>,
    pub replicates: usize,
    pub train: TrainConfig,
    /// Inner width of the feed-forward readout; defaults to the hidden size.
    #[serde(default)]
    pub readout_inner: Option<usize>,
    /// Train and validation fractions; the rest is the test split.
    #[serde(default = "default_split")]
    pub split: (f64, f64),
}

fn default_split() -> (f64, f64) {
    (0.8, 0.1)
}

/// Architecture of the sweep model: one tanh layer with block size `d_s`
/// followed by a position-wise feed-forward readout (ReLU inside).
pub fn sweep_architecture(spec: &DgpSpec, d_s: usize, inner: usize) -> Architecture {
    Architecture {
        cell: CellKind::Rnn,
        d_in: spec.d_in,
        hidden: spec.d,
        block_size: d_s,
        layers: 1,
        activation: Activation::Tanh,
        aggregator: AggregatorSpec::FeedForward {
            inner,
            out: spec.d_out(),
        },
        head: None,
        input_projection: false,
        mode: OutputMode::SeqToOne,
    }
}

/// One training run of the sweep; returns the test MSE and the metrics.
pub fn mse_run(
    cfg: &MseSweepConfig,
    d_s: usize,
    replicate: usize,
    rng: &Rng,
) -> Result<(f64, Vec<crate::train::Metrics>)> {
    // Data depends on the replicate only, so block sizes see the same samples.
    let rep_rng = rng.fork(replicate as u64);
    let (data, _) = gen_rnn_dgp(&cfg.data, &rep_rng.fork(0))?;
    let (tr, va, te) = data.split_fractions(cfg.split.0, cfg.split.1)?;
    let inner = cfg.readout_inner.unwrap_or(cfg.data.d);
    let arch = sweep_architecture(&cfg.data, d_s, inner);
    let model = init_params(&arch, &InitScheme::UniformScaled, &mut rep_rng.fork(1 + d_s as u64))?;
    let mut tc = cfg.train.clone();
    tc.seed = rep_rng.fork((1 << 32) | d_s as u64).seed();
    let out = train(model, &tr, &va, &tc, &mut |_, _| Ok(Control::Continue))?;
    Ok((evaluate(&out.model, &te, Metric::Mse)?, out.metrics))
}

/// Mean and std of the test MSE over replicates, per block size.
pub fn mse_vs_blocksize(cfg: &MseSweepConfig, rng: &Rng) -> Result<Vec<BenchResult>> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    cfg.block_sizes
        .iter()
        .map(|&d_s| {
            if d_s == 0 || cfg.data.d % d_s != 0 {
                return Err(Error::InvalidArgument(format!(
                    "block size {d_s} must divide d = {}",
                    cfg.data.d
                )));
            }
            let mses: Vec<f64> = (0..cfg.replicates)
                .map(|r| mse_run(cfg, d_s, r, rng).map(|(m, _)| m))
                .collect::<Result<_>>()?;
            Ok(BenchResult {
                d: cfg.data.d,
                d_s,
                k: cfg.data.d / d_s,
                t: cfg.data.t,
                reps: cfg.replicates,
                forward_ms: None,
                backward_ms: None,
                test_mse: Some(Stat::of(&mses)),
                cores: cores(),
                threads: rayon::current_num_threads(),
            })
        })
        .collect()
}

/// Outcome of one named check on benchmark results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn by_block_size(results: &[BenchResult]) -> Vec<&BenchResult> {
    let mut v: Vec<&BenchResult> = results.iter().collect();
    v.sort_by_key(|r| r.d_s);
    v
}

/// Each timed series must not fall by more than `slack` (relative) from
/// one block size to the next. `layer` holds the block-diagonal results only.
pub fn monotone_checks(layer: &[BenchResult], slack: f64) -> Vec<Check> {
    let sorted = by_block_size(layer);
    let series: [(&str, fn(&BenchResult) -> Option<Stat>); 2] =
        [("forward", |r| r.forward_ms), ("backward", |r| r.backward_ms)];
    series
        .iter()
        .map(|(name, get)| {
            let mut worst = f64::INFINITY;
            let mut at = (0, 0);
            for w in sorted.windows(2) {
                let (Some(a), Some(b)) = (get(w[0]), get(w[1])) else {
                    continue;
                };
                let ratio = b.mean / a.mean;
                if ratio < worst {
                    worst = ratio;
                    at = (w[0].d_s, w[1].d_s);
                }
            }
            Check {
                name: format!("{name} time non-decreasing in block size"),
                passed: worst >= 1.0 - slack,
                detail: format!(
                    "smallest adjacent ratio {worst:.3} between d_s={} and d_s={}",
                    at.0, at.1
                ),
            }
        })
        .collect()
}

/// The single-block layer must be within `tolerance` (relative) of the
/// dense reference, for forward and backward times.
pub fn dense_checks(single_block: &BenchResult, dense: &BenchResult, tolerance: f64) -> Vec<Check> {
    let series: [(&str, fn(&BenchResult) -> Option<Stat>); 2] =
        [("forward", |r| r.forward_ms), ("backward", |r| r.backward_ms)];
    series
        .iter()
        .map(|(name, get)| {
            let (a, b) = (
                get(single_block).map_or(f64::NAN, |s| s.mean),
                get(dense).map_or(f64::NAN, |s| s.mean),
            );
            let gap = (a - b).abs() / b;
            Check {
                name: format!("{name} time of one block matches dense reference"),
                passed: gap <= tolerance,
                detail: format!("block {a:.4} ms, dense {b:.4} ms, relative gap {gap:.4}"),
            }
        })
        .collect()
}

/// Checks on an MSE sweep that contains block sizes 1, 2 and the full
/// dimension: `mse(1) > gap · mse(2)`, every `d_s ≥ 2` within `factor` of
/// the full block, and `std(1) > std(2)`.
pub fn mse_checks(results: &[BenchResult], gap: f64, factor: f64) -> Result<Vec<Check>> {
    let sorted = by_block_size(results);
    let stat = |r: &BenchResult| {
        r.test_mse
            .ok_or_else(|| Error::InvalidArgument(format!("block size {} has no test MSE", r.d_s)))
    };
    let find = |ds: usize| {
        sorted
            .iter()
            .find(|r| r.d_s == ds)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("sweep lacks block size {ds}")))
    };
    let full = *sorted
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty sweep".into()))?;
    let (s1, s2, sf) = (stat(find(1)?)?, stat(find(2)?)?, stat(full)?);
    let mut spread = Vec::new();
    let mut within = true;
    for r in sorted.iter().filter(|r| r.d_s >= 2) {
        let m = stat(r)?.mean;
        let ratio = m / sf.mean;
        within &= ratio <= factor && ratio >= 1.0 / factor;
        spread.push(format!("{}:{ratio:.3}", r.d_s));
    }
    Ok(vec![
        Check {
            name: format!("mse(d_s=1) > {gap} x mse(d_s=2)"),
            passed: s1.mean > gap * s2.mean,
            detail: format!(
                "mse(1) = {:.6}, mse(2) = {:.6}, ratio {:.4}",
                s1.mean,
                s2.mean,
                s1.mean / s2.mean
            ),
        },
        Check {
            name: format!("mse(d_s>=2) within factor {factor} of mse(d_s={})", full.d_s),
            passed: within,
            detail: format!("ratios to the full block {}", spread.join(" ")),
        },
        Check {
            name: "std(d_s=1) > std(d_s=2)".into(),
            passed: s1.std > s2.std,
            detail: format!("std(1) = {:.6}, std(2) = {:.6}", s1.std, s2.std),
        },
    ])
}

/// Aligned text table, one row per result.
pub fn format_table(results: &[BenchResult]) -> String {
    let cell = |s: Option<Stat>| s.map_or("-".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
    let rows: Vec<[String; 7]> = results
        .iter()
        .map(|r| {
            [
                r.d.to_string(),
                r.d_s.to_string(),
                r.k.to_string(),
                r.t.to_string(),
                cell(r.forward_ms),
                cell(r.backward_ms),
                cell(r.test_mse),
            ]
        })
        .collect();
    let header = ["d", "d_s", "K", "T", "forward_ms", "backward_ms", "test_mse"];
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}", w = *w))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rep_has_zero_std() {
        let cfg = TimingConfig {
            d: 4,
            t: 3,
            batch: 2,
            reps: 1,
            warmup: 0,
            ..TimingConfig::default()
        };
        let r = time_layer(&cfg, 2, &Rng::new(0)).unwrap();
        assert_eq!(r.forward_ms.unwrap().std, 0.0);
        assert_eq!(r.backward_ms.unwrap().std, 0.0);
        assert!(r.forward_ms.unwrap().mean > 0.0);
        assert_eq!((r.k, r.reps), (2, 1));
        assert!(time_layer(&cfg, 3, &Rng::new(0)).is_err());
    }

    #[test]
    fn median_of_means_groups() {
        let s = Stat::median_of_means(&[1.0, 1.0, 2.0, 2.0, 100.0, 100.0, 3.0, 3.0, 4.0, 4.0]);
        assert_eq!(s.mean, 3.0);
        assert_eq!(Stat::median_of_means(&[7.0]).mean, 7.0);
        assert_eq!(Stat::of(&[1.0, 3.0]).std, 2f64.sqrt());
    }

    #[test]
    fn sweep_sizes() {
        assert_eq!(power_of_two_sweep(128), vec![1, 2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(power_of_two_sweep(12), vec![1, 2, 4]);
    }

    #[test]
    fn dense_reference_matches_block_layer() {
        let mut rng = Rng::new(3);
        let dense = DenseRnn::random(6, 2, &mut rng).unwrap();
        let x = rng.gaussian_vec(0.0, 1.0, 3 * 5 * 2).unwrap();
        let batch = SequenceBatch::new(3, 5, 2, 1, x, vec![0.0; 3], TargetLayout::Last).unwrap();
        let mut arch = Architecture::rnn(2, 6, 6, Activation::Tanh);
        arch.mode = OutputMode::SeqToSeq;
        let mut model = DeepModel::zeros(&arch).unwrap();
        let mut flat = dense.w_h.data().to_vec();
        flat.extend_from_slice(dense.w_x.data());
        flat.extend_from_slice(&dense.b);
        model.set_params_flat(&flat).unwrap();
        let (states, traces) = dense.forward(&batch);
        let (y, cache) = model.forward(&batch).unwrap();
        assert_eq!(states, y);
        let up = rng.gaussian_vec(0.0, 1.0, y.len()).unwrap();
        let g = dense.backward(&batch, &traces, &up);
        let gm = model.backward(&cache, &up).unwrap().flat();
        let mut want = g.w_h.data().to_vec();
        want.extend_from_slice(g.w_x.data());
        want.extend_from_slice(&g.b);
        assert!(crate::linalg::max_abs_diff(&gm, &want) < 1e-12);
    }

    #[test]
    fn table_is_aligned() {
        let r = BenchResult {
            d: 8,
            d_s: 2,
            k: 4,
            t: 16,
            reps: 3,
            forward_ms: Some(Stat { mean: 1.5, std: 0.25 }),
            backward_ms: None,
            test_mse: None,
            cores: 1,
            threads: 1,
        };
        let t = format_table(&[r.clone(), BenchResult { d_s: 8, k: 1, ..r }]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("d  d_s"));
        assert_eq!(lines[1].find("1.5000"), lines[2].find("1.5000"));
    }

    fn timed(d_s: usize, f: f64, b: f64) -> BenchResult {
        BenchResult {
            d: 8,
            d_s,
            k: 8 / d_s,
            t: 4,
            reps: 1,
            forward_ms: Some(Stat { mean: f, std: 0.0 }),
            backward_ms: Some(Stat { mean: b, std: 0.0 }),
            test_mse: None,
            cores: 1,
            threads: 1,
        }
    }

    #[test]
    fn monotone_check_uses_slack() {
        let rs = [timed(1, 1.0, 1.0), timed(2, 0.95, 1.2), timed(4, 2.0, 1.15)];
        let c = monotone_checks(&rs, 0.1);
        assert!(c[0].passed && c[1].passed);
        let c = monotone_checks(&rs, 0.01);
        assert!(!c[0].passed && !c[1].passed);
        assert!(c[1].detail.contains("d_s=2 and d_s=4"));
        let d = dense_checks(&timed(8, 1.04, 1.0), &timed(8, 1.0, 1.1), 0.05);
        assert!(d[0].passed && !d[1].passed);
    }

    #[test]
    fn mse_checks_need_the_key_sizes() {
        let with = |d_s: usize, mean: f64, std: f64| BenchResult {
            forward_ms: None,
            backward_ms: None,
            test_mse: Some(Stat { mean, std }),
            ..timed(d_s, 0.0, 0.0)
        };
        let rs = [
            with(8, 1.0, 0.1),
            with(1, 4.0, 2.0),
            with(2, 1.2, 0.2),
            with(4, 1.1, 0.1),
        ];
        let c = mse_checks(&rs, 3.0, 2.0).unwrap();
        assert!(c.iter().all(|c| c.passed), "{c:?}");
        let c = mse_checks(&[with(1, 2.0, 0.1), with(2, 1.0, 0.2), with(8, 3.0, 0.1)], 3.0, 2.0).unwrap();
        assert!(c.iter().all(|c| !c.passed), "{c:?}");
        assert!(mse_checks(&rs[1..2], 3.0, 2.0).is_err());
    }
}
