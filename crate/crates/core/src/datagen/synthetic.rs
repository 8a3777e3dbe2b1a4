use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{SequenceBatch, TargetLayout};
use crate::error::{Error, Result};
use crate::features::RecurrenceFeature;
use crate::linalg::{Mat, Rng};
use crate::net::canonical_matrix;

/// `n_series` ARMA(1,1) paths `y_t = φ y_{t-1} + ε_t + θ ε_{t-1}` of length
/// `t`, with `y_0 = ε_0 = 0` and `ε ~ N(0, noise_std²)`, stored one path
/// after another. Path `i` draws from `rng.fork(i)`.
///
/// The moving-average sign here is the common `+θ` form. The recurrent
/// bridge in [`crate::bridge`] writes the same model with `−Θ`, so
/// `Θ = −θ`.
pub fn gen_arma11(n_series: usize, t: usize, phi: f64, theta: f64, noise_std: f64, rng: &Rng) -> Result<Vec<f64>> {
    if !(phi.abs() < 1.0 && theta.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ARMA(1,1) needs |phi| < 1 and |theta| < 1, got phi={phi} theta={theta}"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise std must be finite and >= 0, got {noise_std}"
        )));
    }
    let paths: Vec<Vec<f64>> = (0..n_series)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let mut out = Vec::with_capacity(t);
            let (mut y, mut e) = (0.0, 0.0);
            for _ in 0..t {
                let eps = noise_std * r.normal();
                y = phi * y + eps + theta * e;
                e = eps;
                out.push(y);
            }
            out
        })
        .collect();
    Ok(paths.concat())
}

/// Theoretical lag-1 autocorrelation of the `+θ` ARMA(1,1) process.
pub fn arma11_lag1_autocorrelation(phi: f64, theta: f64) -> f64 {
    (1.0 + phi * theta) * (phi + theta) / (1.0 + 2.0 * phi * theta + theta * theta)
}

/// Sample lag-1 autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Normal distribution `N(mean, std²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normal {
    pub mean: f64,
    pub std: f64,
}

impl Normal {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    fn mat(&self, rows: usize, cols: usize, rng: &mut Rng) -> Result<Mat> {
        Mat::new(rows, cols, rng.gaussian_vec(self.mean, self.std, rows * cols)?)
    }
}

/// Input process feeding the generating network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputProcess {
    /// Independent ARMA(1,1) path per input channel.
    Arma { phi: f64, theta: f64, noise_std: f64 },
    /// I.i.d. Gaussian entries.
    Gaussian { mean: f64, std: f64 },
}

/// Ground-truth recurrent matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecurrentTruth {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Real block-diagonal matrix built from the listed features.
    Canonical {
        features: Vec<RecurrenceFeature>,
    },
}

/// Readout `z = W_y h_T + b_y + ε` (absent: `z = h_T + ε`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    pub d_out: usize,
    pub weights: Normal,
}

/// Vanilla tanh network generating `(x_{1:T}, z)` pairs from `h_0 = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub d_in: usize,
    pub recurrent: RecurrentTruth,
    pub input_weights: Normal,
    /// Hidden bias distribution; `None` means no bias.
    pub bias: Option<Normal>,
    pub readout: Option<Readout>,
    pub noise_std: f64,
    pub input: InputProcess,
}

impl DgpSpec {
    /// Vanilla network of size 128 on ARMA(0.7, 0.3) inputs with a 10-dim
    /// readout; every weight, bias and noise entry `N(0, 1)`.
    pub fn sec61() -> Self {
        let std = Normal::new(0.0, 1.0);
        Self {
            n: 50_000,
            t: 128,
            d: 128,
            d_in: 1,
            recurrent: RecurrentTruth::Gaussian { mean: 0.0, std: 1.0 },
            input_weights: std,
            bias: Some(std),
            readout: Some(Readout {
                d_out: 10,
                weights: std,
            }),
            noise_std: 1.0,
            input: InputProcess::Arma {
                phi: 0.7,
                theta: 0.3,
                noise_std: 1.0,
            },
        }
    }

    /// Bias-free network with `W_h* ~ N(0, 0.1²)`, `W_x* ~ N(2, 2²)`,
    /// `z = h_T + ε`, `ε ~ N(0, 0.01²)`, standard normal inputs.
    pub fn app_a() -> Self {
        Self {
            n: 50_000,
            t: 128,
            d: 128,
            d_in: 1,
            recurrent: RecurrentTruth::Gaussian { mean: 0.0, std: 0.1 },
            input_weights: Normal::new(2.0, 2.0),
            bias: None,
            readout: None,
            noise_std: 0.01,
            input: InputProcess::Gaussian { mean: 0.0, std: 1.0 },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sec61" => Ok(Self::sec61()),
            "appA" | "app_a" => Ok(Self::app_a()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected sec61 or appA)"
            ))),
        }
    }

    /// Shrinks `n`, `t` and `d` by `factor` (rounded, at least 1).
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {factor}")));
        }
        let s = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        self.n = s(self.n);
        self.t = s(self.t);
        self.d = s(self.d);
        Ok(self)
    }

    pub fn d_out(&self) -> usize {
        self.readout.as_ref().map_or(self.d, |r| r.d_out)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.d == 0 || self.d_in == 0 {
            return Err(Error::InvalidArgument("DGP dimensions must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// True parameters of a generated data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w_h: Mat,
    pub w_x: Mat,
    pub b_h: Vec<f64>,
    pub w_y: Option<Mat>,
    pub b_y: Option<Vec<f64>>,
}

impl GroundTruth {
    /// Final hidden state of the generating network, `h_t = tanh(b + W_x x_t
    /// + W_h h_{t-1})`, each product summed on its own.
    pub fn final_state(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.w_h.rows();
        let d_in = self.w_x.cols();
        let mut h = vec![0.0; d];
        for x in xs.chunks(d_in) {
            let mut pre = self.b_h.clone();
            self.w_x.matvec_add_into(x, &mut pre);
            self.w_h.matvec_add_into(&h, &mut pre);
            h = pre.into_iter().map(f64::tanh).collect();
        }
        h
    }

    /// Noise-free target for one input sequence.
    pub fn clean_target(&self, xs: &[f64]) -> Vec<f64> {
        let h = self.final_state(xs);
        match (&self.w_y, &self.b_y) {
            (Some(w), Some(b)) => {
                let mut z = b.clone();
                w.matvec_add_into(&h, &mut z);
                z
            }
            _ => h,
        }
    }
}

/// Draws the ground truth from `rng.fork(0)`, inputs and noise for sample
/// `i` from `rng.fork(1).fork(i)`. Targets are last-step only.
pub fn gen_rnn_dgp(spec: &DgpSpec, rng: &Rng) -> Result<(SequenceBatch, GroundTruth)> {
    spec.validate()?;
    let mut wr = rng.fork(0);
    let (d, d_in) = (spec.d, spec.d_in);
    let w_h = match &spec.recurrent {
        RecurrentTruth::Gaussian { mean, std } => Normal::new(*mean, *std).mat(d, d, &mut wr)?,
        RecurrentTruth::Canonical { features } => canonical_matrix(features, d, d)?.to_dense(),
    };
    let w_x = spec.input_weights.mat(d, d_in, &mut wr)?;
    let b_h = match spec.bias {
        Some(n) => wr.gaussian_vec(n.mean, n.std, d)?,
        None => vec![0.0; d],
    };
    let (w_y, b_y) = match &spec.readout {
        Some(r) => (
            Some(r.weights.mat(r.d_out, d, &mut wr)?),
            Some(wr.gaussian_vec(r.weights.mean, r.weights.std, r.d_out)?),
        ),
        None => (None, None),
    };
    let truth = GroundTruth {
        w_h,
        w_x,
        b_h,
        w_y,
        b_y,
    };
    let d_out = spec.d_out();
    let sample_rng = rng.fork(1);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut r = sample_rng.fork(i as u64);
            let xs = match spec.input {
                InputProcess::Arma { phi, theta, noise_std } => {
                    let channels = gen_arma11(d_in, spec.t, phi, theta, noise_std, &r.fork(0))?;
                    let mut xs = vec![0.0; spec.t * d_in];
                    for c in 0..d_in {
                        for s in 0..spec.t {
                            xs[s * d_in + c] = channels[c * spec.t + s];
                        }
                    }
                    xs
                }
                InputProcess::Gaussian { mean, std } => r.gaussian_vec(mean, std, spec.t * d_in)?,
            };
            let mut z = truth.clean_target(&xs);
            let mut nr = r.fork(1);
            for v in &mut z {
                *v += spec.noise_std * nr.normal();
            }
            Ok((xs, z))
        })
        .collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(spec.n * spec.t * d_in);
    let mut targets = Vec::with_capacity(spec.n * d_out);
    for (x, z) in samples {
        inputs.extend(x);
        targets.extend(z);
    }
    let batch = SequenceBatch::new(spec.n, spec.t, d_in, d_out, inputs, targets, TargetLayout::Last)?;
    Ok((batch, truth))
}

/// Adding problem: channel 0 holds `U(0, 1)` values (open interval),
/// channel 1 marks one position in the first half `[0, t/2)` and one in the
/// second half `[t/2, t)`; the target is the sum of the two marked values.
/// Sample `i` draws from `rng.fork(i)`.
pub fn gen_adding_problem(n: usize, t: usize, rng: &Rng) -> Result<SequenceBatch> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!("adding problem needs T >= 2, got {t}")));
    }
    let half = t / 2;
    let samples: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let mut x = vec![0.0; 2 * t];
            for s in 0..t {
                x[2 * s] = r.uniform_open();
            }
            let p = r.below(half);
            let q = half + r.below(t - half);
            x[2 * p + 1] = 1.0;
            x[2 * q + 1] = 1.0;
            (x.clone(), x[2 * p] + x[2 * q])
        })
        .collect();
    let mut inputs = Vec::with_capacity(n * 2 * t);
    let mut targets = Vec::with_capacity(n);
    for (x, z) in samples {
        inputs.extend(x);
        targets.push(z);
    }
    SequenceBatch::new(n, t, 2, 1, inputs, targets, TargetLayout::Last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arma_degenerate_cases() {
        let rng = Rng::new(1);
        assert!(gen_arma11(2, 50, 0.7, 0.3, 0.0, &rng)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(gen_arma11(1, 5, 1.0, 0.0, 1.0, &rng).is_err());
        assert!(gen_arma11(1, 5, 0.0, -1.0, 1.0, &rng).is_err());
        let white = gen_arma11(1, 100_000, 0.0, 0.0, 1.0, &rng).unwrap();
        assert!(lag1_autocorrelation(&white).abs() < 0.01);
    }

    #[test]
    fn arma_autocorrelation_matches_closed_form() {
        let ys = gen_arma11(1, 1_000_000, 0.7, 0.3, 1.0, &Rng::new(2)).unwrap();
        let want = arma11_lag1_autocorrelation(0.7, 0.3);
        assert!((lag1_autocorrelation(&ys) - want).abs() < 0.02);
    }

    #[test]
    fn preset_shapes() {
        let s = DgpSpec::sec61();
        assert_eq!((s.d_in, s.t, s.d, s.d_out()), (1, 128, 128, 10));
        let a = DgpSpec::app_a();
        assert_eq!(a.d_out(), a.d);
        let small = DgpSpec::app_a().scaled(0.125).unwrap();
        assert_eq!((small.n, small.t, small.d), (6250, 16, 16));
        assert!(DgpSpec::preset("sec62").is_err());
    }

    #[test]
    fn noiseless_targets_follow_the_network() {
        let spec = DgpSpec {
            n: 4,
            t: 6,
            d: 3,
            d_in: 2,
            recurrent: RecurrentTruth::Gaussian { mean: 0.0, std: 0.05 },
            input_weights: Normal::new(0.0, 0.1),
            bias: Some(Normal::new(0.0, 0.1)),
            readout: Some(Readout {
                d_out: 2,
                weights: Normal::new(0.0, 0.1),
            }),
            noise_std: 0.0,
            input: InputProcess::Arma {
                phi: 0.7,
                theta: 0.3,
                noise_std: 1.0,
            },
        };
        let (batch, truth) = gen_rnn_dgp(&spec, &Rng::new(3)).unwrap();
        for i in 0..4 {
            // Independent unroll with plain loops.
            let xs = batch.input(i);
            let mut h = [0.0; 3];
            for s in 0..6 {
                let mut next = [0.0; 3];
                for (r, nv) in next.iter_mut().enumerate() {
                    let inp: f64 = (0..2).map(|c| truth.w_x[(r, c)] * xs[s * 2 + c]).sum();
                    let rec: f64 = (0..3).map(|c| truth.w_h[(r, c)] * h[c]).sum();
                    *nv = (truth.b_h[r] + inp + rec).tanh();
                }
                h = next;
            }
            let w_y = truth.w_y.as_ref().unwrap();
            let b_y = truth.b_y.as_ref().unwrap();
            for r in 0..2 {
                let z: f64 = b_y[r] + (0..3).map(|c| w_y[(r, c)] * h[c]).sum::<f64>();
                assert!((batch.target(i)[r] - z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn generators_are_reproducible() {
        let spec = DgpSpec::app_a().scaled(0.05).unwrap();
        let a = gen_rnn_dgp(&spec, &Rng::new(9)).unwrap();
        let b = gen_rnn_dgp(&spec, &Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            gen_adding_problem(5, 10, &Rng::new(1)).unwrap(),
            gen_adding_problem(5, 10, &Rng::new(1)).unwrap()
        );
    }

    #[test]
    fn adding_problem_structure() {
        let b = gen_adding_problem(2000, 9, &Rng::new(4)).unwrap();
        for i in 0..b.n() {
            let x = b.input(i);
            let marks: Vec<usize> = (0..9).filter(|&s| x[2 * s + 1] == 1.0).collect();
            assert_eq!(marks.len(), 2);
            assert!(marks[0] < 4 && marks[1] >= 4);
            let sum: f64 = (0..9).map(|s| x[2 * s + 1]).sum();
            assert_eq!(sum, 2.0);
            let z = b.target(i)[0];
            assert_eq!(z, x[2 * marks[0]] + x[2 * marks[1]]);
            assert!(z > 0.0 && z < 2.0);
        }
        assert!(gen_adding_problem(1, 1, &Rng::new(0)).is_err());
        let two = gen_adding_problem(10, 2, &Rng::new(0)).unwrap();
        assert!((0..10).all(|i| two.input(i)[1] == 1.0 && two.input(i)[3] == 1.0));
    }

    #[test]
    fn adding_target_mean_is_one() {
        let b = gen_adding_problem(100_000, 10, &Rng::new(5)).unwrap();
        let mean = b.targets().iter().sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.01);
    }
}
