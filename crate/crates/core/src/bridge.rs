//! Exact rewrites of ARMA(1,1) and VECH-GARCH(1,1) as linear recurrent
//! cells, plus the half-vectorization helpers.
//!
//! MA sign convention: `y_t = Φ y_{t-1} + ε_t − Θ ε_{t-1}`. Inverting gives
//! `ŷ_t = Σ_{j≥0} Θ^j (Φ − Θ) y_{t-1-j}`, a linear RNN with `W_h = Θ`,
//! `W_x = Φ − Θ` driven by the lagged series.

use serde::{Deserialize, Serialize};

use crate::eigen::spectral_radius;
use crate::error::{mismatch, Error, Result};
use crate::linalg::{BlockDiagonalMatrix, Mat, Rng};
use crate::net::{Activation, ParaRnnCell};

/// Spectral radius margin: `Θ` is accepted only when `ρ(Θ) ≤ 1 − INVERTIBILITY_MARGIN`.
pub const INVERTIBILITY_MARGIN: f64 = 1e-9;

/// Symmetry tolerance for [`vech`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmaSpec {
    pub phi: Mat,
    pub theta: Mat,
}

impl ArmaSpec {
    pub fn new(phi: Mat, theta: Mat) -> Result<Self> {
        if !phi.is_square() {
            return Err(Error::NotSquare {
                rows: phi.rows(),
                cols: phi.cols(),
            });
        }
        if theta.rows() != phi.rows() || theta.cols() != phi.cols() {
            return Err(mismatch("ArmaSpec theta", phi.rows(), theta.rows()));
        }
        Ok(Self { phi, theta })
    }

    pub fn scalar(phi: f64, theta: f64) -> Self {
        Self {
            phi: Mat::new(1, 1, vec![phi]).expect("1x1"),
            theta: Mat::new(1, 1, vec![theta]).expect("1x1"),
        }
    }

    /// Gaussian `Φ` and `Θ`, with `Θ` rescaled so `ρ(Θ)` is uniform in
    /// `[0, max_radius)`.
    pub fn random(d: usize, max_radius: f64, rng: &mut Rng) -> Result<Self> {
        let phi = Mat::new(d, d, rng.gaussian_vec(0.0, 1.0 / (d as f64).sqrt(), d * d)?)?;
        let raw = Mat::new(d, d, rng.gaussian_vec(0.0, 1.0, d * d)?)?;
        let radius = spectral_radius(&raw)?;
        let target = max_radius * rng.uniform();
        let theta = if radius > 0.0 { raw.scale(target / radius) } else { raw };
        Self::new(phi, theta)
    }

    pub fn dim(&self) -> usize {
        self.phi.rows()
    }

    /// Errors with [`Error::NotInvertible`] unless `ρ(Θ) ≤ 1 − 1e-9`.
    pub fn check_invertible(&self) -> Result<()> {
        let radius = spectral_radius(&self.theta)?;
        if radius > 1.0 - INVERTIBILITY_MARGIN {
            return Err(Error::NotInvertible { radius });
        }
        Ok(())
    }
}

/// Identity-activation cell with one dense block, `W_h = Θ`, `W_x = Φ − Θ`
/// and zero bias.
pub fn arma_to_linear_rnn(spec: &ArmaSpec) -> Result<ParaRnnCell> {
    spec.check_invertible()?;
    let d = spec.dim();
    ParaRnnCell::new(
        BlockDiagonalMatrix::new(vec![spec.theta.clone()])?,
        spec.phi.sub(&spec.theta)?,
        vec![0.0; d],
        Activation::Identity,
    )
}

/// Lagged inputs `x_t = y_{t-1}` for `t = 1..=len+1`, with `y_0 = 0`.
/// `ys` holds `len` observations of dimension `d`, row after row.
pub fn lagged_inputs(ys: &[f64], d: usize) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x.extend_from_slice(ys);
    x
}

/// Runs `cell` from a zero state over `xs` and returns every hidden state.
pub fn run_cell(cell: &ParaRnnCell, xs: &[f64]) -> Result<Vec<f64>> {
    let d_in = cell.d_in();
    if xs.len() % d_in != 0 {
        return Err(mismatch("run_cell inputs", d_in, xs.len() % d_in));
    }
    let mut h = vec![0.0; cell.dim()];
    let mut out = Vec::with_capacity(xs.len() / d_in * cell.dim());
    for x in xs.chunks(d_in) {
        h = cell.step(&h, x)?;
        out.extend_from_slice(&h);
    }
    Ok(out)
}

/// Truncated AR(∞) predictor `h_t = Σ_{j=0}^{t-1} Θ^j (Φ − Θ) x_{t-j}` for
/// each step of `xs`, computed directly from matrix powers.
pub fn ar_infinity(spec: &ArmaSpec, xs: &[f64]) -> Result<Vec<f64>> {
    let d = spec.dim();
    if xs.len() % d != 0 {
        return Err(mismatch("ar_infinity inputs", d, xs.len() % d));
    }
    let steps = xs.len() / d;
    let diff = spec.phi.sub(&spec.theta)?;
    // coefs[j] = Θ^j (Φ − Θ)
    let mut coefs = Vec::with_capacity(steps);
    let mut c = diff;
    for _ in 0..steps {
        let next = spec.theta.matmul(&c)?;
        coefs.push(c);
        c = next;
    }
    let mut out = vec![0.0; steps * d];
    for t in 0..steps {
        let h = &mut out[t * d..(t + 1) * d];
        for (j, coef) in coefs.iter().enumerate().take(t + 1) {
            coef.matvec_add_into(&xs[(t - j) * d..(t - j + 1) * d], h);
        }
    }
    Ok(out)
}

/// One-step recursion `h_t = Θ h_{t-1} + (Φ − Θ) x_t` written against the
/// spec rather than a cell.
pub fn arma_recursion(spec: &ArmaSpec, xs: &[f64]) -> Result<Vec<f64>> {
    let d = spec.dim();
    if xs.len() % d != 0 {
        return Err(mismatch("arma_recursion inputs", d, xs.len() % d));
    }
    let diff = spec.phi.sub(&spec.theta)?;
    let mut h = vec![0.0; d];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs.chunks(d) {
        let mut next = spec.theta.matvec(&h)?;
        diff.matvec_add_into(x, &mut next);
        h = next;
        out.extend_from_slice(&h);
    }
    Ok(out)
}

/// Outcome of comparing the cell against both ARMA oracles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmaCheck {
    pub steps: usize,
    pub max_err_ar_infinity: f64,
    pub max_err_recursion: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the linear cell's states with the AR(∞) sum and the one-step
/// recursion on the series `ys`, relative to `1 + max |h|`.
pub fn check_arma_equivalence(spec: &ArmaSpec, ys: &[f64], tolerance: f64) -> Result<ArmaCheck> {
    let cell = arma_to_linear_rnn(spec)?;
    let xs = lagged_inputs(ys, spec.dim());
    let h = run_cell(&cell, &xs)?;
    let scale = 1.0 + h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let e_inf = crate::linalg::max_abs_diff(&h, &ar_infinity(spec, &xs)?) / scale;
    let e_rec = crate::linalg::max_abs_diff(&h, &arma_recursion(spec, &xs)?) / scale;
    Ok(ArmaCheck {
        steps: xs.len() / spec.dim(),
        max_err_ar_infinity: e_inf,
        max_err_recursion: e_rec,
        tolerance,
        passed: e_inf <= tolerance && e_rec <= tolerance,
    })
}

/// Stacks the lower triangle column by column.
pub fn vech(m: &Mat) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let d = m.rows();
    let scale = m.max_abs().max(1.0);
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
            out.push(m[(i, j)]);
        }
    }
    Ok(out)
}

/// Inverse of [`vech`]: rebuilds the symmetric matrix.
pub fn unvech(v: &[f64]) -> Result<Mat> {
    let d = triangular_root(v.len())
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a triangular number", v.len())))?;
    let mut m = Mat::zeros(d, d);
    let mut it = v.iter();
    for j in 0..d {
        for i in j..d {
            let x = *it.next().expect("length checked");
            m.data_mut()[i * d + j] = x;
            m.data_mut()[j * d + i] = x;
        }
    }
    Ok(m)
}

/// `vech(y yᵀ)`.
pub fn vech_outer(y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out.push(y[i] * y[j]);
        }
    }
    out
}

/// `d` with `d (d + 1) / 2 == m`.
pub fn triangular_root(m: usize) -> Option<usize> {
    let mut d = 0;
    while d * (d + 1) / 2 < m {
        d += 1;
    }
    (d * (d + 1) / 2 == m && m > 0).then_some(d)
}

/// `vech(H_t) = b + Θ vech(y_{t-1} y_{t-1}ᵀ) + Φ vech(H_{t-1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarchVechSpec {
    pub phi: Mat,
    pub theta: Mat,
    pub b: Vec<f64>,
}

impl GarchVechSpec {
    /// Number of observed series `d_out`, derived from the vech length.
    pub fn d_out(&self) -> Result<usize> {
        let m = self.phi.rows();
        if !self.phi.is_square() {
            return Err(Error::NotSquare {
                rows: m,
                cols: self.phi.cols(),
            });
        }
        if self.theta.rows() != m || self.theta.cols() != m {
            return Err(mismatch("GarchVechSpec theta", m, self.theta.rows()));
        }
        if self.b.len() != m {
            return Err(mismatch("GarchVechSpec b", m, self.b.len()));
        }
        triangular_root(m).ok_or_else(|| Error::InvalidArgument(format!("vech size {m} is not triangular")))
    }
}

/// Identity-activation cell with `W_h = Φ`, `W_x = Θ` and bias `b`; feed it
/// `x_t = vech(y_{t-1} y_{t-1}ᵀ)`.
pub fn garch_vech_to_linear_rnn(spec: &GarchVechSpec) -> Result<ParaRnnCell> {
    spec.d_out()?;
    ParaRnnCell::new(
        BlockDiagonalMatrix::new(vec![spec.phi.clone()])?,
        spec.theta.clone(),
        spec.b.clone(),
        Activation::Identity,
    )
}

/// GARCH inputs for observations `ys` (`d_out` values per step):
/// `vech(y_{t-1} y_{t-1}ᵀ)` for `t = 1..=len+1` with `y_0 = 0`.
pub fn garch_inputs(ys: &[f64], d_out: usize) -> Vec<f64> {
    let m = d_out * (d_out + 1) / 2;
    let mut out = vec![0.0; m];
    for y in ys.chunks(d_out) {
        out.extend(vech_outer(y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_reparameterization() {
        let cell = arma_to_linear_rnn(&ArmaSpec::scalar(0.7, 0.3)).unwrap();
        assert_eq!(cell.w_h.block(0)[(0, 0)], 0.3);
        assert!((cell.w_x[(0, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(cell.b, vec![0.0]);
        assert_eq!(cell.activation, Activation::Identity);
    }

    #[test]
    fn scalar_two_step_example() {
        let spec = ArmaSpec::scalar(0.7, 0.3);
        let xs = lagged_inputs(&[0.5, -0.2], 1);
        assert_eq!(xs, vec![0.0, 0.5, -0.2]);
        let h = run_cell(&arma_to_linear_rnn(&spec).unwrap(), &xs).unwrap();
        // Recursive oracle h_t = 0.3 h_{t-1} + 0.4 x_t.
        assert_eq!(h[0], 0.0);
        assert!((h[1] - 0.2).abs() < 1e-15);
        assert!((h[2] - (-0.02)).abs() < 1e-15);
    }

    #[test]
    fn pure_ar_when_theta_vanishes() {
        let spec = ArmaSpec::scalar(0.6, 0.0);
        let ys = [1.0, -2.0, 0.5];
        let h = run_cell(&arma_to_linear_rnn(&spec).unwrap(), &lagged_inputs(&ys, 1)).unwrap();
        assert_eq!(h, vec![0.0, 0.6, -1.2, 0.3]);
    }

    #[test]
    fn spectral_radius_gate() {
        assert!(matches!(
            arma_to_linear_rnn(&ArmaSpec::scalar(0.5, 1.0)),
            Err(Error::NotInvertible { .. })
        ));
        assert!(arma_to_linear_rnn(&ArmaSpec::scalar(0.5, -1.2)).is_err());
        assert!(arma_to_linear_rnn(&ArmaSpec::scalar(0.5, 1.0 - 1e-9)).is_ok());
        let rot = Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        assert!(arma_to_linear_rnn(&ArmaSpec::new(Mat::identity(2), rot).unwrap()).is_err());
    }

    #[test]
    fn vech_examples() {
        assert_eq!(
            vech(&Mat::from_rows(&[[1.0, 2.0], [2.0, 3.0]]).unwrap()).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(vech(&Mat::identity(3)).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(vech(&Mat::from_rows(&[[1.0, 2.0], [2.1, 3.0]]).unwrap()).is_err());
        assert!(unvech(&[1.0, 2.0]).is_err());
        assert_eq!(vech_outer(&[2.0, 3.0]), vec![4.0, 6.0, 9.0]);
    }

    #[test]
    fn scalar_garch_variance_recursion() {
        let spec = GarchVechSpec {
            phi: Mat::from_rows(&[[0.8]]).unwrap(),
            theta: Mat::from_rows(&[[0.15]]).unwrap(),
            b: vec![0.05],
        };
        let ys = [0.3, -1.1, 0.7];
        let h = run_cell(&garch_vech_to_linear_rnn(&spec).unwrap(), &garch_inputs(&ys, 1)).unwrap();
        let mut want = 0.0;
        let mut prev_y = 0.0;
        for (t, &got) in h.iter().enumerate() {
            want = 0.15 * prev_y * prev_y + 0.8 * want + 0.05;
            assert_eq!(got, want);
            prev_y = ys.get(t).copied().unwrap_or(0.0);
        }
    }

    #[test]
    fn zero_garch_is_constant() {
        let spec = GarchVechSpec {
            phi: Mat::zeros(3, 3),
            theta: Mat::zeros(3, 3),
            b: vec![0.1, 0.2, 0.3],
        };
        let h = run_cell(
            &garch_vech_to_linear_rnn(&spec).unwrap(),
            &garch_inputs(&[1.0, 2.0, -1.0, 0.5], 2),
        )
        .unwrap();
        for s in h.chunks(3) {
            assert_eq!(s, &[0.1, 0.2, 0.3]);
        }
        let bad = GarchVechSpec {
            b: vec![0.0; 2],
            ..spec
        };
        assert!(garch_vech_to_linear_rnn(&bad).is_err());
    }
}
