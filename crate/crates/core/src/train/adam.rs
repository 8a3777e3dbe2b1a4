use crate::error::{Error, Result};
use crate::net::{DeepModel, Gradients};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam moments over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }

    /// One bias-corrected update of `params` along `grads`.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(crate::error::mismatch(
                "AdamState::step_flat",
                self.m.len(),
                grads.len(),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: format!("flat[{i}]"),
            });
        }
        self.advance();
        let (c1, c2) = self.corrections();
        for (i, p) in params.iter_mut().enumerate() {
            *p -= self.update(i, grads[i], lr, c1, c2);
        }
        Ok(())
    }

    /// Updates every tensor of `model` from the matching tensor of `grads`.
    /// A non-finite gradient aborts before any parameter changes.
    pub fn step_model(&mut self, model: &mut DeepModel, grads: &Gradients, lr: f64) -> Result<()> {
        if let Some(tensor) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient { tensor });
        }
        if model.num_params() != self.m.len() {
            return Err(crate::error::mismatch(
                "AdamState::step_model",
                self.m.len(),
                model.num_params(),
            ));
        }
        self.advance();
        let (c1, c2) = self.corrections();
        let mut i = 0;
        for ((.., p), (.., g)) in model.tensors_mut().into_iter().zip(grads.tensors()) {
            for (pv, &gv) in p.iter_mut().zip(g) {
                *pv -= self.update(i, gv, lr, c1, c2);
                i += 1;
            }
        }
        Ok(())
    }

    fn advance(&mut self) {
        self.step += 1;
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn update(&mut self, i: usize, g: f64, lr: f64, c1: f64, c2: f64) -> f64 {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut s = AdamState::new(1);
        let mut w = [0.0];
        s.step_flat(&mut w, &[0.1], 0.01).unwrap();
        let want = -0.01 * 0.1 / (0.1 + 1e-8);
        assert!((w[0] - want).abs() < 1e-15);
        assert!((w[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut s = AdamState::new(2);
        let mut w = [1.0, -2.0];
        s.step_flat(&mut w, &[0.5, -0.5], 0.1).unwrap();
        let (m0, v0) = (s.m.clone(), s.v.clone());
        let before = w;
        // Moments decay geometrically; with non-zero moments the parameters
        // still move, so check the decay and then a fresh state.
        s.step_flat(&mut w, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(s.m[0], 0.9 * m0[0]);
        assert_eq!(s.v[1], 0.999 * v0[1]);
        assert_ne!(w, before);
        let mut fresh = AdamState::new(2);
        let mut u = [1.0, -2.0];
        fresh.step_flat(&mut u, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(u, [1.0, -2.0]);
    }

    #[test]
    fn descends_a_parabola() {
        let mut s = AdamState::new(1);
        let mut w = [1.0];
        for _ in 0..100 {
            let g = 2.0 * w[0];
            s.step_flat(&mut w, &[g], 0.05).unwrap();
        }
        assert!(w[0].abs() < 0.5);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut s = AdamState::new(2);
        let mut w = [0.0, 0.0];
        assert!(matches!(
            s.step_flat(&mut w, &[0.0, f64::NAN], 0.1),
            Err(Error::NonFiniteGradient { .. })
        ));
        assert_eq!(w, [0.0, 0.0]);
    }
}
