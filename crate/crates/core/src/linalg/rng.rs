//! Deterministic counter-based generator (SplitMix64).
//!
//! Output depends only on the seed and the number of draws, so every
//! stream is reproducible bit-for-bit across platforms. Gaussian draws use
//! the polar method with `libm` for the logarithm.

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    counter: u64,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream. Depends only on the parent seed and
    /// `stream`, never on how many values the parent has drawn.
    pub fn fork(&self, stream: u64) -> Rng {
        let s = mix(stream.wrapping_add(1).wrapping_mul(STREAM_MUL));
        Rng::new(mix(self.seed ^ s).wrapping_add(s))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn gaussian_vec(&mut self, mean: f64, std: f64, n: usize) -> Result<Vec<f64>> {
        if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian needs finite mean and std >= 0, got mean={mean} std={std}"
            )));
        }
        Ok((0..n).map(|_| mean + std * self.normal()).collect())
    }

    pub fn uniform_vec(&mut self, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "uniform needs finite lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok((0..n).map(|_| lo + (hi - lo) * self.uniform()).collect())
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}
