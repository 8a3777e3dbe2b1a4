//! Dense and block-diagonal matrices, LU, text IO and the seeded generator.

mod block;
mod mat;
mod rng;

pub use block::BlockDiagonalMatrix;
pub use mat::{Lu, Mat};
pub use rng::Rng;

/// Largest absolute elementwise difference of two equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
