use serde::{Deserialize, Serialize};

use crate::eigen::{complex_jordan_block, jordan_block};
use crate::error::{Error, Result};
use crate::features::RecurrenceFeature;
use crate::linalg::{BlockDiagonalMatrix, Mat, Rng};
use crate::net::cell::Cell;
use crate::net::model::{Architecture, DeepModel};

/// Parameter initialization. Every scheme first draws all parameters from
/// `U(−1/√d, 1/√d)` with `d` the hidden size, in tensor order; the other
/// schemes then overwrite the recurrent matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    UniformScaled,
    /// Every recurrent block is the identity.
    IdentityRecurrent,
    /// Recurrent matrices are the direct sum of the listed real Jordan
    /// blocks, which must tile the hidden size without crossing blocks.
    CanonicalBlocks {
        features: Vec<RecurrenceFeature>,
    },
}

pub fn init_params(arch: &Architecture, scheme: &InitScheme, rng: &mut Rng) -> Result<DeepModel> {
    let mut model = DeepModel::zeros(arch)?;
    let bound = 1.0 / (arch.hidden as f64).sqrt();
    for (.., v) in model.tensors_mut() {
        for x in v.iter_mut() {
            *x = -bound + 2.0 * bound * rng.uniform();
        }
    }
    let replacement = match scheme {
        InitScheme::UniformScaled => return Ok(model),
        InitScheme::IdentityRecurrent => BlockDiagonalMatrix::identity(arch.hidden / arch.block_size, arch.block_size),
        InitScheme::CanonicalBlocks { features } => canonical_matrix(features, arch.hidden, arch.block_size)?,
    };
    for cell in &mut model.layers {
        set_recurrent(cell, &replacement);
    }
    Ok(model)
}

fn set_recurrent(cell: &mut Cell, w: &BlockDiagonalMatrix) {
    match cell {
        Cell::Rnn(c) => c.w_h = w.clone(),
        Cell::Lstm(c) => {
            for g in [&mut c.forget, &mut c.input, &mut c.output, &mut c.candidate] {
                g.w = w.clone();
            }
        }
        Cell::Gru(c) => {
            for g in [&mut c.update, &mut c.reset, &mut c.candidate] {
                g.w = w.clone();
            }
        }
    }
}

/// Direct sum of `J_n(λ)` and `C_n(γ, θ)` blocks as a block-diagonal
/// matrix with the given block size.
pub fn canonical_matrix(features: &[RecurrenceFeature], d: usize, block_size: usize) -> Result<BlockDiagonalMatrix> {
    let parts: Vec<Mat> = features
        .iter()
        .map(|f| match *f {
            RecurrenceFeature::R { order, lambda } => jordan_block(lambda, order),
            RecurrenceFeature::C { order, gamma, theta } => complex_jordan_block(gamma, theta, order),
        })
        .collect();
    let total: usize = parts.iter().map(Mat::rows).sum();
    if total != d {
        return Err(Error::DimensionMismatch {
            op: "canonical_matrix",
            expected: format!("features spanning {d} dimensions"),
            got: total.to_string(),
        });
    }
    if block_size == 0 || d % block_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "block size {block_size} must divide {d}"
        )));
    }
    let mut start = 0;
    for p in &parts {
        let end = start + p.rows();
        if start / block_size != (end - 1) / block_size {
            return Err(Error::InvalidArgument(format!(
                "feature spanning rows {start}..{end} crosses a block boundary of size {block_size}"
            )));
        }
        start = end;
    }
    BlockDiagonalMatrix::from_dense(&Mat::direct_sum(&parts), block_size)
}
