use crate::eigen::{real_block_diagonalize, BlockLayout};
use crate::error::Result;
use crate::linalg::BlockDiagonalMatrix;
use crate::net::cell::{Cell, ParaRnnCell};
use crate::net::model::{Aggregator, DeepModel, Linear, OutputMode};

/// Rewrites `cell` in the real block-diagonal basis `B` of its recurrent
/// matrix: 2x2 recurrent blocks `B⁻¹ W_h B`, input weights `B⁻¹ W_x`, bias
/// `B⁻¹ b`, and a linear aggregator `B` mapping back. With identity
/// activation the aggregated states equal the original hidden states.
pub fn similarity_surrogate(cell: &ParaRnnCell, tol: f64) -> Result<DeepModel> {
    let form = real_block_diagonalize(&cell.w_h.to_dense(), tol, BlockLayout::Pairs)?;
    let b_inv = form.basis.inverse()?;
    let w_x = b_inv.matmul(&cell.w_x)?;
    let b = b_inv.matvec(&cell.b)?;
    let w_h = BlockDiagonalMatrix::new(form.blocks.clone())?;
    let new_cell = ParaRnnCell::new(w_h, w_x, b, cell.activation)?;
    let d = cell.dim();
    DeepModel::from_cell(
        Cell::Rnn(new_cell),
        Aggregator::Linear(Linear::new(form.basis, vec![0.0; d])?),
        OutputMode::SeqToSeq,
    )
}
