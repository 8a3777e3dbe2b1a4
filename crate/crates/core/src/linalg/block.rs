use crate::error::{mismatch, Error, Result};
use crate::linalg::Mat;

/// Square block-diagonal matrix with `num_blocks` equal blocks of size
/// `block_size`. Only the blocks are stored, contiguously and row-major
/// within each block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagonalMatrix {
    block_size: usize,
    num_blocks: usize,
    data: Vec<f64>,
}

impl BlockDiagonalMatrix {
    pub fn new(blocks: Vec<Mat>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidArgument("block-diagonal matrix needs at least one block".into()))?;
        let ds = first.rows();
        if ds == 0 {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        for b in &blocks {
            if b.rows() != ds || b.cols() != ds {
                return Err(mismatch(
                    "BlockDiagonalMatrix::new",
                    format!("{ds}x{ds} block"),
                    format!("{}x{}", b.rows(), b.cols()),
                ));
            }
        }
        Ok(Self {
            block_size: ds,
            num_blocks: blocks.len(),
            data: blocks.iter().flat_map(|b| b.data().iter().copied()).collect(),
        })
    }

    pub fn zeros(num_blocks: usize, block_size: usize) -> Self {
        Self {
            block_size,
            num_blocks,
            data: vec![0.0; num_blocks * block_size * block_size],
        }
    }

    pub fn identity(num_blocks: usize, block_size: usize) -> Self {
        let mut w = Self::zeros(num_blocks, block_size);
        for blk in w.block_slices_mut() {
            for i in 0..block_size {
                blk[i * block_size + i] = 1.0;
            }
        }
        w
    }

    /// Takes the diagonal blocks of a dense matrix; off-block entries are
    /// discarded.
    pub fn from_dense(m: &Mat, block_size: usize) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        if block_size == 0 || m.rows() % block_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "block size {block_size} does not divide dimension {}",
                m.rows()
            )));
        }
        let blocks = (0..m.rows() / block_size)
            .map(|k| m.submatrix(k * block_size, k * block_size, block_size, block_size))
            .collect();
        Self::new(blocks)
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    #[inline]
    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.block_size * self.num_blocks
    }

    /// Copy of block `k`.
    pub fn block(&self, k: usize) -> Mat {
        Mat::new(self.block_size, self.block_size, self.block_data(k).to_vec()).expect("block shape")
    }

    /// Copies of all blocks.
    pub fn blocks(&self) -> Vec<Mat> {
        (0..self.num_blocks).map(|k| self.block(k)).collect()
    }

    /// Row-major entries of block `k`.
    #[inline]
    pub fn block_data(&self, k: usize) -> &[f64] {
        let n = self.block_size * self.block_size;
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn block_data_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.block_size * self.block_size;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn block_slices(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.block_size * self.block_size)
    }

    pub fn block_slices_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.block_size * self.block_size)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(mismatch("BlockDiagonalMatrix::apply", self.dim(), v.len()));
        }
        let mut out = vec![0.0; self.dim()];
        self.apply_add_into(v, &mut out);
        Ok(out)
    }

    /// `out += W v`, one block row at a time.
    #[inline]
    pub fn apply_add_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        match self.block_size {
            1 => apply_kernel(&self.data, 1, v, out),
            2 => apply_kernel(&self.data, 2, v, out),
            4 => apply_kernel(&self.data, 4, v, out),
            8 => apply_kernel(&self.data, 8, v, out),
            ds => apply_kernel(&self.data, ds, v, out),
        }
    }

    /// `out += Wᵀ v`.
    #[inline]
    pub fn apply_transpose_add_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        match self.block_size {
            1 => diagonal_kernel(&self.data, v, out),
            2 => apply_t_kernel(&self.data, 2, v, out),
            4 => apply_t_kernel(&self.data, 4, v, out),
            8 => apply_t_kernel(&self.data, 8, v, out),
            ds => apply_t_kernel(&self.data, ds, v, out),
        }
    }

    /// `W += alpha * u vᵀ` restricted to the diagonal blocks.
    #[inline]
    pub fn add_block_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        match self.block_size {
            1 => {
                for ((r, &ui), &vj) in self.data.iter_mut().zip(u).zip(v) {
                    *r += alpha * ui * vj;
                }
            }
            2 => outer_kernel(&mut self.data, 2, alpha, u, v),
            4 => outer_kernel(&mut self.data, 4, alpha, u, v),
            8 => outer_kernel(&mut self.data, 8, alpha, u, v),
            ds => outer_kernel(&mut self.data, ds, alpha, u, v),
        }
    }

    pub fn to_dense(&self) -> Mat {
        Mat::direct_sum(&self.blocks())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.block_slices()
            .map(|b| b.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

// Kernels over the packed blocks. They perform the same operations in the
// same order as the corresponding `Mat` methods; the literal block sizes at
// the call sites let the compiler unroll the small cases. With 1x1 blocks
// the matrix is diagonal and the zero-skipping branches of the general
// kernels are dropped, which only matters for the sign of a zero.

/// `out += diag(w) v`.
#[inline(always)]
fn diagonal_kernel(w: &[f64], v: &[f64], out: &mut [f64]) {
    for ((o, &x), &vi) in out.iter_mut().zip(w).zip(v) {
        *o += x * vi;
    }
}

#[inline(always)]
fn apply_kernel(data: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for ((a, vb), ob) in data
        .chunks_exact(n * n)
        .zip(v.chunks_exact(n))
        .zip(out.chunks_exact_mut(n))
    {
        for (row, o) in a.chunks_exact(n).zip(ob.iter_mut()) {
            let mut acc = 0.0;
            for (x, y) in row.iter().zip(vb) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

#[inline(always)]
fn apply_t_kernel(data: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for ((a, vb), ob) in data
        .chunks_exact(n * n)
        .zip(v.chunks_exact(n))
        .zip(out.chunks_exact_mut(n))
    {
        for (row, &vi) in a.chunks_exact(n).zip(vb) {
            if vi == 0.0 {
                continue;
            }
            for (o, x) in ob.iter_mut().zip(row) {
                *o += x * vi;
            }
        }
    }
}

#[inline(always)]
fn outer_kernel(data: &mut [f64], n: usize, alpha: f64, u: &[f64], v: &[f64]) {
    for ((a, ub), vb) in data
        .chunks_exact_mut(n * n)
        .zip(u.chunks_exact(n))
        .zip(v.chunks_exact(n))
    {
        for (row, &ui) in a.chunks_exact_mut(n).zip(ub) {
            let s = alpha * ui;
            if s == 0.0 {
                continue;
            }
            for (r, &vj) in row.iter_mut().zip(vb) {
                *r += s * vj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn random(k: usize, ds: usize, rng: &mut Rng) -> BlockDiagonalMatrix {
        let blocks = (0..k)
            .map(|_| Mat::new(ds, ds, rng.gaussian_vec(0.0, 1.0, ds * ds).unwrap()).unwrap())
            .collect();
        BlockDiagonalMatrix::new(blocks).unwrap()
    }

    #[test]
    fn apply_matches_dense() {
        let mut rng = Rng::new(1);
        for (k, ds) in [(1, 4), (2, 2), (4, 1), (3, 3), (2, 8), (3, 5), (5, 1)] {
            let w = random(k, ds, &mut rng);
            let v = rng.gaussian_vec(0.0, 1.0, k * ds).unwrap();
            let a = w.apply(&v).unwrap();
            let b = w.to_dense().matvec(&v).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-14);
            }
            let mut t = vec![0.0; k * ds];
            w.apply_transpose_add_into(&v, &mut t);
            let tb = w.to_dense().transpose().matvec(&v).unwrap();
            for (x, y) in t.iter().zip(&tb) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dense_roundtrip_and_errors() {
        let mut rng = Rng::new(2);
        let w = random(3, 2, &mut rng);
        assert_eq!(BlockDiagonalMatrix::from_dense(&w.to_dense(), 2).unwrap(), w);
        assert!(BlockDiagonalMatrix::from_dense(&w.to_dense(), 4).is_err());
        assert!(BlockDiagonalMatrix::new(vec![Mat::zeros(2, 2), Mat::zeros(3, 3)]).is_err());
        assert!(w.apply(&[1.0]).is_err());
    }

    #[test]
    fn packed_blocks_and_outer_updates() {
        let mut rng = Rng::new(4);
        for ds in [1, 2, 3, 4, 8] {
            let mut w = random(3, ds, &mut rng);
            assert_eq!(BlockDiagonalMatrix::new(w.blocks()).unwrap(), w);
            assert_eq!(w.block(1).data(), w.block_data(1));
            let u = rng.gaussian_vec(0.0, 1.0, 3 * ds).unwrap();
            let v = rng.gaussian_vec(0.0, 1.0, 3 * ds).unwrap();
            let mut dense = w.to_dense();
            dense.add_outer(0.5, &u, &v);
            w.add_block_outer(0.5, &u, &v);
            assert_eq!(w, BlockDiagonalMatrix::from_dense(&dense, ds).unwrap());
        }
        let id = BlockDiagonalMatrix::identity(2, 3);
        assert_eq!(id.to_dense(), Mat::identity(6));
    }
}
