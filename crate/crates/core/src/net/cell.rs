//! Recurrent cells with block-diagonal recurrent matrices.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::linalg::{BlockDiagonalMatrix, Mat};
use crate::net::activation::{sigmoid, Activation};

/// Named tensor views: `(name, rows, cols, data)`.
pub type Tensors<'a> = Vec<(String, usize, usize, &'a [f64])>;
pub type TensorsMut<'a> = Vec<(String, usize, usize, &'a mut [f64])>;

pub(crate) fn push_mat<'a>(out: &mut Tensors<'a>, name: String, m: &'a Mat) {
    out.push((name, m.rows(), m.cols(), m.data()));
}

pub(crate) fn push_mat_mut<'a>(out: &mut TensorsMut<'a>, name: String, m: &'a mut Mat) {
    let (r, c) = (m.rows(), m.cols());
    out.push((name, r, c, m.data_mut()));
}

pub(crate) fn push_vec<'a>(out: &mut Tensors<'a>, name: String, v: &'a [f64]) {
    out.push((name, v.len(), 1, v));
}

pub(crate) fn push_vec_mut<'a>(out: &mut TensorsMut<'a>, name: String, v: &'a mut [f64]) {
    out.push((name, v.len(), 1, v));
}

fn push_blocks<'a>(out: &mut Tensors<'a>, name: &str, w: &'a BlockDiagonalMatrix) {
    let ds = w.block_size();
    for (k, b) in w.block_slices().enumerate() {
        out.push((format!("{name}.block{k}"), ds, ds, b));
    }
}

fn push_blocks_mut<'a>(out: &mut TensorsMut<'a>, name: &str, w: &'a mut BlockDiagonalMatrix) {
    let ds = w.block_size();
    for (k, b) in w.block_slices_mut().enumerate() {
        out.push((format!("{name}.block{k}"), ds, ds, b));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

fn check_dims(op: &'static str, w: &BlockDiagonalMatrix, u: &Mat, b: &[f64]) -> Result<()> {
    let d = w.dim();
    if u.rows() != d {
        return Err(mismatch(op, format!("input matrix with {d} rows"), u.rows()));
    }
    if b.len() != d {
        return Err(mismatch(op, format!("bias of length {d}"), b.len()));
    }
    Ok(())
}

fn check_seq(op: &'static str, xs: &[f64], t: usize, d_in: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: sequence length must be positive"
        )));
    }
    if xs.len() != t * d_in {
        return Err(mismatch(op, t * d_in, xs.len()));
    }
    Ok(())
}

/// `h_t = σ(W_h h_{t-1} + W_x x_t + b)` with block-diagonal `W_h`.
/// Rows of `W_x` and entries of `b` are partitioned like the blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ParaRnnCell {
    pub w_h: BlockDiagonalMatrix,
    pub w_x: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl ParaRnnCell {
    pub fn new(w_h: BlockDiagonalMatrix, w_x: Mat, b: Vec<f64>, activation: Activation) -> Result<Self> {
        check_dims("ParaRnnCell::new", &w_h, &w_x, &b)?;
        Ok(Self {
            w_h,
            w_x,
            b,
            activation,
        })
    }

    pub fn zeros(d: usize, block_size: usize, d_in: usize, activation: Activation) -> Result<Self> {
        check_partition(d, block_size)?;
        Ok(Self {
            w_h: BlockDiagonalMatrix::zeros(d / block_size, block_size),
            w_x: Mat::zeros(d, d_in),
            b: vec![0.0; d],
            activation,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_h.dim()
    }

    pub fn d_in(&self) -> usize {
        self.w_x.cols()
    }

    /// One step from `h_prev` on input `x`.
    pub fn step(&self, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if h_prev.len() != self.dim() {
            return Err(mismatch("ParaRnnCell::step state", self.dim(), h_prev.len()));
        }
        if x.len() != self.d_in() {
            return Err(mismatch("ParaRnnCell::step input", self.d_in(), x.len()));
        }
        let mut pre = self.b.clone();
        self.w_x.matvec_add_into(x, &mut pre);
        self.w_h.apply_add_into(h_prev, &mut pre);
        Ok(pre.into_iter().map(|a| self.activation.apply(a)).collect())
    }

    fn forward_seq(&self, xs: &[f64], t: usize) -> LayerCache {
        let d = self.dim();
        let d_in = self.d_in();
        let mut pre = vec![0.0; t * d];
        let mut h = vec![0.0; t * d];
        for s in 0..t {
            let p = &mut pre[s * d..(s + 1) * d];
            p.copy_from_slice(&self.b);
            self.w_x.matvec_add_into(&xs[s * d_in..(s + 1) * d_in], p);
            let (done, rest) = h.split_at_mut(s * d);
            if s > 0 {
                self.w_h.apply_add_into(&done[(s - 1) * d..], p);
            }
            for (hi, &ai) in rest[..d].iter_mut().zip(p.iter()) {
                *hi = self.activation.apply(ai);
            }
        }
        LayerCache::Rnn { pre, h }
    }

    fn backward_seq(
        &self,
        xs: &[f64],
        t: usize,
        cache: &LayerCache,
        dh: &[f64],
        grad: &mut ParaRnnCell,
        dx: Option<&mut [f64]>,
    ) {
        let LayerCache::Rnn { pre, h } = cache else {
            unreachable!("cache kind checked by caller")
        };
        let d = self.dim();
        let d_in = self.d_in();
        let mut carry = vec![0.0; d];
        let mut da = vec![0.0; d];
        let mut dx = dx;
        for s in (0..t).rev() {
            let row = s * d..(s + 1) * d;
            local_grad(
                self.activation,
                &pre[row.clone()],
                &h[row.clone()],
                &dh[row],
                &carry,
                &mut da,
            );
            for (gb, v) in grad.b.iter_mut().zip(&da) {
                *gb += v;
            }
            let x = &xs[s * d_in..(s + 1) * d_in];
            grad.w_x.add_outer(1.0, &da, x);
            carry.iter_mut().for_each(|c| *c = 0.0);
            if s > 0 {
                grad.w_h.add_block_outer(1.0, &da, &h[(s - 1) * d..s * d]);
                self.w_h.apply_transpose_add_into(&da, &mut carry);
            }
            if let Some(dx) = dx.as_deref_mut() {
                self.w_x.matvec_t_add_into(&da, &mut dx[s * d_in..(s + 1) * d_in]);
            }
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Tensors<'a>) {
        push_blocks(out, &format!("{prefix}w_h"), &self.w_h);
        push_mat(out, format!("{prefix}w_x"), &self.w_x);
        push_vec(out, format!("{prefix}b"), &self.b);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorsMut<'a>) {
        push_blocks_mut(out, &format!("{prefix}w_h"), &mut self.w_h);
        push_mat_mut(out, format!("{prefix}w_x"), &mut self.w_x);
        push_vec_mut(out, format!("{prefix}b"), &mut self.b);
    }
}

/// `da = (up + carry) ⊙ σ'(pre)`, with the activation resolved once per
/// step rather than per unit.
#[inline]
fn local_grad(act: Activation, pre: &[f64], h: &[f64], up: &[f64], carry: &[f64], da: &mut [f64]) {
    #[inline(always)]
    fn apply(pre: &[f64], h: &[f64], up: &[f64], carry: &[f64], da: &mut [f64], deriv: impl Fn(f64, f64) -> f64) {
        for ((((o, &a), &y), &g), &c) in da.iter_mut().zip(pre).zip(h).zip(up).zip(carry) {
            *o = (g + c) * deriv(a, y);
        }
    }
    match act {
        Activation::Identity => apply(pre, h, up, carry, da, |a, y| Activation::Identity.derivative(a, y)),
        Activation::Tanh => apply(pre, h, up, carry, da, |a, y| Activation::Tanh.derivative(a, y)),
        Activation::Relu => apply(pre, h, up, carry, da, |a, y| Activation::Relu.derivative(a, y)),
        Activation::Sigmoid => apply(pre, h, up, carry, da, |a, y| Activation::Sigmoid.derivative(a, y)),
    }
}

fn check_partition(d: usize, block_size: usize) -> Result<()> {
    if d == 0 || block_size == 0 || d % block_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "block size {block_size} must divide hidden size {d}"
        )));
    }
    Ok(())
}

/// Affine map `W h + U x + b` feeding one gate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub w: BlockDiagonalMatrix,
    pub u: Mat,
    pub b: Vec<f64>,
}

impl Gate {
    pub fn zeros(d: usize, block_size: usize, d_in: usize) -> Self {
        Self {
            w: BlockDiagonalMatrix::zeros(d / block_size, block_size),
            u: Mat::zeros(d, d_in),
            b: vec![0.0; d],
        }
    }

    #[inline]
    fn preact(&self, h_prev: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        self.u.matvec_add_into(x, out);
        if let Some(h) = h_prev {
            self.w.apply_add_into(h, out);
        }
    }

    /// Adds the parameter gradient for pre-activation gradient `da`, then
    /// propagates `da` into `carry` (recurrent) and `dx` (input).
    #[inline]
    fn backprop(
        &self,
        grad: &mut Gate,
        da: &[f64],
        x: &[f64],
        h_prev: Option<&[f64]>,
        carry: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        for (gb, v) in grad.b.iter_mut().zip(da) {
            *gb += v;
        }
        grad.u.add_outer(1.0, da, x);
        if let Some(h) = h_prev {
            grad.w.add_block_outer(1.0, da, h);
            self.w.apply_transpose_add_into(da, carry);
        }
        if let Some(dx) = dx {
            self.u.matvec_t_add_into(da, dx);
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, tag: &str, out: &mut Tensors<'a>) {
        push_blocks(out, &format!("{prefix}w_{tag}"), &self.w);
        push_mat(out, format!("{prefix}u_{tag}"), &self.u);
        push_vec(out, format!("{prefix}b_{tag}"), &self.b);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, tag: &str, out: &mut TensorsMut<'a>) {
        push_blocks_mut(out, &format!("{prefix}w_{tag}"), &mut self.w);
        push_mat_mut(out, format!("{prefix}u_{tag}"), &mut self.u);
        push_vec_mut(out, format!("{prefix}b_{tag}"), &mut self.b);
    }
}

/// LSTM with block-diagonal recurrent matrices for all four gates:
///
/// ```text
/// f = σ(W_f h + U_f x + b_f)    i = σ(W_i h + U_i x + b_i)
/// o = σ(W_o h + U_o x + b_o)    g = tanh(W_c h + U_c x + b_c)
/// c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct ParaLstmCell {
    pub forget: Gate,
    pub input: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

const LSTM_TAGS: [&str; 4] = ["f", "i", "o", "c"];

impl ParaLstmCell {
    pub fn zeros(d: usize, block_size: usize, d_in: usize) -> Result<Self> {
        check_partition(d, block_size)?;
        let g = Gate::zeros(d, block_size, d_in);
        Ok(Self {
            forget: g.clone(),
            input: g.clone(),
            output: g.clone(),
            candidate: g,
        })
    }

    pub fn new(forget: Gate, input: Gate, output: Gate, candidate: Gate) -> Result<Self> {
        let cell = Self {
            forget,
            input,
            output,
            candidate,
        };
        cell.validate()?;
        Ok(cell)
    }

    fn gates(&self) -> [&Gate; 4] {
        [&self.forget, &self.input, &self.output, &self.candidate]
    }

    fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [&mut self.forget, &mut self.input, &mut self.output, &mut self.candidate]
    }

    fn validate(&self) -> Result<()> {
        let d = self.forget.w.dim();
        let ds = self.forget.w.block_size();
        let d_in = self.forget.u.cols();
        for g in self.gates() {
            check_dims("ParaLstmCell", &g.w, &g.u, &g.b)?;
            if g.w.dim() != d || g.w.block_size() != ds || g.u.cols() != d_in {
                return Err(Error::InvalidArgument(
                    "LSTM gates must share dimensions and block partition".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.forget.w.dim()
    }

    pub fn d_in(&self) -> usize {
        self.forget.u.cols()
    }

    /// One step; returns `(h, c)`.
    pub fn step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        if h_prev.len() != d || c_prev.len() != d {
            return Err(mismatch("ParaLstmCell::step state", d, h_prev.len().min(c_prev.len())));
        }
        if x.len() != self.d_in() {
            return Err(mismatch("ParaLstmCell::step input", self.d_in(), x.len()));
        }
        let mut gates = vec![0.0; 4 * d];
        for (k, g) in self.gates().iter().enumerate() {
            g.preact(Some(h_prev), x, &mut gates[k * d..(k + 1) * d]);
        }
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        for j in 0..d {
            let f = sigmoid(gates[j]);
            let i = sigmoid(gates[d + j]);
            let o = sigmoid(gates[2 * d + j]);
            let g = gates[3 * d + j].tanh();
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        Ok((h, c))
    }

    fn forward_seq(&self, xs: &[f64], t: usize) -> LayerCache {
        let d = self.dim();
        let d_in = self.d_in();
        let mut gates = vec![0.0; t * 4 * d];
        let mut c = vec![0.0; t * d];
        let mut tc = vec![0.0; t * d];
        let mut h = vec![0.0; t * d];
        for s in 0..t {
            let x = &xs[s * d_in..(s + 1) * d_in];
            let grow = &mut gates[s * 4 * d..(s + 1) * 4 * d];
            let h_prev = (s > 0).then(|| &h[(s - 1) * d..s * d]);
            for (k, g) in self.gates().iter().enumerate() {
                g.preact(h_prev, x, &mut grow[k * d..(k + 1) * d]);
            }
            for v in &mut grow[..3 * d] {
                *v = sigmoid(*v);
            }
            for v in &mut grow[3 * d..] {
                *v = v.tanh();
            }
            for j in 0..d {
                let c_prev = if s > 0 { c[(s - 1) * d + j] } else { 0.0 };
                let cv = grow[j] * c_prev + grow[d + j] * grow[3 * d + j];
                c[s * d + j] = cv;
                let tv = cv.tanh();
                tc[s * d + j] = tv;
                h[s * d + j] = grow[2 * d + j] * tv;
            }
        }
        LayerCache::Lstm { gates, c, tc, h }
    }

    fn backward_seq(
        &self,
        xs: &[f64],
        t: usize,
        cache: &LayerCache,
        dh: &[f64],
        grad: &mut ParaLstmCell,
        dx: Option<&mut [f64]>,
    ) {
        let LayerCache::Lstm { gates, c, tc, h } = cache else {
            unreachable!("cache kind checked by caller")
        };
        let d = self.dim();
        let d_in = self.d_in();
        let mut carry_h = vec![0.0; d];
        let mut carry_c = vec![0.0; d];
        let mut da = vec![0.0; 4 * d];
        let mut dx = dx;
        for s in (0..t).rev() {
            let grow = &gates[s * 4 * d..(s + 1) * 4 * d];
            for j in 0..d {
                let (f, i, o, g) = (grow[j], grow[d + j], grow[2 * d + j], grow[3 * d + j]);
                let tv = tc[s * d + j];
                let dhj = dh[s * d + j] + carry_h[j];
                let dc = carry_c[j] + dhj * o * (1.0 - tv * tv);
                let c_prev = if s > 0 { c[(s - 1) * d + j] } else { 0.0 };
                da[j] = dc * c_prev * f * (1.0 - f);
                da[d + j] = dc * g * i * (1.0 - i);
                da[2 * d + j] = dhj * tv * o * (1.0 - o);
                da[3 * d + j] = dc * i * (1.0 - g * g);
                carry_c[j] = dc * f;
            }
            carry_h.iter_mut().for_each(|v| *v = 0.0);
            let x = &xs[s * d_in..(s + 1) * d_in];
            let h_prev = (s > 0).then(|| &h[(s - 1) * d..s * d]);
            let gs = self.gates();
            for (k, gg) in grad.gates_mut().into_iter().enumerate() {
                let dxs = dx.as_deref_mut().map(|v| &mut v[s * d_in..(s + 1) * d_in]);
                gs[k].backprop(gg, &da[k * d..(k + 1) * d], x, h_prev, &mut carry_h, dxs);
            }
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Tensors<'a>) {
        for (g, tag) in self.gates().into_iter().zip(LSTM_TAGS) {
            g.tensors(prefix, tag, out);
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorsMut<'a>) {
        for (g, tag) in self.gates_mut().into_iter().zip(LSTM_TAGS) {
            g.tensors_mut(prefix, tag, out);
        }
    }
}

/// GRU with block-diagonal recurrent matrices:
///
/// ```text
/// z = σ(W_z h + U_z x + b_z)    r = σ(W_r h + U_r x + b_r)
/// n = tanh(W_n (r ⊙ h) + U_n x + b_n)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct ParaGruCell {
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
}

const GRU_TAGS: [&str; 3] = ["z", "r", "n"];

impl ParaGruCell {
    pub fn zeros(d: usize, block_size: usize, d_in: usize) -> Result<Self> {
        check_partition(d, block_size)?;
        let g = Gate::zeros(d, block_size, d_in);
        Ok(Self {
            update: g.clone(),
            reset: g.clone(),
            candidate: g,
        })
    }

    pub fn new(update: Gate, reset: Gate, candidate: Gate) -> Result<Self> {
        let cell = Self {
            update,
            reset,
            candidate,
        };
        let d = cell.update.w.dim();
        let ds = cell.update.w.block_size();
        let d_in = cell.update.u.cols();
        for g in cell.gates() {
            check_dims("ParaGruCell", &g.w, &g.u, &g.b)?;
            if g.w.dim() != d || g.w.block_size() != ds || g.u.cols() != d_in {
                return Err(Error::InvalidArgument(
                    "GRU gates must share dimensions and block partition".into(),
                ));
            }
        }
        Ok(cell)
    }

    fn gates(&self) -> [&Gate; 3] {
        [&self.update, &self.reset, &self.candidate]
    }

    fn gates_mut(&mut self) -> [&mut Gate; 3] {
        [&mut self.update, &mut self.reset, &mut self.candidate]
    }

    pub fn dim(&self) -> usize {
        self.update.w.dim()
    }

    pub fn d_in(&self) -> usize {
        self.update.u.cols()
    }

    pub fn step(&self, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if h_prev.len() != self.dim() {
            return Err(mismatch("ParaGruCell::step state", self.dim(), h_prev.len()));
        }
        if x.len() != self.d_in() {
            return Err(mismatch("ParaGruCell::step input", self.d_in(), x.len()));
        }
        let xs = x.to_vec();
        let mut h = vec![0.0; self.dim()];
        self.step_into(Some(h_prev), &xs, &mut vec![0.0; 3 * self.dim()], &mut h);
        Ok(h)
    }

    /// Fills `grow` with `[z | r | n]` and `h` with the new state.
    fn step_into(&self, h_prev: Option<&[f64]>, x: &[f64], grow: &mut [f64], h: &mut [f64]) {
        let d = self.dim();
        self.update.preact(h_prev, x, &mut grow[..d]);
        self.reset.preact(h_prev, x, &mut grow[d..2 * d]);
        for v in &mut grow[..2 * d] {
            *v = sigmoid(*v);
        }
        let rh: Option<Vec<f64>> = h_prev.map(|hp| (0..d).map(|j| grow[d + j] * hp[j]).collect());
        let (zr, n) = grow.split_at_mut(2 * d);
        self.candidate.preact(rh.as_deref(), x, n);
        for v in n.iter_mut() {
            *v = v.tanh();
        }
        for j in 0..d {
            let hp = h_prev.map_or(0.0, |hp| hp[j]);
            let z = zr[j];
            h[j] = (1.0 - z) * hp + z * n[j];
        }
    }

    fn forward_seq(&self, xs: &[f64], t: usize) -> LayerCache {
        let d = self.dim();
        let d_in = self.d_in();
        let mut gates = vec![0.0; t * 3 * d];
        let mut h = vec![0.0; t * d];
        for s in 0..t {
            let (done, rest) = h.split_at_mut(s * d);
            let h_prev = (s > 0).then(|| &done[(s - 1) * d..]);
            self.step_into(
                h_prev,
                &xs[s * d_in..(s + 1) * d_in],
                &mut gates[s * 3 * d..(s + 1) * 3 * d],
                &mut rest[..d],
            );
        }
        LayerCache::Gru { gates, h }
    }

    fn backward_seq(
        &self,
        xs: &[f64],
        t: usize,
        cache: &LayerCache,
        dh: &[f64],
        grad: &mut ParaGruCell,
        dx: Option<&mut [f64]>,
    ) {
        let LayerCache::Gru { gates, h } = cache else {
            unreachable!("cache kind checked by caller")
        };
        let d = self.dim();
        let d_in = self.d_in();
        let zeros = vec![0.0; d];
        let mut carry = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut da_z = vec![0.0; d];
        let mut da_r = vec![0.0; d];
        let mut da_n = vec![0.0; d];
        let mut drh = vec![0.0; d];
        let mut rh = vec![0.0; d];
        let mut dx = dx;
        for s in (0..t).rev() {
            let grow = &gates[s * 3 * d..(s + 1) * 3 * d];
            let hp: &[f64] = if s > 0 { &h[(s - 1) * d..s * d] } else { &zeros };
            for j in 0..d {
                let (z, n) = (grow[j], grow[2 * d + j]);
                let dhj = dh[s * d + j] + carry[j];
                da_z[j] = dhj * (n - hp[j]) * z * (1.0 - z);
                da_n[j] = dhj * z * (1.0 - n * n);
                next[j] = dhj * (1.0 - z);
                rh[j] = grow[d + j] * hp[j];
            }
            let x = &xs[s * d_in..(s + 1) * d_in];
            let has_prev = s > 0;
            // Candidate gate: its recurrent input is r ⊙ h.
            drh.iter_mut().for_each(|v| *v = 0.0);
            {
                let dxs = dx.as_deref_mut().map(|v| &mut v[s * d_in..(s + 1) * d_in]);
                self.candidate.backprop(
                    &mut grad.candidate,
                    &da_n,
                    x,
                    has_prev.then_some(&rh[..]),
                    &mut drh,
                    dxs,
                );
            }
            for j in 0..d {
                let r = grow[d + j];
                da_r[j] = drh[j] * hp[j] * r * (1.0 - r);
                next[j] += drh[j] * r;
            }
            {
                let dxs = dx.as_deref_mut().map(|v| &mut v[s * d_in..(s + 1) * d_in]);
                self.update
                    .backprop(&mut grad.update, &da_z, x, has_prev.then_some(hp), &mut next, dxs);
            }
            {
                let dxs = dx.as_deref_mut().map(|v| &mut v[s * d_in..(s + 1) * d_in]);
                self.reset
                    .backprop(&mut grad.reset, &da_r, x, has_prev.then_some(hp), &mut next, dxs);
            }
            std::mem::swap(&mut carry, &mut next);
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Tensors<'a>) {
        for (g, tag) in self.gates().into_iter().zip(GRU_TAGS) {
            g.tensors(prefix, tag, out);
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorsMut<'a>) {
        for (g, tag) in self.gates_mut().into_iter().zip(GRU_TAGS) {
            g.tensors_mut(prefix, tag, out);
        }
    }
}

/// Per-layer forward intermediates for one sequence.
#[derive(Clone, Debug)]
pub(crate) enum LayerCache {
    Rnn {
        pre: Vec<f64>,
        h: Vec<f64>,
    },
    Lstm {
        gates: Vec<f64>,
        c: Vec<f64>,
        tc: Vec<f64>,
        h: Vec<f64>,
    },
    Gru {
        gates: Vec<f64>,
        h: Vec<f64>,
    },
}

impl LayerCache {
    pub(crate) fn hidden(&self) -> &[f64] {
        match self {
            Self::Rnn { h, .. } | Self::Lstm { h, .. } | Self::Gru { h, .. } => h,
        }
    }
}

/// Any of the three cell types.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Rnn(ParaRnnCell),
    Lstm(ParaLstmCell),
    Gru(ParaGruCell),
}

impl Cell {
    pub fn zeros(kind: CellKind, d: usize, block_size: usize, d_in: usize, activation: Activation) -> Result<Self> {
        Ok(match kind {
            CellKind::Rnn => Cell::Rnn(ParaRnnCell::zeros(d, block_size, d_in, activation)?),
            CellKind::Lstm => Cell::Lstm(ParaLstmCell::zeros(d, block_size, d_in)?),
            CellKind::Gru => Cell::Gru(ParaGruCell::zeros(d, block_size, d_in)?),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Cell::Rnn(_) => CellKind::Rnn,
            Cell::Lstm(_) => CellKind::Lstm,
            Cell::Gru(_) => CellKind::Gru,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Cell::Rnn(c) => c.dim(),
            Cell::Lstm(c) => c.dim(),
            Cell::Gru(c) => c.dim(),
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            Cell::Rnn(c) => c.d_in(),
            Cell::Lstm(c) => c.d_in(),
            Cell::Gru(c) => c.d_in(),
        }
    }

    pub fn block_size(&self) -> usize {
        self.recurrent_matrices()[0].1.block_size()
    }

    /// Activation of a vanilla cell; gated cells report `Tanh`.
    pub fn activation(&self) -> Activation {
        match self {
            Cell::Rnn(c) => c.activation,
            _ => Activation::Tanh,
        }
    }

    /// Every recurrent matrix with its conventional name.
    pub fn recurrent_matrices(&self) -> Vec<(&'static str, &BlockDiagonalMatrix)> {
        match self {
            Cell::Rnn(c) => vec![("w_h", &c.w_h)],
            Cell::Lstm(c) => vec![
                ("w_f", &c.forget.w),
                ("w_i", &c.input.w),
                ("w_o", &c.output.w),
                ("w_c", &c.candidate.w),
            ],
            Cell::Gru(c) => vec![("w_z", &c.update.w), ("w_r", &c.reset.w), ("w_n", &c.candidate.w)],
        }
    }

    pub(crate) fn forward_seq(&self, xs: &[f64], t: usize) -> Result<LayerCache> {
        check_seq("Cell::forward", xs, t, self.d_in())?;
        Ok(match self {
            Cell::Rnn(c) => c.forward_seq(xs, t),
            Cell::Lstm(c) => c.forward_seq(xs, t),
            Cell::Gru(c) => c.forward_seq(xs, t),
        })
    }

    /// Reverse pass through one sequence. `dh` is the loss gradient with
    /// respect to every hidden state; gradients are added into `grad` and,
    /// when requested, input gradients into `dx`.
    pub(crate) fn backward_seq(
        &self,
        xs: &[f64],
        t: usize,
        cache: &LayerCache,
        dh: &[f64],
        grad: &mut Cell,
        dx: Option<&mut [f64]>,
    ) -> Result<()> {
        match (self, cache, grad) {
            (Cell::Rnn(c), LayerCache::Rnn { .. }, Cell::Rnn(g)) => c.backward_seq(xs, t, cache, dh, g, dx),
            (Cell::Lstm(c), LayerCache::Lstm { .. }, Cell::Lstm(g)) => c.backward_seq(xs, t, cache, dh, g, dx),
            (Cell::Gru(c), LayerCache::Gru { .. }, Cell::Gru(g)) => c.backward_seq(xs, t, cache, dh, g, dx),
            _ => return Err(Error::StaleCache("cell kind does not match cache".into())),
        }
        Ok(())
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Tensors<'a>) {
        match self {
            Cell::Rnn(c) => c.tensors(prefix, out),
            Cell::Lstm(c) => c.tensors(prefix, out),
            Cell::Gru(c) => c.tensors(prefix, out),
        }
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorsMut<'a>) {
        match self {
            Cell::Rnn(c) => c.tensors_mut(prefix, out),
            Cell::Lstm(c) => c.tensors_mut(prefix, out),
            Cell::Gru(c) => c.tensors_mut(prefix, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cell(w_h: f64) -> ParaRnnCell {
        ParaRnnCell::new(
            BlockDiagonalMatrix::new(vec![Mat::from_diag(&[w_h])]).unwrap(),
            Mat::from_diag(&[1.0]),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn geometric_recursion() {
        let cell = scalar_cell(0.5);
        let mut h = vec![0.0];
        h = cell.step(&h, &[1.0]).unwrap();
        assert_eq!(h, vec![1.0]);
        h = cell.step(&h, &[1.0]).unwrap();
        h = cell.step(&h, &[1.0]).unwrap();
        assert_eq!(h, vec![1.75]);
    }

    #[test]
    fn rotation_impulse() {
        let cell = ParaRnnCell::new(
            BlockDiagonalMatrix::new(vec![Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap()]).unwrap(),
            Mat::identity(2),
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap();
        let h1 = cell.step(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let h2 = cell.step(&h1, &[0.0, 0.0]).unwrap();
        let h3 = cell.step(&h2, &[0.0, 0.0]).unwrap();
        assert_eq!(h1, vec![1.0, 0.0]);
        assert_eq!(h2, vec![0.0, -1.0]);
        assert_eq!(h3, vec![-1.0, 0.0]);
    }

    #[test]
    fn step_dimension_errors() {
        let cell = scalar_cell(0.5);
        assert!(cell.step(&[0.0, 0.0], &[1.0]).is_err());
        assert!(cell.step(&[0.0], &[1.0, 2.0]).is_err());
        assert!(ParaRnnCell::zeros(6, 4, 1, Activation::Tanh).is_err());
    }

    #[test]
    fn lstm_open_gates_accumulate_tanh_of_inputs() {
        let d = 2;
        let mut cell = ParaLstmCell::zeros(d, 1, d).unwrap();
        for g in [&mut cell.forget, &mut cell.input, &mut cell.output] {
            g.b = vec![50.0; d];
        }
        cell.candidate.u = Mat::identity(d);
        let xs = [[0.3, -0.7], [1.1, 0.2], [-0.4, 0.9]];
        let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
        let mut expected = vec![0.0; d];
        for x in xs {
            (h, c) = cell.step(&h, &c, &x).unwrap();
            for j in 0..d {
                expected[j] += x[j].tanh();
                assert!((c[j] - expected[j]).abs() < 1e-12);
                assert!((h[j] - expected[j].tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_closed_update_gate_carries_state() {
        let d = 3;
        let mut cell = ParaGruCell::zeros(d, 1, 1).unwrap();
        cell.update.b = vec![-50.0; d];
        cell.candidate.u = Mat::new(d, 1, vec![1.0, 2.0, 3.0]).unwrap();
        cell.candidate.w = BlockDiagonalMatrix::identity(d, 1);
        let h0 = vec![0.4, -0.2, 0.9];
        let mut h = h0.clone();
        for x in [1.0, -2.0, 0.5, 3.0] {
            h = cell.step(&h, &[x]).unwrap();
            for j in 0..d {
                assert!((h[j] - h0[j]).abs() < 1e-20);
            }
        }
    }
}
