//! Stacked cells, the position-wise aggregator and the output head.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::SequenceBatch;
use crate::error::{mismatch, Error, Result};
use crate::linalg::Mat;
use crate::net::activation::Activation;
use crate::net::cell::{
    push_mat, push_mat_mut, push_vec, push_vec_mut, Cell, CellKind, LayerCache, Tensors, TensorsMut,
};

/// Sequences per gradient chunk. Fixed so the reduction order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Output only at the last step.
    SeqToOne,
    /// Output at every step.
    SeqToSeq,
}

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn new(w: Mat, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(mismatch("Linear::new", w.rows(), b.len()));
        }
        Ok(Self { w, b })
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Mat::zeros(out, inp),
            b: vec![0.0; out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        self.w.matvec_add_into(x, out);
    }

    /// Accumulates parameter gradients and adds `Wᵀ dy` into `dx`.
    #[inline]
    fn backprop(&self, grad: &mut Linear, x: &[f64], dy: &[f64], dx: &mut [f64]) {
        for (g, v) in grad.b.iter_mut().zip(dy) {
            *g += v;
        }
        grad.w.add_outer(1.0, dy, x);
        self.w.matvec_t_add_into(dy, dx);
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Tensors<'a>) {
        push_mat(out, format!("{prefix}w"), &self.w);
        push_vec(out, format!("{prefix}b"), &self.b);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorsMut<'a>) {
        push_mat_mut(out, format!("{prefix}w"), &mut self.w);
        push_vec_mut(out, format!("{prefix}b"), &mut self.b);
    }
}

/// Position-wise map applied to the concatenated block states of the last
/// layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregator {
    Identity,
    Linear(Linear),
    /// `out(ReLU(hidden(h)))`.
    FeedForward {
        hidden: Linear,
        out: Linear,
    },
}

impl Aggregator {
    fn out_dim(&self, d: usize) -> usize {
        match self {
            Aggregator::Identity => d,
            Aggregator::Linear(l) => l.out_dim(),
            Aggregator::FeedForward { out, .. } => out.out_dim(),
        }
    }

    fn spec(&self) -> AggregatorSpec {
        match self {
            Aggregator::Identity => AggregatorSpec::Identity,
            Aggregator::Linear(l) => AggregatorSpec::Linear { out: l.out_dim() },
            Aggregator::FeedForward { hidden, out } => AggregatorSpec::FeedForward {
                inner: hidden.out_dim(),
                out: out.out_dim(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorSpec {
    Identity,
    Linear { out: usize },
    FeedForward { inner: usize, out: usize },
}

/// Shape description of a [`DeepModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub cell: CellKind,
    pub d_in: usize,
    pub hidden: usize,
    pub block_size: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "tanh")]
    pub activation: Activation,
    #[serde(default = "identity_agg")]
    pub aggregator: AggregatorSpec,
    /// Output size of the linear head, if any.
    #[serde(default)]
    pub head: Option<usize>,
    /// Project inputs to `hidden` dimensions before the first layer.
    #[serde(default)]
    pub input_projection: bool,
    #[serde(default = "seq_to_one")]
    pub mode: OutputMode,
}

fn one() -> usize {
    1
}

fn tanh() -> Activation {
    Activation::Tanh
}

fn identity_agg() -> AggregatorSpec {
    AggregatorSpec::Identity
}

fn seq_to_one() -> OutputMode {
    OutputMode::SeqToOne
}

impl Architecture {
    /// One vanilla layer with identity aggregation and no head.
    pub fn rnn(d_in: usize, hidden: usize, block_size: usize, activation: Activation) -> Self {
        Self {
            cell: CellKind::Rnn,
            d_in,
            hidden,
            block_size,
            layers: 1,
            activation,
            aggregator: AggregatorSpec::Identity,
            head: None,
            input_projection: false,
            mode: OutputMode::SeqToOne,
        }
    }

    pub fn output_dim(&self) -> usize {
        if let Some(h) = self.head {
            return h;
        }
        match self.aggregator {
            AggregatorSpec::Identity => self.hidden,
            AggregatorSpec::Linear { out } | AggregatorSpec::FeedForward { out, .. } => out,
        }
    }
}

/// Layers consume the full hidden state of the layer below at the same
/// step; the aggregator runs once after the last layer; hidden states start
/// at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepModel {
    pub input_proj: Option<Mat>,
    pub layers: Vec<Cell>,
    pub aggregator: Aggregator,
    pub head: Option<Linear>,
    pub mode: OutputMode,
}

/// Forward intermediates for one sequence.
#[derive(Clone, Debug)]
struct SeqCache {
    projected: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    /// Aggregator inner pre-activations (feed-forward only), per position.
    agg_hidden: Vec<f64>,
    /// Aggregator outputs per position; empty when there is no head.
    agg_out: Vec<f64>,
}

/// State-gradient buffers reused across the sequences of one gradient
/// chunk. They are large enough that allocating them per sequence shows up
/// in the timings.
#[derive(Default)]
struct Scratch {
    dh: Vec<f64>,
    dx: Vec<f64>,
}

/// Everything `backward` needs from a `forward` call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    arch: Architecture,
    t: usize,
    inputs: Vec<f64>,
    seqs: Vec<SeqCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.seqs.len()
    }

    pub fn seq_len(&self) -> usize {
        self.t
    }

    /// Hidden states of layer `l` for sample `i`, `t * d` values.
    pub fn hidden(&self, l: usize, i: usize) -> &[f64] {
        self.seqs[i].layers[l].hidden()
    }

    /// Pre-activation states of vanilla layer `l` for sample `i`.
    pub fn preactivations(&self, l: usize, i: usize) -> Option<&[f64]> {
        match &self.seqs[i].layers[l] {
            LayerCache::Rnn { pre, .. } => Some(pre),
            _ => None,
        }
    }

    /// Inner pre-activations of a feed-forward aggregator for sample `i`.
    pub fn aggregator_preactivations(&self, i: usize) -> &[f64] {
        &self.seqs[i].agg_hidden
    }
}

/// Loss gradient with the same named tensors as the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    inner: DeepModel,
}

impl Gradients {
    pub fn zeros_like(model: &DeepModel) -> Self {
        let mut inner = model.clone();
        for (_, _, _, v) in inner.tensors_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        Self { inner }
    }

    pub fn as_model(&self) -> &DeepModel {
        &self.inner
    }

    pub fn tensors(&self) -> Tensors<'_> {
        self.inner.tensors()
    }

    pub fn get(&self, name: &str) -> Option<Vec<f64>> {
        self.inner
            .tensors()
            .into_iter()
            .find(|(n, ..)| n == name)
            .map(|(.., v)| v.to_vec())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.inner.params_flat()
    }

    pub fn global_norm(&self) -> f64 {
        self.inner
            .tensors()
            .iter()
            .flat_map(|(.., v)| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for (.., v) in self.inner.tensors_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((.., a), (.., b)) in self.inner.tensors_mut().into_iter().zip(other.inner.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Zeroes every tensor whose name starts with one of `prefixes`.
    pub fn zero_frozen(&mut self, prefixes: &[String]) {
        for (name, _, _, v) in self.inner.tensors_mut() {
            if prefixes.iter().any(|p| name.starts_with(p.as_str())) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.inner
            .tensors()
            .into_iter()
            .find(|(.., v)| v.iter().any(|x| !x.is_finite()))
            .map(|(n, ..)| n)
    }
}

impl DeepModel {
    /// All-zero parameters with the given shape.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        if arch.layers == 0 {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let d = arch.hidden;
        let first_in = if arch.input_projection { d } else { arch.d_in };
        let mut layers = Vec::with_capacity(arch.layers);
        for l in 0..arch.layers {
            let inp = if l == 0 { first_in } else { d };
            layers.push(Cell::zeros(arch.cell, d, arch.block_size, inp, arch.activation)?);
        }
        let aggregator = match arch.aggregator {
            AggregatorSpec::Identity => Aggregator::Identity,
            AggregatorSpec::Linear { out } => Aggregator::Linear(Linear::zeros(out, d)),
            AggregatorSpec::FeedForward { inner, out } => Aggregator::FeedForward {
                hidden: Linear::zeros(inner, d),
                out: Linear::zeros(out, inner),
            },
        };
        let agg_out = aggregator.out_dim(d);
        Ok(Self {
            input_proj: arch.input_projection.then(|| Mat::zeros(d, arch.d_in)),
            layers,
            aggregator,
            head: arch.head.map(|o| Linear::zeros(o, agg_out)),
            mode: arch.mode,
        })
    }

    /// Single-layer model around `cell` with the given aggregator.
    pub fn from_cell(cell: Cell, aggregator: Aggregator, mode: OutputMode) -> Result<Self> {
        let m = Self {
            input_proj: None,
            layers: vec![cell],
            aggregator,
            head: None,
            mode,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn architecture(&self) -> Architecture {
        let first = &self.layers[0];
        Architecture {
            cell: first.kind(),
            d_in: self.d_in(),
            hidden: first.dim(),
            block_size: first.block_size(),
            layers: self.layers.len(),
            activation: first.activation(),
            aggregator: self.aggregator.spec(),
            head: self.head.as_ref().map(Linear::out_dim),
            input_projection: self.input_proj.is_some(),
            mode: self.mode,
        }
    }

    /// Checks that every component agrees with [`Self::architecture`].
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let reference = DeepModel::zeros(&self.architecture())?;
        let a = self.tensors();
        let b = reference.tensors();
        if a.len() != b.len() {
            return Err(mismatch("DeepModel::validate", b.len(), a.len()));
        }
        for ((na, ra, ca, _), (nb, rb, cb, _)) in a.iter().zip(&b) {
            if na != nb || ra != rb || ca != cb {
                return Err(mismatch(
                    "DeepModel::validate",
                    format!("{nb} {rb}x{cb}"),
                    format!("{na} {ra}x{ca}"),
                ));
            }
        }
        let kinds_ok = self.layers.iter().all(|c| c.kind() == self.layers[0].kind());
        if !kinds_ok {
            return Err(Error::InvalidArgument("all layers must use the same cell type".into()));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        match &self.input_proj {
            Some(p) => p.cols(),
            None => self.layers[0].d_in(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().expect("non-empty").dim()
    }

    pub fn output_dim(&self) -> usize {
        match &self.head {
            Some(h) => h.out_dim(),
            None => self.aggregator.out_dim(self.hidden()),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Tensors<'_> {
        let mut out = Vec::new();
        if let Some(p) = &self.input_proj {
            push_mat(&mut out, "input.w".into(), p);
        }
        for (l, c) in self.layers.iter().enumerate() {
            c.tensors(&format!("layer{l}."), &mut out);
        }
        match &self.aggregator {
            Aggregator::Identity => {}
            Aggregator::Linear(lin) => lin.tensors("agg.", &mut out),
            Aggregator::FeedForward { hidden, out: o } => {
                hidden.tensors("agg.hidden.", &mut out);
                o.tensors("agg.out.", &mut out);
            }
        }
        if let Some(h) = &self.head {
            h.tensors("head.", &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> TensorsMut<'_> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.input_proj {
            push_mat_mut(&mut out, "input.w".into(), p);
        }
        for (l, c) in self.layers.iter_mut().enumerate() {
            c.tensors_mut(&format!("layer{l}."), &mut out);
        }
        match &mut self.aggregator {
            Aggregator::Identity => {}
            Aggregator::Linear(lin) => lin.tensors_mut("agg.", &mut out),
            Aggregator::FeedForward { hidden, out: o } => {
                hidden.tensors_mut("agg.hidden.", &mut out);
                o.tensors_mut("agg.out.", &mut out);
            }
        }
        if let Some(h) = &mut self.head {
            h.tensors_mut("head.", &mut out);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(.., v)| v.len()).sum()
    }

    /// Name and flat range of each tensor in [`Self::params_flat`].
    pub fn param_layout(&self) -> Vec<(String, Range<usize>)> {
        let mut off = 0;
        self.tensors()
            .into_iter()
            .map(|(n, .., v)| {
                let r = off..off + v.len();
                off += v.len();
                (n, r)
            })
            .collect()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (.., v) in self.tensors() {
            out.extend_from_slice(v);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(mismatch("set_params_flat", n, flat.len()));
        }
        let mut off = 0;
        for (.., v) in self.tensors_mut() {
            v.copy_from_slice(&flat[off..off + v.len()]);
            off += v.len();
        }
        Ok(())
    }

    fn positions(&self, t: usize) -> Range<usize> {
        match self.mode {
            OutputMode::SeqToOne => t - 1..t,
            OutputMode::SeqToSeq => 0..t,
        }
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.d_in() != self.d_in() {
            return Err(mismatch("DeepModel::forward input dim", self.d_in(), batch.d_in()));
        }
        Ok(())
    }

    /// Runs one sequence, writing its outputs into `y`.
    fn forward_one(&self, x: &[f64], t: usize, y: &mut [f64]) -> Result<SeqCache> {
        let d = self.hidden();
        let projected = self.input_proj.as_ref().map(|p| {
            let d_in = p.cols();
            let mut out = vec![0.0; t * p.rows()];
            for s in 0..t {
                p.matvec_add_into(&x[s * d_in..(s + 1) * d_in], &mut out[s * p.rows()..(s + 1) * p.rows()]);
            }
            out
        });
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for (l, cell) in self.layers.iter().enumerate() {
            let inp: &[f64] = if l == 0 {
                projected.as_deref().unwrap_or(x)
            } else {
                layers[l - 1].hidden()
            };
            let c = cell.forward_seq(inp, t)?;
            layers.push(c);
        }
        let top = layers.last().expect("non-empty").hidden();
        let pos = self.positions(t);
        let agg_dim = self.aggregator.out_dim(d);
        // Without a head the aggregator writes the outputs directly and its
        // result is not needed again in the backward pass.
        let mut agg_out = match self.head {
            Some(_) => vec![0.0; pos.len() * agg_dim],
            None => Vec::new(),
        };
        let mut agg_hidden = Vec::new();
        if let Aggregator::FeedForward { hidden, .. } = &self.aggregator {
            agg_hidden = vec![0.0; pos.len() * hidden.out_dim()];
        }
        {
            let agg_target: &mut [f64] = if self.head.is_some() { &mut agg_out } else { &mut *y };
            for (pi, s) in pos.clone().enumerate() {
                let h = &top[s * d..(s + 1) * d];
                let out = &mut agg_target[pi * agg_dim..(pi + 1) * agg_dim];
                match &self.aggregator {
                    Aggregator::Identity => out.copy_from_slice(h),
                    Aggregator::Linear(lin) => lin.apply_into(h, out),
                    Aggregator::FeedForward { hidden, out: o } => {
                        let inner = hidden.out_dim();
                        let pre = &mut agg_hidden[pi * inner..(pi + 1) * inner];
                        hidden.apply_into(h, pre);
                        let act: Vec<f64> = pre.iter().map(|&v| Activation::Relu.apply(v)).collect();
                        o.apply_into(&act, out);
                    }
                }
            }
        }
        if let Some(head) = &self.head {
            let od = head.out_dim();
            for pi in 0..pos.len() {
                head.apply_into(
                    &agg_out[pi * agg_dim..(pi + 1) * agg_dim],
                    &mut y[pi * od..(pi + 1) * od],
                );
            }
        }
        Ok(SeqCache {
            projected,
            layers,
            agg_hidden,
            agg_out,
        })
    }

    /// Output values per sequence.
    fn output_len(&self, t: usize) -> usize {
        self.positions(t).len() * self.output_dim()
    }

    /// Runs every sequence of `batch`. Outputs are laid out as
    /// `[sample][feature]` or `[sample][step][feature]` by output mode.
    pub fn forward(&self, batch: &SequenceBatch) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_batch(batch)?;
        let t = batch.t();
        let per = self.output_len(t);
        let mut outputs = vec![0.0; batch.n() * per];
        let seqs: Vec<SeqCache> = outputs
            .par_chunks_mut(per)
            .enumerate()
            .map(|(i, y)| self.forward_one(batch.input(i), t, y))
            .collect::<Result<_>>()?;
        Ok((
            outputs,
            ForwardCache {
                arch: self.architecture(),
                t,
                inputs: batch.inputs().to_vec(),
                seqs,
            },
        ))
    }

    /// Outputs without keeping intermediates.
    pub fn predict(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let t = batch.t();
        let per = self.output_len(t);
        let mut outputs = vec![0.0; batch.n() * per];
        outputs
            .par_chunks_mut(per)
            .enumerate()
            .try_for_each(|(i, y)| self.forward_one(batch.input(i), t, y).map(drop))?;
        Ok(outputs)
    }

    /// Last-layer hidden states, `[sample][step][unit]`.
    pub fn hidden_states(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let t = batch.t();
        let hs: Vec<Vec<f64>> = (0..batch.n())
            .into_par_iter()
            .map(|i| {
                let mut y = vec![0.0; self.output_len(t)];
                self.forward_one(batch.input(i), t, &mut y)
                    .map(|c| c.layers.last().expect("non-empty").hidden().to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(hs.concat())
    }

    fn backward_one(
        &self,
        x: &[f64],
        t: usize,
        cache: &SeqCache,
        dy: &[f64],
        grad: &mut DeepModel,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let Scratch { dh, dx } = scratch;
        let d = self.hidden();
        let pos = self.positions(t);
        let agg_dim = self.aggregator.out_dim(d);
        dh.clear();
        dh.resize(t * d, 0.0);
        let mut d_agg = vec![0.0; agg_dim];
        let top = cache.layers.last().expect("non-empty").hidden();
        for (pi, s) in pos.enumerate() {
            match (&self.head, &mut grad.head) {
                (Some(head), Some(gh)) => {
                    let od = head.out_dim();
                    d_agg.iter_mut().for_each(|v| *v = 0.0);
                    head.backprop(
                        gh,
                        &cache.agg_out[pi * agg_dim..(pi + 1) * agg_dim],
                        &dy[pi * od..(pi + 1) * od],
                        &mut d_agg,
                    );
                }
                _ => d_agg.copy_from_slice(&dy[pi * agg_dim..(pi + 1) * agg_dim]),
            }
            let h = &top[s * d..(s + 1) * d];
            let dhs = &mut dh[s * d..(s + 1) * d];
            match (&self.aggregator, &mut grad.aggregator) {
                (Aggregator::Identity, _) => {
                    for (a, b) in dhs.iter_mut().zip(&d_agg) {
                        *a += b;
                    }
                }
                (Aggregator::Linear(lin), Aggregator::Linear(gl)) => lin.backprop(gl, h, &d_agg, dhs),
                (Aggregator::FeedForward { hidden, out }, Aggregator::FeedForward { hidden: gh, out: go }) => {
                    let inner = hidden.out_dim();
                    let pre = &cache.agg_hidden[pi * inner..(pi + 1) * inner];
                    let act: Vec<f64> = pre.iter().map(|&v| Activation::Relu.apply(v)).collect();
                    let mut d_act = vec![0.0; inner];
                    out.backprop(go, &act, &d_agg, &mut d_act);
                    for (g, &p) in d_act.iter_mut().zip(pre) {
                        *g *= Activation::Relu.derivative(p, 0.0);
                    }
                    hidden.backprop(gh, h, &d_act, dhs);
                }
                _ => return Err(Error::StaleCache("aggregator kind mismatch".into())),
            }
        }
        for l in (0..self.layers.len()).rev() {
            let inp: &[f64] = if l == 0 {
                cache.projected.as_deref().unwrap_or(x)
            } else {
                cache.layers[l - 1].hidden()
            };
            let need_dx = l > 0 || self.input_proj.is_some();
            dx.clear();
            if need_dx {
                dx.resize(inp.len(), 0.0);
            }
            self.layers[l].backward_seq(
                inp,
                t,
                &cache.layers[l],
                dh,
                &mut grad.layers[l],
                need_dx.then_some(&mut dx[..]),
            )?;
            std::mem::swap(dh, dx);
        }
        if let (Some(p), Some(gp)) = (&self.input_proj, &mut grad.input_proj) {
            let (rows, d_in) = (p.rows(), p.cols());
            for s in 0..t {
                gp.add_outer(1.0, &dh[s * rows..(s + 1) * rows], &x[s * d_in..(s + 1) * d_in]);
            }
        }
        Ok(())
    }

    /// Exact gradient of a scalar loss given its gradient with respect to
    /// the outputs of the matching [`Self::forward`] call. Samples are
    /// reduced in fixed chunks, in order.
    pub fn backward(&self, cache: &ForwardCache, d_outputs: &[f64]) -> Result<Gradients> {
        if cache.arch != self.architecture() {
            return Err(Error::StaleCache(
                "architecture differs from the cached forward pass".into(),
            ));
        }
        let t = cache.t;
        let per = self.positions(t).len() * self.output_dim();
        let n = cache.seqs.len();
        if d_outputs.len() != n * per {
            return Err(mismatch(
                "DeepModel::backward output gradient",
                n * per,
                d_outputs.len(),
            ));
        }
        let d_in = self.d_in();
        let chunks: Vec<Gradients> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = Gradients::zeros_like(self);
                let mut scratch = Scratch::default();
                for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
                    let x = &cache.inputs[i * t * d_in..(i + 1) * t * d_in];
                    let dy = &d_outputs[i * per..(i + 1) * per];
                    self.backward_one(x, t, &cache.seqs[i], dy, &mut g.inner, &mut scratch)?;
                }
                Ok(g)
            })
            .collect::<Result<_>>()?;
        let mut it = chunks.into_iter();
        let mut total = it.next().unwrap_or_else(|| Gradients::zeros_like(self));
        for g in it {
            total.add_assign(&g);
        }
        Ok(total)
    }

    /// Per-block additive split of a linear aggregator:
    /// `agg(h_t) = Σ_k W_f[:, block k] h_t^(k) + b_f`.
    /// Returns one `[sample][step][feature]` sequence per block.
    pub fn additive_decompose(&self, batch: &SequenceBatch) -> Result<Vec<Vec<f64>>> {
        let Aggregator::Linear(lin) = &self.aggregator else {
            return Err(Error::InvalidArgument(
                "additive decomposition needs a linear aggregator".into(),
            ));
        };
        let top = self.layers.last().expect("non-empty");
        let (d, ds) = (top.dim(), top.block_size());
        let k_blocks = d / ds;
        let od = lin.out_dim();
        let hs = self.hidden_states(batch)?;
        let steps = batch.n() * batch.t();
        let mut out = vec![vec![0.0; steps * od]; k_blocks];
        for (k, contrib) in out.iter_mut().enumerate() {
            for s in 0..steps {
                let h = &hs[s * d + k * ds..s * d + (k + 1) * ds];
                for r in 0..od {
                    let row = &lin.w.row(r)[k * ds..(k + 1) * ds];
                    contrib[s * od + r] = row.iter().zip(h).map(|(a, b)| a * b).sum();
                }
            }
        }
        Ok(out)
    }
}
