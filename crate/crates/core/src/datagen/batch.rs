use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Whether targets belong to the last step only or to every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLayout {
    Last,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Full,
}

/// `n` sequences of length `t` with `d_in` inputs per step. Inputs are
/// stored as `[sample][step][feature]`; targets as `[sample][feature]` or
/// `[sample][step][feature]` depending on the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    n: usize,
    t: usize,
    d_in: usize,
    d_out: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    layout: TargetLayout,
    pub split: Split,
}

impl SequenceBatch {
    pub fn new(
        n: usize,
        t: usize,
        d_in: usize,
        d_out: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        layout: TargetLayout,
    ) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch needs at least one sequence and one step, got n={n} t={t}"
            )));
        }
        if inputs.len() != n * t * d_in {
            return Err(mismatch("SequenceBatch inputs", n * t * d_in, inputs.len()));
        }
        let tl = match layout {
            TargetLayout::Last => n * d_out,
            TargetLayout::Sequence => n * t * d_out,
        };
        if targets.len() != tl {
            return Err(mismatch("SequenceBatch targets", tl, targets.len()));
        }
        if !inputs.iter().chain(&targets).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("batch contains non-finite values".into()));
        }
        Ok(Self {
            n,
            t,
            d_in,
            d_out,
            inputs,
            targets,
            layout,
            split: Split::Full,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn layout(&self) -> TargetLayout {
        self.layout
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Inputs of sample `i`, `t * d_in` values.
    pub fn input(&self, i: usize) -> &[f64] {
        let len = self.t * self.d_in;
        &self.inputs[i * len..(i + 1) * len]
    }

    /// Targets of sample `i`.
    pub fn target(&self, i: usize) -> &[f64] {
        let len = self.target_len();
        &self.targets[i * len..(i + 1) * len]
    }

    pub fn target_len(&self) -> usize {
        match self.layout {
            TargetLayout::Last => self.d_out,
            TargetLayout::Sequence => self.t * self.d_out,
        }
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<SequenceBatch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.t * self.d_in);
        let mut targets = Vec::with_capacity(indices.len() * self.target_len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range {}",
                    self.n
                )));
            }
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        let mut b = SequenceBatch::new(
            indices.len(),
            self.t,
            self.d_in,
            self.d_out,
            inputs,
            targets,
            self.layout,
        )?;
        b.split = self.split;
        Ok(b)
    }

    /// Contiguous samples `start..end`.
    pub fn range(&self, start: usize, end: usize) -> Result<SequenceBatch> {
        let idx: Vec<usize> = (start..end).collect();
        self.subset(&idx)
    }

    /// Chronological split into train/val/test by sample order. Counts are
    /// `floor(n·train)`, `floor(n·val)` and the remainder.
    pub fn split_fractions(&self, train: f64, val: f64) -> Result<(SequenceBatch, SequenceBatch, SequenceBatch)> {
        if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive with train + val < 1; got {train}, {val}"
            )));
        }
        let n_train = (self.n as f64 * train).floor() as usize;
        let n_val = (self.n as f64 * val).floor() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= self.n {
            return Err(Error::InvalidArgument(format!(
                "{} samples are too few to split",
                self.n
            )));
        }
        let a = self.range(0, n_train)?.with_split(Split::Train);
        let b = self.range(n_train, n_train + n_val)?.with_split(Split::Val);
        let c = self.range(n_train + n_val, self.n)?.with_split(Split::Test);
        Ok((a, b, c))
    }

    /// Text dump: header `N T d_in d_out`, then per sample one line of
    /// inputs followed by one line of targets.
    pub fn to_dump(&self) -> String {
        let mut s = format!("{} {} {} {}\n", self.n, self.t, self.d_in, self.d_out);
        for i in 0..self.n {
            for part in [self.input(i), self.target(i)] {
                let line: Vec<String> = part.iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn from_dump(text: &str, layout: TargetLayout) -> Result<SequenceBatch> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty batch dump".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad dump header `{header}`: {e}")))?;
        let [n, t, d_in, d_out] = dims[..] else {
            return Err(Error::Parse(format!(
                "dump header must be `N T d_in d_out`, got `{header}`"
            )));
        };
        let parse = |line: Option<&str>| -> Result<Vec<f64>> {
            line.ok_or_else(|| Error::Parse("truncated batch dump".into()))?
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value `{tok}`: {e}")))
                })
                .collect()
        };
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            inputs.extend(parse(lines.next())?);
            targets.extend(parse(lines.next())?);
        }
        SequenceBatch::new(n, t, d_in, d_out, inputs, targets, layout)
    }
}
