//! Recurrence features of a recurrent matrix.
//!
//! A real eigenvalue cluster of size `n` is an `R-n` feature and a cluster
//! of conjugate pairs is a `C-n` feature with modulus `gamma` and angle
//! `theta` in `(0, π)`. Near-zero eigenvalues are counted as nullity.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{self, ComplexPair};
use crate::error::{Error, Result};
use crate::linalg::{BlockDiagonalMatrix, Mat, Rng};

pub const DEFAULT_TOL_ZERO: f64 = 1e-8;
pub const DEFAULT_TOL_CLUSTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    R,
    C,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RecurrenceFeature {
    R { order: usize, lambda: f64 },
    C { order: usize, gamma: f64, theta: f64 },
}

impl RecurrenceFeature {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Self::R { .. } => FeatureKind::R,
            Self::C { .. } => FeatureKind::C,
        }
    }

    pub fn order(&self) -> usize {
        match *self {
            Self::R { order, .. } | Self::C { order, .. } => order,
        }
    }

    pub fn feature_type(&self) -> FeatureType {
        FeatureType {
            kind: self.kind(),
            order: self.order(),
        }
    }

    /// Dimensions of the state space this feature occupies.
    pub fn dimension(&self) -> usize {
        match self {
            Self::R { order, .. } => *order,
            Self::C { order, .. } => 2 * order,
        }
    }
}

/// `(kind, order)`, displayed as `R-1`, `C-2`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureType {
    pub kind: FeatureKind,
    pub order: usize,
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            FeatureKind::R => 'R',
            FeatureKind::C => 'C',
        };
        write!(f, "{k}-{}", self.order)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub features: Vec<RecurrenceFeature>,
    pub nullity: usize,
    pub dim: usize,
}

impl FeatureReport {
    /// `Σ order(R) + 2 Σ order(C) + nullity`; equals `dim` for a valid report.
    pub fn accounted_dim(&self) -> usize {
        self.features.iter().map(RecurrenceFeature::dimension).sum::<usize>() + self.nullity
    }

    pub fn type_counts(&self) -> BTreeMap<FeatureType, usize> {
        let mut m = BTreeMap::new();
        for f in &self.features {
            *m.entry(f.feature_type()).or_insert(0) += 1;
        }
        m
    }

    /// Fraction of features with order one; 1 when there are no features.
    pub fn order_one_fraction(&self) -> f64 {
        if self.features.is_empty() {
            return 1.0;
        }
        let n = self.features.iter().filter(|f| f.order() == 1).count();
        n as f64 / self.features.len() as f64
    }

    /// Fraction of features of kind R; 1 when there are no features.
    pub fn real_fraction(&self) -> f64 {
        if self.features.is_empty() {
            return 1.0;
        }
        let n = self.features.iter().filter(|f| f.kind() == FeatureKind::R).count();
        n as f64 / self.features.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per feature, parameters to 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "dim {} nullity {} features {}\n",
            self.dim,
            self.nullity,
            self.features.len()
        );
        for f in &self.features {
            match f {
                RecurrenceFeature::R { order, lambda } => {
                    s.push_str(&format!("R-{order} lambda={lambda:.11e}\n"));
                }
                RecurrenceFeature::C { order, gamma, theta } => {
                    s.push_str(&format!("C-{order} gamma={gamma:.11e} theta={theta:.11e}\n"));
                }
            }
        }
        s
    }

    fn concat(reports: Vec<FeatureReport>) -> FeatureReport {
        let mut out = FeatureReport {
            features: Vec::new(),
            nullity: 0,
            dim: 0,
        };
        for r in reports {
            out.features.extend(r.features);
            out.nullity += r.nullity;
            out.dim += r.dim;
        }
        out
    }
}

/// Thresholds relative to the Frobenius norm of the classified matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyOptions {
    pub tol_zero: f64,
    /// Single-linkage distance below which eigenvalues merge. Zero never
    /// merges anything.
    pub tol_cluster: f64,
}

impl ClassifyOptions {
    /// No clustering: every eigenvalue is its own feature.
    pub fn strict() -> Self {
        Self {
            tol_zero: DEFAULT_TOL_ZERO,
            tol_cluster: 0.0,
        }
    }

    pub fn clustered() -> Self {
        Self {
            tol_zero: DEFAULT_TOL_ZERO,
            tol_cluster: DEFAULT_TOL_CLUSTER,
        }
    }
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self::clustered()
    }
}

/// Classifies a dense square matrix.
pub fn classify_features(w: &Mat, opts: ClassifyOptions) -> Result<FeatureReport> {
    let norm = w.frobenius_norm();
    let eigs = eigen::eigenvalues(w, opts.tol_zero)?;
    Ok(classify_eigenvalues(&eigs, w.rows(), norm, opts))
}

/// Classifies each block with its own norm and concatenates the reports.
pub fn classify_block_diagonal(w: &BlockDiagonalMatrix, opts: ClassifyOptions) -> Result<FeatureReport> {
    let reports = w
        .blocks()
        .iter()
        .map(|b| classify_features(b, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureReport::concat(reports))
}

/// Builds a report from eigenvalues already computed for a matrix of
/// dimension `dim` and Frobenius norm `norm`.
pub fn classify_eigenvalues(eigs: &[ComplexPair], dim: usize, norm: f64, opts: ClassifyOptions) -> FeatureReport {
    let zero = opts.tol_zero * norm;
    let link = opts.tol_cluster * norm;
    let mut nullity = 0;
    // Full multiset, conjugates included, in solver order.
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for e in eigs {
        if e.modulus() <= zero {
            nullity += e.multiplicity();
            continue;
        }
        pts.push((e.re, e.im));
        if !e.is_real() {
            pts.push((e.re, -e.im));
        }
    }

    let n = pts.len();
    let mut label: Vec<usize> = (0..n).collect();
    if link > 0.0 {
        // Single linkage via union-find.
        fn find(l: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while l[r] != r {
                r = l[r];
            }
            let mut c = i;
            while l[c] != r {
                let nx = l[c];
                l[c] = r;
                c = nx;
            }
            r
        }
        for i in 0..n {
            for j in i + 1..n {
                if (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1) < link {
                    let (a, b) = (find(&mut label, i), find(&mut label, j));
                    if a != b {
                        label[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        for i in 0..n {
            label[i] = find(&mut label, i);
        }
    }

    let mut features = Vec::new();
    let mut seen = vec![false; n];
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let members: Vec<usize> = (i..n).filter(|&j| label[j] == label[i]).collect();
        for &j in &members {
            seen[j] = true;
        }
        let all_upper = members.iter().all(|&j| pts[j].1 > 0.0);
        let all_lower = members.iter().all(|&j| pts[j].1 < 0.0);
        let size = members.len();
        if all_lower {
            continue;
        }
        if all_upper {
            let gamma = members.iter().map(|&j| pts[j].0.hypot(pts[j].1)).sum::<f64>() / size as f64;
            let theta = members.iter().map(|&j| pts[j].1.atan2(pts[j].0)).sum::<f64>() / size as f64;
            features.push(RecurrenceFeature::C {
                order: size,
                gamma,
                theta,
            });
        } else {
            // Self-conjugate cluster: its mean is real.
            let lambda = members.iter().map(|&j| pts[j].0).sum::<f64>() / size as f64;
            features.push(RecurrenceFeature::R { order: size, lambda });
        }
    }
    FeatureReport { features, nullity, dim }
}

/// Entry distribution for the Monte-Carlo studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomMatrix {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// `(m + mᵀ) / 2` of a Gaussian `m`.
    Symmetric,
}

fn draw_matrix(d: usize, kind: RandomMatrix, rng: &mut Rng) -> Mat {
    let m = Mat::new(d, d, rng.gaussian_vec(0.0, 1.0, d * d).expect("valid std")).expect("shape");
    match kind {
        RandomMatrix::Gaussian => m,
        RandomMatrix::Symmetric => m.add(&m.transpose()).expect("square").scale(0.5),
    }
}

fn check_mc(d: usize, trials: usize) -> Result<()> {
    if d < 2 || trials == 0 {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo study needs d >= 2 and trials >= 1, got d={d} trials={trials}"
        )));
    }
    Ok(())
}

/// Fraction of Gaussian `d x d` matrices whose eigenvalues are all real,
/// i.e. every imaginary part is below `tol_zero * ‖m‖_F`. Trial `i` draws
/// from `rng.fork(i)`, so the result does not depend on scheduling.
pub fn real_eigen_fraction_mc(d: usize, trials: usize, rng: &Rng, tol_zero: f64) -> Result<f64> {
    check_mc(d, trials)?;
    let hits = (0..trials)
        .into_par_iter()
        .map(|i| {
            let m = draw_matrix(d, RandomMatrix::Gaussian, &mut rng.fork(i as u64));
            let e = eigen::eigenvalues(&m, tol_zero)?;
            Ok(usize::from(e.iter().all(ComplexPair::is_real)))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / trials as f64)
}

/// Per feature type, the fraction of trials whose report contains at least
/// one feature of that type.
pub fn feature_type_prevalence_mc(
    d: usize,
    trials: usize,
    rng: &Rng,
    kind: RandomMatrix,
    opts: ClassifyOptions,
) -> Result<BTreeMap<FeatureType, f64>> {
    check_mc(d, trials)?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|i| {
            let m = draw_matrix(d, kind, &mut rng.fork(i as u64));
            Ok(classify_features(&m, opts)?.type_counts())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hits: BTreeMap<FeatureType, usize> = BTreeMap::new();
    for counts in per_trial {
        for t in counts.keys() {
            *hits.entry(*t).or_insert(0) += 1;
        }
    }
    Ok(hits.into_iter().map(|(t, c)| (t, c as f64 / trials as f64)).collect())
}

/// Minimum, quartiles and maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl FiveNumber {
    /// Linear-interpolation percentiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub snapshot_index: usize,
    /// Keyed by feature type name such as `R-1`.
    pub counts: BTreeMap<String, usize>,
    pub gamma_percentiles: Option<FiveNumber>,
    pub theta_percentiles: Option<FiveNumber>,
    pub nullity: usize,
    pub dim: usize,
}

impl FeatureHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Share of features whose name starts with `prefix` (`"R"`, `"C"`, ...).
    pub fn share(&self, prefix: &str) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let n: usize = self
            .counts
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, c)| c)
            .sum();
        n as f64 / total as f64
    }
}

/// One histogram per report; the snapshot index is the position in the list.
pub fn snapshot_histogram(reports: &[FeatureReport]) -> Result<Vec<FeatureHistogram>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument(
            "snapshot_histogram needs at least one report".into(),
        ));
    }
    Ok(reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let counts = r.type_counts().into_iter().map(|(t, c)| (t.to_string(), c)).collect();
            let (gammas, thetas): (Vec<f64>, Vec<f64>) = r
                .features
                .iter()
                .filter_map(|f| match *f {
                    RecurrenceFeature::C { gamma, theta, .. } => Some((gamma, theta)),
                    RecurrenceFeature::R { .. } => None,
                })
                .unzip();
            FeatureHistogram {
                snapshot_index: i,
                counts,
                gamma_percentiles: FiveNumber::of(&gammas),
                theta_percentiles: FiveNumber::of(&thetas),
                nullity: r.nullity,
                dim: r.dim,
            }
        })
        .collect())
}
