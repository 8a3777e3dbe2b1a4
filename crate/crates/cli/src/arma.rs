//! Checks the ARMA-to-linear-RNN mapping against its two oracles.

use std::path::Path;

use anyhow::{bail, Result};
use pararnn::bridge::{check_arma_equivalence, ArmaCheck, ArmaSpec};
use pararnn::linalg::Rng;
use serde::Serialize;

use crate::config::{prepare_out, write_json, ArmaCheckConfig};
use crate::Outcome;

#[derive(Clone, Debug, Serialize)]
pub struct ArmaCase {
    pub spec: ArmaSpec,
    pub random: bool,
    pub check: ArmaCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmaOutput {
    pub cases: Vec<ArmaCase>,
    pub passed: usize,
    pub failed: usize,
}

/// Listed specs first, then the random ones. Each case runs on its own
/// Gaussian series drawn from `rng.fork(case)`.
pub fn run_checks(cfg: &ArmaCheckConfig) -> Result<ArmaOutput> {
    let steps = ((cfg.steps as f64 * cfg.scale).round() as usize).max(1);
    let rng = Rng::new(cfg.seed);
    let mut specs: Vec<(ArmaSpec, bool)> = cfg.specs.iter().map(|s| (s.clone(), false)).collect();
    if let Some(r) = &cfg.random {
        if r.dims.is_empty() && r.count > 0 {
            bail!("random ARMA specs need at least one dimension");
        }
        let mut spec_rng = rng.fork(u64::MAX);
        for i in 0..r.count {
            let d = r.dims[i % r.dims.len()];
            specs.push((ArmaSpec::random(d, r.max_radius, &mut spec_rng)?, true));
        }
    }
    let mut cases = Vec::with_capacity(specs.len());
    for (i, (spec, random)) in specs.into_iter().enumerate() {
        let ys = rng.fork(i as u64).gaussian_vec(0.0, 1.0, steps * spec.dim())?;
        let check = check_arma_equivalence(&spec, &ys, cfg.tolerance)?;
        cases.push(ArmaCase { spec, random, check });
    }
    let passed = cases.iter().filter(|c| c.check.passed).count();
    Ok(ArmaOutput {
        failed: cases.len() - passed,
        passed,
        cases,
    })
}

pub fn run(cfg: &ArmaCheckConfig, out: &Path) -> Result<(Outcome, ArmaOutput)> {
    prepare_out(out, cfg)?;
    let output = run_checks(cfg)?;
    write_json(&out.join("arma_check.json"), &output)?;
    let worst = output
        .cases
        .iter()
        .map(|c| c.check.max_err_ar_infinity.max(c.check.max_err_recursion))
        .fold(0.0f64, f64::max);
    let summary = format!(
        "{} of {} specs match both oracles (worst relative error {worst:.3e}, tolerance {:.1e})",
        output.passed,
        output.cases.len(),
        cfg.tolerance
    );
    Ok((
        Outcome {
            passed: output.failed == 0,
            summary,
        },
        output,
    ))
}
