//! Timing sweep over block sizes and the optional test-MSE sweep.

use std::path::Path;

use anyhow::Result;
use pararnn::bench::{
    dense_checks, format_table, monotone_checks, mse_checks, mse_vs_blocksize, power_of_two_sweep, timing_sweep,
    BenchResult, Check,
};
use pararnn::linalg::Rng;
use serde::Serialize;

use crate::config::{prepare_out, write_json, BenchConfig};
use crate::Outcome;

#[derive(Clone, Debug, Serialize)]
pub struct BenchOutput {
    /// Block-diagonal layers by block size, then the dense reference.
    pub timing: Vec<BenchResult>,
    pub mse: Vec<BenchResult>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub fn run(cfg: &BenchConfig, out: &Path) -> Result<(Outcome, BenchOutput)> {
    let mut resolved = cfg.clone();
    if let Some(m) = &mut resolved.mse {
        m.data = m.data.clone().scaled(cfg.scale)?;
    }
    resolved.scale = 1.0;
    prepare_out(out, &resolved)?;
    let rng = Rng::new(cfg.seed);

    let mut timing = Vec::new();
    let mut checks = Vec::new();
    if let Some(tc) = &resolved.timing {
        let sizes = resolved.block_sizes.clone().unwrap_or_else(|| power_of_two_sweep(tc.d));
        timing = timing_sweep(tc, &sizes, resolved.dense_reference, &rng.fork(0))?;
        let n_layer = sizes.len();
        checks.extend(monotone_checks(&timing[..n_layer], resolved.monotone_slack));
        if resolved.dense_reference {
            if let Some(single) = timing[..n_layer].iter().find(|r| r.d_s == tc.d) {
                checks.extend(dense_checks(single, &timing[n_layer], resolved.dense_tolerance));
            }
        }
    }
    let mut mse = Vec::new();
    if let Some(mc) = &resolved.mse {
        mse = mse_vs_blocksize(mc, &rng.fork(1))?;
        checks.extend(mse_checks(&mse, resolved.mse_gap, resolved.mse_factor)?);
    }
    let passed = checks.iter().all(|c| c.passed);

    let mut text = String::new();
    if !timing.is_empty() {
        if resolved.dense_reference {
            text.push_str("timing (last row: dense reference)\n");
        }
        text.push_str(&format_table(&timing));
    }
    if !mse.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&format_table(&mse));
    }
    for c in &checks {
        text.push_str(&format!(
            "{} {}: {}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    std::fs::write(out.join("bench.txt"), &text)?;
    let output = BenchOutput {
        timing,
        mse,
        checks,
        passed,
    };
    write_json(&out.join("bench.json"), &output)?;
    Ok((Outcome { passed, summary: text }, output))
}
