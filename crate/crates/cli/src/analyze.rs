//! Recurrence-feature reports for a matrix file or a checkpoint.

use std::path::Path;

use anyhow::{bail, Context, Result};
use pararnn::features::{classify_block_diagonal, classify_features, ClassifyOptions, FeatureReport};
use pararnn::linalg::Mat;
use pararnn::net::checkpoint;
use serde::Serialize;

use crate::config::{prepare_out, write_json, AnalyzeConfig};
use crate::Outcome;

#[derive(Clone, Debug, Serialize)]
pub struct MatrixReport {
    /// Layer index; absent for a plain matrix file.
    pub layer: Option<usize>,
    pub matrix: String,
    pub report: FeatureReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeOutput {
    pub options: ClassifyOptions,
    pub reports: Vec<MatrixReport>,
}

/// Classifies every recurrent matrix found in `text`.
pub fn analyze_text(text: &str, opts: ClassifyOptions) -> Result<Vec<MatrixReport>> {
    if text.trim_start().starts_with("pararnn-checkpoint") {
        let model = checkpoint::from_str(text)?;
        let mut out = Vec::new();
        for (i, cell) in model.layers.iter().enumerate() {
            for (name, w) in cell.recurrent_matrices() {
                out.push(MatrixReport {
                    layer: Some(i),
                    matrix: name.to_string(),
                    report: classify_block_diagonal(w, opts)?,
                });
            }
        }
        Ok(out)
    } else {
        let m = Mat::from_text(text)?;
        Ok(vec![MatrixReport {
            layer: None,
            matrix: "matrix".into(),
            report: classify_features(&m, opts)?,
        }])
    }
}

pub fn run(cfg: &AnalyzeConfig, out: &Path) -> Result<(Outcome, AnalyzeOutput)> {
    let Some(input) = &cfg.input else {
        bail!("analyze needs an input file");
    };
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    prepare_out(out, cfg)?;
    let opts = cfg.options();
    let reports = analyze_text(&text, opts)?;
    let mut summary = String::new();
    for r in &reports {
        let label = match r.layer {
            Some(l) => format!("layer {l} {}", r.matrix),
            None => r.matrix.clone(),
        };
        summary.push_str(&format!("{label}:\n{}", r.report.to_text()));
    }
    let output = AnalyzeOutput { options: opts, reports };
    write_json(&out.join("features.json"), &output)?;
    Ok((Outcome { passed: true, summary }, output))
}
