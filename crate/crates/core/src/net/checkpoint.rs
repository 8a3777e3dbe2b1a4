//! Text checkpoint: a magic line, the architecture as one JSON line, then
//! each tensor as `tensor <name>` followed by a matrix in text form.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::net::model::{Architecture, DeepModel};

const MAGIC: &str = "pararnn-checkpoint 1";

pub fn to_string(model: &DeepModel) -> Result<String> {
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&serde_json::to_string(&model.architecture())?);
    s.push('\n');
    for (name, rows, cols, data) in model.tensors() {
        s.push_str(&format!("tensor {name}\n"));
        s.push_str(&Mat::new(rows, cols, data.to_vec())?.to_text());
    }
    Ok(s)
}

pub fn from_str(text: &str) -> Result<DeepModel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next() != Some(MAGIC) {
        return Err(Error::Parse(format!("missing `{MAGIC}` header")));
    }
    let arch_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing architecture line".into()))?;
    let arch: Architecture = serde_json::from_str(arch_line)?;
    let mut model = DeepModel::zeros(&arch)?;
    for (name, rows, cols, data) in model.tensors_mut() {
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing tensor `{name}`")))?;
        if header.strip_prefix("tensor ") != Some(name.as_str()) {
            return Err(Error::Parse(format!("expected tensor `{name}`, found `{header}`")));
        }
        let m = Mat::read_text_lines(&mut lines)?;
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Parse(format!(
                "tensor `{name}` is {}x{}, expected {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
        data.copy_from_slice(m.data());
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Parse(format!("unexpected trailing line `{extra}`")));
    }
    Ok(model)
}

pub fn save(model: &DeepModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DeepModel> {
    from_str(&std::fs::read_to_string(path)?)
}
