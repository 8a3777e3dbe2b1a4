use std::path::Path;

use crate::datagen::{SequenceBatch, TargetLayout};
use crate::error::{Error, Result};

/// Numeric table read from a CSV file with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    /// Row-major values, `columns.len()` per row.
    pub values: Vec<f64>,
    /// Name of the leading timestamp column, if one was detected and dropped.
    pub timestamp: Option<String>,
}

impl CsvTable {
    pub fn rows(&self) -> usize {
        self.values.len() / self.columns.len().max(1)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .columns
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("column `{name}` not found; have {:?}", self.columns)))?;
        Ok(self
            .values
            .iter()
            .skip(c)
            .step_by(self.columns.len())
            .copied()
            .collect())
    }
}

/// Reads a header-first CSV. A first column whose values do not all parse
/// as numbers is treated as a timestamp and ignored; any other
/// non-numeric cell is an error.
pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    if header.is_empty() || records.is_empty() {
        return Err(Error::Parse(format!("{} has no data rows", path.display())));
    }
    let timestamp = records
        .iter()
        .any(|r| r.get(0).is_some_and(|v| v.parse::<f64>().is_err()));
    let skip = usize::from(timestamp);
    let columns = header[skip..].to_vec();
    if columns.is_empty() {
        return Err(Error::Parse("no numeric columns".into()));
    }
    let mut values = Vec::with_capacity(records.len() * columns.len());
    for (line, r) in records.iter().enumerate() {
        for (c, name) in columns.iter().enumerate() {
            let cell = r.get(c + skip).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {}: column `{name}` has non-numeric value `{cell}`",
                    line + 2
                ))
            })?;
            values.push(v);
        }
    }
    Ok(CsvTable {
        columns,
        values,
        timestamp: timestamp.then(|| header[0].clone()),
    })
}

/// Sliding windows over a table: sample `i` takes all numeric columns at
/// rows `i..i+window` as inputs and the target column at row
/// `i + window - 1 + horizon` as target. There are
/// `rows - window - horizon + 1` samples, in chronological order.
pub fn window_table(table: &CsvTable, target_column: &str, window: usize, horizon: usize) -> Result<SequenceBatch> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let target = table.column(target_column)?;
    let rows = table.rows();
    if window + horizon > rows {
        return Err(Error::InvalidArgument(format!(
            "window {window} plus horizon {horizon} exceeds series length {rows}"
        )));
    }
    let n = rows - window - horizon + 1;
    let d_in = table.columns.len();
    let mut inputs = Vec::with_capacity(n * window * d_in);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        inputs.extend_from_slice(&table.values[i * d_in..(i + window) * d_in]);
        targets.push(target[i + window - 1 + horizon]);
    }
    SequenceBatch::new(n, window, d_in, 1, inputs, targets, TargetLayout::Last)
}

/// [`read_csv_table`] followed by [`window_table`].
pub fn load_csv_series(path: &Path, target_column: &str, window: usize, horizon: usize) -> Result<SequenceBatch> {
    window_table(&read_csv_table(path)?, target_column, window, horizon)
}
