//! Synthetic generators, CSV windowing and the batch container.

mod batch;
mod csv_series;
mod synthetic;

pub use batch::{SequenceBatch, Split, TargetLayout};
pub use csv_series::{load_csv_series, read_csv_table, window_table, CsvTable};
pub use synthetic::{
    arma11_lag1_autocorrelation, gen_adding_problem, gen_arma11, gen_rnn_dgp, lag1_autocorrelation, DgpSpec,
    GroundTruth, InputProcess, Normal, Readout, RecurrentTruth,
};
