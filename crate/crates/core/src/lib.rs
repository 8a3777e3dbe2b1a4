//! Block-diagonal recurrent networks, their gated variants, recurrence
//! feature analysis and the experiment tooling around them.

pub mod bench;
pub mod bridge;
pub mod datagen;
pub mod eigen;
pub mod error;
pub mod features;
pub mod linalg;
pub mod net;
pub mod train;

pub use error::{Error, Result};
