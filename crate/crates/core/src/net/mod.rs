//! Block-diagonal recurrent cells, deep stacking and exact BPTT.

mod activation;
mod cell;
pub mod checkpoint;
mod init;
mod model;
mod surrogate;

pub use activation::{sigmoid, Activation};
pub use cell::{Cell, CellKind, Gate, ParaGruCell, ParaLstmCell, ParaRnnCell, Tensors, TensorsMut};
pub use init::{canonical_matrix, init_params, InitScheme};
pub use model::{Aggregator, AggregatorSpec, Architecture, DeepModel, ForwardCache, Gradients, Linear, OutputMode};
pub use surrogate::similarity_surrogate;
