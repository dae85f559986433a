//! Dense-array math with reverse-mode differentiation.
//!
//! Every forward pass in the model is built as a fresh [`Graph`] (a tape of
//! [`Node`]s) over values cloned out of a persistent [`ParamStore`].
//! [`Graph::backward`] replays the tape in reverse and writes accumulated
//! gradients back into the store, where [`adam_step`] consumes them.
//! [`grad_check`] verifies any scalar loss against central finite
//! differences, parameter entry by parameter entry.

mod adam;
mod array;
mod gradcheck;
mod graph;
mod param;

pub use adam::{adam_step, AdamConfig};
pub use array::Array;
pub use gradcheck::{grad_check, GradCheckResult, GradReport};
pub use graph::{Graph, Node, NodeId, Op};
pub use param::ParamStore;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank-2 operand, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },

    #[error("backward: loss must be scalar-shaped, got {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("gather: index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("grad_check: loss builder is not deterministic ({first} vs {second} on replay)")]
    NonDeterministic { first: f64, second: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("parameter {0:?} not found in store")]
    UnknownParam(String),
}
