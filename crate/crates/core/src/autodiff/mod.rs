//! Dense real-tensor engine with reverse-mode differentiation and Adam.

mod adam;
mod graph;
mod param;

use thiserror::Error;

pub use adam::AdamState;
pub use graph::{Activation, GatherSrc, Graph, Node, NodeId, PROB_CLAMP};
pub use param::{Param, ParamId, ParamStore};


#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} {lhs_shape:?} and {rhs} {rhs_shape:?}")]
    Shape {
        op: &'static str,
        lhs: &'static str,
        lhs_shape: (usize, usize),
        rhs: &'static str,
        rhs_shape: (usize, usize),
    },
    #[error("backward needs a 1x1 root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("power normalization of an all-zero signal")]
    ZeroPower,
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
