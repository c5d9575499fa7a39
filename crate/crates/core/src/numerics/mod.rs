//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Forward operations are recorded on a [`Tape`]; [`Tape::backward`] replays
//! them in reverse to accumulate gradients into every `requires_grad` leaf.
//! Everything runs in 64-bit floats so that gradients can be verified against
//! central finite differences (see [`gradcheck`]).

mod tape;
mod tensor;

pub mod gradcheck;


pub use tape::{scaled_dot_product_attention, separable_conv, separable_conv_causal, Tape, Var};
pub use tensor::{BoolTensor, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward was already run on this graph")]
    GraphConsumed,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value encountered in {what}")]
    NonFinite { what: String },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
