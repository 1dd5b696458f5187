//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass;
//! [`Tape::backward`] replays it in reverse. Trainable parameters live in a
//! [`ParamStore`] outside the tape and are bound as leaves at the start of
//! each step. Training uses `f32`, gradient checks use `f64`.

mod checkpoint;
mod gradcheck;
pub mod nn;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, MomentPair, OptimizerSection, RawTensor};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, LeafReport};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::{gemm, MatMut, MatRef, Scalar};
pub use tape::{sigmoid, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;


#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} does not describe {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite operand")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{op}: empty operand list")]
    Empty { op: &'static str },
    #[error("backward root must be scalar-shaped, got {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("function is not deterministic: two evaluations at the same point differ")]
    NonDeterministic,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("evaluation failed: {0}")]
    Eval(Box<dyn std::error::Error + Send + Sync>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
