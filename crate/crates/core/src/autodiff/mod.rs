//! Dense-tensor engine with define-by-run reverse-mode differentiation.
//!
//! Forward computations are recorded on a [`Tape`]; [`Tape::backward`] sweeps
//! the record in reverse and returns [`Gradients`] for every leaf. Parameters
//! live outside the tape in a [`ParamSet`] and are re-bound each step.

mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, grad_check, relative_error};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use tape::{sigmoid, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({shapes})")]
    ShapeMismatch { op: &'static str, shapes: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("function value not finite ({value}) at parameter {param}, coordinate {coordinate}")]
    NonFinite {
        param: usize,
        coordinate: usize,
        value: f64,
    },
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
