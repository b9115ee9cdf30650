//! Dense tensors, parameter sets, and tape-based reverse-mode differentiation.

mod checkpoint;
mod gradcheck;
mod network;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{check_gradients, relative_error, GradCheckConfig, GradCheckReport};
pub use network::{forward, Layer, Sequential};
pub use params::{sgd_step, Fingerprint, GradientSet, ParameterSet};
pub use tape::{surrogate_derivative, NodeId, ParamNodes, SpikeMode, Tape};
pub use tensor::Tensor;


#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{op} needs at least one operand")]
    EmptySequence { op: &'static str },
    #[error("tape has {0} loss outputs, expected exactly one")]
    LossCount(usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} logits")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter layout mismatch: expected {expected}, got {actual}")]
    FingerprintMismatch {
        expected: Fingerprint,
        actual: Fingerprint,
    },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("no parameter named `{0}`")]
    MissingParameter(String),
    #[error("a parameter set is already bound to this tape")]
    AlreadyBound,
    #[error("no parameter set bound to this tape")]
    NothingBound,
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}
