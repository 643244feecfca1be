//! Dense SiLU networks with exact input derivatives and parameter gradients.
//!
//! Input derivatives (time derivatives of the flow map, divergences of the
//! score) are carried as forward-mode tangents through a batched jet pass.
//! Parameter gradients are obtained by reverse-mode differentiation of that
//! jet pass, so losses that contain input derivatives of network outputs are
//! differentiated exactly (forward-over-reverse).

mod adam;
mod checkpoint;
mod engine;
mod params;
mod spec;
mod tape;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use engine::{divergence_v, eval_batch, forward, forward_jvp, jet_batch, velocity_basis, JetOutput};
pub use params::{init_params, LayerSlot, ParameterSet};
pub use spec::{Activation, Block, NetworkSpec};
pub use tape::{DifferentiableScalar, Gradients, NetworkVars, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite network input at index {0}")]
    NonFiniteInput(usize),
    #[error("non-finite gradient at parameter index {0}")]
    NonFiniteGradient(usize),
    #[error("scalar was not produced inside this recording context")]
    NotRecorded,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is not `Clone`/`PartialEq`; keep the kind and message.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind:?}: {message}")]
pub struct IoError {
    pub kind: std::io::ErrorKind,
    pub message: String,
}

impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        NnError::Io(IoError {
            kind: e.kind(),
            message: e.to_string(),
        })
    }
}
