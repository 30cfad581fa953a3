//! Dense row-major tensors with an explicit reverse-mode tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters enter it by
//! name through [`Tape::param`], operations append nodes, and
//! [`Tape::backward`] consumes the tape and returns [`Gradients`] keyed by
//! parameter name. Nothing is global: two tapes never share state, so
//! concurrent forward passes over immutable parameters are safe.

mod checkpoint;
mod error;
pub mod gradcheck;
mod kernels;
pub mod nn;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{Result, TensorError};
pub use optim::{cosine_lr, AdamW, AdamWConfig, CosineSchedule};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Param, Precision, Tensor};

/// Anything that owns named parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Marks every parameter as trainable (or frozen).
    fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.value.requires_grad = trainable;
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}
