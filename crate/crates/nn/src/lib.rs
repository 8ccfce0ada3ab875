//! Dense tensors, a tape-based reverse-mode differentiator covering the
//! operator set of a transformer encoder classifier, Adam with decoupled
//! weight decay, and a central-difference gradient checker.
//!
//! Everything is generic over [`Scalar`] so the same model code runs in `f32`
//! for training and `f64` for gradient checks.

mod error;
mod gradcheck;
mod graph;
mod optim;
mod scalar;
mod softmax;
mod tensor;

pub use error::NnError;
pub use gradcheck::{grad_check, DENOM_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use scalar::{gemm, Scalar};
pub use softmax::{masked_softmax, weighted_cross_entropy};
pub use tensor::Tensor;

pub type Result<T, E = NnError> = std::result::Result<T, E>;
