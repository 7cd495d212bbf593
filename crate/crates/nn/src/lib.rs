//! Minimal dense neural-network toolkit for the counterfactual engine.
//!
//! [`Tape`] records operations on rank-two [`Tensor`]s and differentiates
//! them in reverse mode. Backward passes are recorded too, so gradients of
//! gradient norms (the WGAN-GP penalty) are available with one more call to
//! [`Tape::grad`].

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NnError, Result};
pub use layers::{affine, dropout, Activation, BatchNorm, BoundMlp, Linear, Mlp, MlpConfig, Mode};
pub use rng::{derive_seed, seeded, split, SeededRng};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
