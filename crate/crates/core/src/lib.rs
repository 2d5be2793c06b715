//! Deep dense networks with backward gradient normalization (BGN).
//!
//! A BGN node is the identity in the forward pass. In the backward pass it
//! rescales the incoming gradient so its norm over the whole batch is `κ`,
//! which keeps per-layer gradient norms constant no matter how deep the
//! network is.
//!
//! The crate is self-contained: [`tensor`] holds dense `f64` arrays, [`tape`]
//! is a reverse-mode autodiff tape, [`nn`] defines the layers, [`optim`]
//! provides Adam, [`mnist`] reads IDX files, [`telemetry`] records gradient
//! norms and weight changes, and [`experiment`] builds, trains and sweeps
//! networks.

pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod mnist;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod telemetry;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
