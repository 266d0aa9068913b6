//! Measurement operators with exact adjoints, the Gaussian noise model, and
//! a toy nonlinear decoder standing in for a learned latent-to-signal map.

mod decoder;
mod linear;

pub use decoder::ToyDecoder;
pub use linear::{observe, LinearOperator, Observation, OperatorKind, SignalShape};
