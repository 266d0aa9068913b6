//! Desk-scale laboratory for variational posterior sampling with
//! flow-matching priors.
//!
//! The crate is organized around the pieces of the inverse-problem pipeline:
//!
//! - [`flow`]: linear conditional flow paths and the exact conversions among
//!   velocity, score, noise, and endpoint predictions.
//! - [`mixture`]: isotropic Gaussian mixtures with closed-form marginals
//!   under the flow path.
//! - [`fields`]: concrete velocity fields (an exact analytic mixture field
//!   and a small trainable network field) plus offline accuracy calibration.
//! - [`ops`]: linear measurement operators with exact adjoints, the Gaussian
//!   noise model, and a toy nonlinear decoder.
//! - [`solver`]: the alternating inference loop with hard data consistency,
//!   deterministic trajectory adjustment, and calibrated regularization.
//! - [`oracle`]: ground-truth machinery — analytic posteriors, probability
//!   flow ODE sampling, and reconstruction metrics.
//! - [`pgm`]: plain P2 image import/export with a dynamic-range sidecar.
//!
//! All state is immutable after construction and every random quantity is
//! derived from explicit seeds, so identical inputs reproduce identical
//! outputs bit for bit. With the `parallel` feature (default) data-parallel
//! inner loops run on rayon; without it the same code runs sequentially and
//! produces the same bytes.

pub mod error;
pub mod fields;
pub mod flow;
pub mod mixture;
pub mod ops;
pub mod oracle;
pub mod par;
pub mod pgm;
pub mod seeding;
pub mod solver;

pub use error::{CoreError, Result};
pub use fields::{
    calibrate, calibrate_with, cfm_loss_and_gradient, train_cfm, AnalyticField, CalibrationTable,
    CfmSample, NetworkField, NetworkGradient, TrainConfig, TrainOutcome, VelocityField,
    WeightMode,
};
pub use flow::PathSample;
pub use mixture::GaussianMixture;
pub use ops::{observe, LinearOperator, Observation, OperatorKind, SignalShape, ToyDecoder};
pub use oracle::{
    analytic_posterior, ode_sample, psnr, wasserstein1_1d, MetricReport, PosteriorGmm,
};
pub use solver::{
    flair_solve, posterior_ensemble, posterior_ensemble_seeded, AlphaRule, Ensemble, EnsembleRun,
    Forward, HdcConfig, Init, RegWeighting, SolveResult, SolverConfig, StepTrace,
    VariationalState,
};
