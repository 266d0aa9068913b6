//! Concrete velocity fields and the offline accuracy calibration that
//! weights their use as a regularizer.

mod analytic;
mod calibration;
mod network;

pub use analytic::AnalyticField;
pub use calibration::{
    calibrate, calibrate_with, CalibrationTable, WeightMode, CALIBRATION_STEPS, DEFAULT_CUTOFF,
};
pub use network::{
    cfm_loss_and_gradient, train_cfm, CfmSample, NetworkField, NetworkGradient, TrainConfig,
    TrainOutcome,
};

use crate::error::Result;

/// A time-dependent velocity field `v(x_t, t)` defined on `t in [0, 1]`.
///
/// Implementations are immutable and safe to evaluate concurrently.
pub trait VelocityField: Send + Sync {
    /// Dimension of the state space.
    fn dim(&self) -> usize;

    /// Evaluates the field at `x_t` and time `t`.
    fn evaluate(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>>;
}
