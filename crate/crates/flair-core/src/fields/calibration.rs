//! Offline accuracy calibration of a velocity field.
//!
//! For each of 100 timesteps the conditional flow-matching error
//! `||v(x_t, t) - u_t(x_t | eps)||^2` is averaged over the calibration
//! samples (one seeded noise draw per sample per timestep). The regularizer
//! weight is the reciprocal of that mean error, zeroed below a cutoff where
//! field accuracy degrades; a shifted variant subtracts the reciprocal at
//! the smallest calibrated timestep.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::par::map_indexed;
use crate::seeding::rng_for2;

use super::VelocityField;

/// Number of calibration timesteps, linearly spaced over (0, 1].
pub const CALIBRATION_STEPS: usize = 100;

/// Default weight cutoff: weights vanish for `t` below this value.
pub const DEFAULT_CUTOFF: f64 = 0.2;

/// How the per-timestep weight is derived from the measured mean error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `weight(t) = 1 / mean_error(t)`.
    Reciprocal,
    /// `weight(t) = max(0, 1 / mean_error(t) - 1 / mean_error(t_min))`.
    Shifted,
}

/// Per-timestep expected flow-matching error and the derived weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    timesteps: Vec<f64>,
    mean_error: Vec<f64>,
    weight_mode: WeightMode,
    cutoff: f64,
}

impl CalibrationTable {
    pub fn timesteps(&self) -> &[f64] {
        &self.timesteps
    }

    pub fn mean_errors(&self) -> &[f64] {
        &self.mean_error
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Index of the calibrated timestep nearest to `t`.
    fn nearest_index(&self, t: f64) -> usize {
        match self
            .timesteps
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite timesteps"))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.timesteps.len() => self.timesteps.len() - 1,
            Err(i) => {
                if (t - self.timesteps[i - 1]).abs() <= (self.timesteps[i] - t).abs() {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Measured mean error at the calibrated timestep nearest to `t`.
    pub fn mean_error_at(&self, t: f64) -> f64 {
        self.mean_error[self.nearest_index(t)]
    }

    /// Piecewise-constant weight lookup; zero below the cutoff.
    pub fn weight(&self, t: f64) -> f64 {
        if t < self.cutoff {
            return 0.0;
        }
        let recip = 1.0 / self.mean_error[self.nearest_index(t)];
        match self.weight_mode {
            WeightMode::Reciprocal => recip,
            WeightMode::Shifted => (recip - 1.0 / self.mean_error[0]).max(0.0),
        }
    }

    /// Renders the table as CSV with header `t,mean_error,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_error,weight\n");
        for (&t, &me) in self.timesteps.iter().zip(&self.mean_error) {
            let w = self.weight(t);
            out.push_str(&format!("{t},{me},{w}\n"));
        }
        out
    }

    /// Parses a table written by [`CalibrationTable::to_csv`]; the weight
    /// mode and cutoff are not stored in the CSV and must be supplied.
    pub fn from_csv(s: &str, weight_mode: WeightMode, cutoff: f64) -> Result<Self> {
        let mut timesteps = Vec::new();
        let mut mean_error = Vec::new();
        let mut lines = s.lines();
        match lines.next() {
            Some("t,mean_error,weight") => {}
            _ => return Err(CoreError::Format("missing calibration CSV header".into())),
        }
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(CoreError::Format(format!(
                    "calibration CSV line {}: expected 3 columns",
                    ln + 2
                )));
            }
            let t: f64 = cols[0]
                .parse()
                .map_err(|e| CoreError::Format(format!("line {}: {e}", ln + 2)))?;
            let me: f64 = cols[1]
                .parse()
                .map_err(|e| CoreError::Format(format!("line {}: {e}", ln + 2)))?;
            timesteps.push(t);
            mean_error.push(me);
        }
        Self::from_parts(timesteps, mean_error, weight_mode, cutoff)
    }

    /// Builds a table from raw parts, validating the invariants.
    pub fn from_parts(
        timesteps: Vec<f64>,
        mean_error: Vec<f64>,
        weight_mode: WeightMode,
        cutoff: f64,
    ) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(CoreError::EmptyInput("calibration timesteps"));
        }
        if timesteps.len() != mean_error.len() {
            return Err(CoreError::DimensionMismatch {
                expected: timesteps.len(),
                got: mean_error.len(),
            });
        }
        if !timesteps.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::invalid("timesteps", "must be strictly increasing"));
        }
        if timesteps[0] <= 0.0 || *timesteps.last().unwrap() > 1.0 {
            return Err(CoreError::invalid("timesteps", "must lie in (0, 1]"));
        }
        if mean_error.iter().any(|&e| !e.is_finite() || e <= 0.0) {
            return Err(CoreError::invalid(
                "mean_error",
                "must be finite and strictly positive everywhere",
            ));
        }
        Ok(Self {
            timesteps,
            mean_error,
            weight_mode,
            cutoff,
        })
    }
}

/// Calibrates with the default reciprocal weighting and cutoff 0.2.
pub fn calibrate(
    field: &dyn VelocityField,
    samples: &[Vec<f64>],
    seed: u64,
) -> Result<CalibrationTable> {
    calibrate_with(field, samples, seed, WeightMode::Reciprocal, DEFAULT_CUTOFF)
}

/// Measures the expected conditional flow-matching error of `field` on the
/// given data samples at 100 timesteps and derives regularizer weights.
///
/// One noise draw per (sample, timestep), both indexed into the seed stream,
/// so the table is independent of thread scheduling.
pub fn calibrate_with(
    field: &dyn VelocityField,
    samples: &[Vec<f64>],
    seed: u64,
    weight_mode: WeightMode,
    cutoff: f64,
) -> Result<CalibrationTable> {
    if samples.is_empty() {
        return Err(CoreError::EmptyInput("calibration samples"));
    }
    let dim = field.dim();
    for s in samples {
        crate::error::check_dim(s, dim)?;
    }

    let timesteps: Vec<f64> = (1..=CALIBRATION_STEPS)
        .map(|i| i as f64 / CALIBRATION_STEPS as f64)
        .collect();

    let per_step: Vec<Result<f64>> = map_indexed(timesteps.len(), |i| {
        let t = timesteps[i];
        let mut total = 0.0;
        for (j, x0) in samples.iter().enumerate() {
            let mut rng = rng_for2(seed, i as u64, j as u64);
            let eps: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x_t: Vec<f64> = x0
                .iter()
                .zip(&eps)
                .map(|(&a, &e)| (1.0 - t) * a + t * e)
                .collect();
            let v = field.evaluate(&x_t, t)?;
            // on-path conditional velocity: (eps - x_t)/(1 - t) = eps - x0,
            // the latter form stays finite at t = 1
            total += v
                .iter()
                .zip(&eps)
                .zip(x0)
                .map(|((&vi, &ei), &ai)| {
                    let d = vi - (ei - ai);
                    d * d
                })
                .sum::<f64>();
        }
        Ok(total / samples.len() as f64)
    });

    let mut mean_error = Vec::with_capacity(timesteps.len());
    for r in per_step {
        mean_error.push(r?);
    }
    CalibrationTable::from_parts(timesteps, mean_error, weight_mode, cutoff)
}
