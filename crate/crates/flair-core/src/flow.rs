//! Linear conditional flow paths and exact conversions among velocity,
//! score, noise, and endpoint predictions.
//!
//! Time runs over `[0, 1]` with `t = 0` at the data end and `t = 1` at the
//! noise end. The conditional path is `x_t = (1 - t) x0 + t eps`, its
//! velocity is `u_t(x_t | eps) = (eps - x_t) / (1 - t)`, and the score of
//! the induced Gaussian is `-eps / t`. All conversions here are elementwise
//! and exact; operations with a singular endpoint reject times within
//! [`T_BOUNDARY_EPS`] of it instead of returning infinities.

use crate::error::{check_same_dim, CoreError, Result};

/// Guard width around singular time endpoints.
pub const T_BOUNDARY_EPS: f64 = 1e-9;

/// One point on a linear conditional flow path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub x0: Vec<f64>,
    pub eps: Vec<f64>,
}

fn check_unit_time(t: f64) -> Result<()> {
    if !t.is_finite() || !(0.0..=1.0).contains(&t) {
        return Err(CoreError::TimeDomain {
            t,
            reason: "time must lie in [0, 1]",
        });
    }
    Ok(())
}

/// Rejects `t` within the guard width of 1 (velocity forms divide by 1 - t).
fn check_below_one(t: f64) -> Result<()> {
    check_unit_time(t)?;
    if t > 1.0 - T_BOUNDARY_EPS {
        return Err(CoreError::TimeDomain {
            t,
            reason: "singular at t = 1",
        });
    }
    Ok(())
}

/// Rejects `t` within the guard width of 0 (score forms divide by t).
fn check_above_zero(t: f64) -> Result<()> {
    check_unit_time(t)?;
    if t < T_BOUNDARY_EPS {
        return Err(CoreError::TimeDomain {
            t,
            reason: "singular at t = 0",
        });
    }
    Ok(())
}

/// Samples the linear path: `x_t = (1 - t) x0 + t eps`.
pub fn interpolate(x0: &[f64], eps: &[f64], t: f64) -> Result<PathSample> {
    check_same_dim(x0, eps)?;
    check_unit_time(t)?;
    let x_t = x0
        .iter()
        .zip(eps)
        .map(|(&a, &e)| (1.0 - t) * a + t * e)
        .collect();
    Ok(PathSample {
        x_t,
        t,
        x0: x0.to_vec(),
        eps: eps.to_vec(),
    })
}

/// Conditional velocity `u_t(x_t | eps) = (eps - x_t) / (1 - t)`.
///
/// On a consistent path sample this equals `eps - x0`.
pub fn conditional_velocity(x_t: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    check_same_dim(x_t, eps)?;
    check_below_one(t)?;
    let denom = 1.0 - t;
    Ok(x_t.iter().zip(eps).map(|(&x, &e)| (e - x) / denom).collect())
}

/// Score of the noisy variational Gaussian along the path: `-eps / t`.
pub fn conditional_score(eps: &[f64], t: f64) -> Result<Vec<f64>> {
    check_above_zero(t)?;
    Ok(eps.iter().map(|&e| -e / t).collect())
}

/// Converts a velocity into the score of the noisy marginal:
/// `s = -((1 - t) v + x_t) / t`.
///
/// Exact for the optimal velocity of an analytic field; an approximation for
/// learned fields.
pub fn score_from_velocity(v: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    check_same_dim(v, x_t)?;
    check_above_zero(t)?;
    Ok(v.iter()
        .zip(x_t)
        .map(|(&vi, &xi)| -((1.0 - t) * vi + xi) / t)
        .collect())
}

/// Inverse of [`score_from_velocity`]: `v = (-t s - x_t) / (1 - t)`.
pub fn velocity_from_score(s: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    check_same_dim(s, x_t)?;
    check_below_one(t)?;
    let denom = 1.0 - t;
    Ok(s.iter()
        .zip(x_t)
        .map(|(&si, &xi)| (-t * si - xi) / denom)
        .collect())
}

/// One-step endpoint (noise-side) prediction: `x1_hat = x_t + (1 - t) v`.
pub fn endpoint_prediction(x_t: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_same_dim(x_t, v)?;
    check_unit_time(t)?;
    Ok(x_t
        .iter()
        .zip(v)
        .map(|(&x, &vi)| x + (1.0 - t) * vi)
        .collect())
}

/// Posterior-mean data estimate under the optimal velocity:
/// `x0_hat = x_t - t v`.
pub fn denoised_prediction(x_t: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_same_dim(x_t, v)?;
    check_unit_time(t)?;
    Ok(x_t.iter().zip(v).map(|(&x, &vi)| x - t * vi).collect())
}
