//! Isotropic Gaussian mixtures with closed-form marginals under the linear
//! flow path.
//!
//! A mixture `sum_k w_k N(m_k, var_k I)` pushed through `x_t = (1-t) x0 + t eps`
//! with `eps ~ N(0, I)` has the marginal `sum_k w_k N((1-t) m_k, s_k^2(t) I)`
//! where `s_k^2(t) = (1-t)^2 var_k + t^2`. Responsibilities are computed in
//! the log domain to avoid underflow when components are far apart.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, CoreError, Result};

/// Weight-sum tolerance for construction.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Isotropic Gaussian mixture over `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    dim: usize,
}

impl GaussianMixture {
    /// Builds a mixture, validating weights (nonnegative, sum to 1) and
    /// variances (strictly positive).
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::EmptyInput("mixture weights"));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(CoreError::invalid(
                "means/variances",
                format!(
                    "component count mismatch: {} weights, {} means, {} variances",
                    weights.len(),
                    means.len(),
                    variances.len()
                ),
            ));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(CoreError::invalid("weights", "must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(CoreError::invalid(
                "weights",
                format!("must sum to 1, got {sum}"),
            ));
        }
        if variances.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(CoreError::invalid("variances", "must be finite and positive"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(CoreError::EmptyInput("mixture mean"));
        }
        for m in &means {
            check_dim(m, dim)?;
            if m.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite { context: "mixture mean" });
            }
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim,
        })
    }

    /// Single standard-normal component `N(0, I_d)`.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![1.0]).expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Mixture mean of the prior (t = 0).
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, &mi) in out.iter_mut().zip(m) {
                *o += w * mi;
            }
        }
        out
    }

    /// Per-dimension variance of the prior (t = 0).
    pub fn per_dim_variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut second = vec![0.0; self.dim];
        for ((w, m), var) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for (s, &mi) in second.iter_mut().zip(m) {
                *s += w * (var + mi * mi);
            }
        }
        second
            .iter()
            .zip(&mean)
            .map(|(&s, &mu)| s - mu * mu)
            .collect()
    }

    /// Draws one prior sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sigma = self.variances[k].sqrt();
        self.means[k]
            .iter()
            .map(|&m| m + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Marginal standard deviation squared of component `k` at time `t`.
    pub fn marginal_component_variance(&self, k: usize, t: f64) -> f64 {
        (1.0 - t) * (1.0 - t) * self.variances[k] + t * t
    }

    /// Per-component log density of `x` under the time-`t` marginal, plus the
    /// log mixture weights: `log w_k + log N(x; (1-t) m_k, s_k^2(t) I)`.
    fn log_joint(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(x, self.dim)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::TimeDomain {
                t,
                reason: "marginal defined for t in [0, 1]",
            });
        }
        let d = self.dim as f64;
        let mut out = Vec::with_capacity(self.weights.len());
        for (k, (w, m)) in self.weights.iter().zip(&self.means).enumerate() {
            let s2 = self.marginal_component_variance(k, t);
            let sq: f64 = x
                .iter()
                .zip(m)
                .map(|(&xi, &mi)| {
                    let r = xi - (1.0 - t) * mi;
                    r * r
                })
                .sum();
            let logw = if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
            out.push(logw - 0.5 * (d * (2.0 * std::f64::consts::PI * s2).ln() + sq / s2));
        }
        Ok(out)
    }

    /// Log density of the time-`t` marginal at `x`.
    pub fn marginal_log_density(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(log_sum_exp(&self.log_joint(x, t)?))
    }

    /// Posterior component probabilities given `x` at time `t`.
    pub fn responsibilities(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let lj = self.log_joint(x, t)?;
        let lse = log_sum_exp(&lj);
        if !lse.is_finite() {
            return Err(CoreError::NonFinite {
                context: "mixture responsibilities",
            });
        }
        Ok(lj.iter().map(|&l| (l - lse).exp()).collect())
    }

    /// Exact score of the time-`t` marginal:
    /// `sum_k r_k(x) * -(x - (1-t) m_k) / s_k^2(t)`.
    pub fn marginal_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let resp = self.responsibilities(x, t)?;
        let mut out = vec![0.0; self.dim];
        for (k, (r, m)) in resp.iter().zip(&self.means).enumerate() {
            let s2 = self.marginal_component_variance(k, t);
            for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(m) {
                *o -= r * (xi - (1.0 - t) * mi) / s2;
            }
        }
        Ok(out)
    }
}

/// Numerically stable `log(sum_i exp(v_i))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
