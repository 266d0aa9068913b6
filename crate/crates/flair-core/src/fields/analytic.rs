//! Exact optimal velocity field for a Gaussian-mixture prior.
//!
//! For the linear path the optimal field is `v*(x_t, t) = E[x1 - x0 | x_t]`,
//! which reduces to `(x_t - E[x0 | x_t]) / t`. Expanding the per-component
//! posterior mean gives a form with no `1/t` singularity:
//!
//! ```text
//! v*(x, t) = sum_k r_k(x, t) * (t (x - m_k) - (1 - t) var_k x) / s_k^2(t)
//! ```
//!
//! with `s_k^2(t) = (1 - t)^2 var_k + t^2` and responsibilities `r_k` of the
//! time-`t` marginal. The formula is exact and stable on all of `[0, 1]`:
//! at `t = 0` it returns `-x` (the path limit, since the noise mean is 0)
//! and at `t = 1` it returns `x` minus the prior mean.

use crate::error::{check_dim, Result};
use crate::mixture::GaussianMixture;

use super::VelocityField;

/// Closed-form optimal velocity field for a [`GaussianMixture`] prior.
#[derive(Debug, Clone)]
pub struct AnalyticField {
    prior: GaussianMixture,
}

impl AnalyticField {
    pub fn new(prior: GaussianMixture) -> Self {
        Self { prior }
    }

    pub fn prior(&self) -> &GaussianMixture {
        &self.prior
    }

    /// Exact score of the time-`t` marginal (valid for `t` in `[0, 1]`).
    pub fn marginal_score(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.prior.marginal_score(x_t, t)
    }
}

impl VelocityField for AnalyticField {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn evaluate(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(x_t, self.prior.dim())?;
        let resp = self.prior.responsibilities(x_t, t)?;
        let mut out = vec![0.0; self.prior.dim()];
        for (k, (r, m)) in resp.iter().zip(self.prior.means()).enumerate() {
            let var = self.prior.variances()[k];
            let s2 = self.prior.marginal_component_variance(k, t);
            for ((o, &xi), &mi) in out.iter_mut().zip(x_t).zip(m) {
                *o += r * (t * (xi - mi) - (1.0 - t) * var * xi) / s2;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::flow::score_from_velocity;

    /// Closed-form field for the standard normal prior.
    fn std_normal_velocity(x: f64, t: f64) -> f64 {
        (2.0 * t - 1.0) * x / ((1.0 - t) * (1.0 - t) + t * t)
    }

    #[test]
    fn standard_normal_closed_form() {
        let field = AnalyticField::new(GaussianMixture::standard_normal(1));
        assert_abs_diff_eq!(field.evaluate(&[1.0], 0.5).unwrap()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(field.evaluate(&[1.0], 0.25).unwrap()[0], -0.8, epsilon = 1e-12);
        for &t in &[0.0, 0.05, 0.31, 0.77, 1.0] {
            for i in 0..=20 {
                let x = -3.0 + 0.3 * i as f64;
                assert_abs_diff_eq!(
                    field.evaluate(&[x], t).unwrap()[0],
                    std_normal_velocity(x, t),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn small_t_limit_is_negative_x() {
        let field = AnalyticField::new(GaussianMixture::standard_normal(2));
        let v = field.evaluate(&[0.7, -1.3], 0.0).unwrap();
        assert_abs_diff_eq!(v[0], -0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.3, epsilon = 1e-12);
        let v = field.evaluate(&[0.7, -1.3], 1e-7).unwrap();
        assert_abs_diff_eq!(v[0], -0.7, epsilon = 1e-5);
    }

    #[test]
    fn bounded_near_noise_end() {
        let prior = GaussianMixture::new(
            vec![0.4, 0.6],
            vec![vec![4.0], vec![-2.0]],
            vec![0.25, 2.0],
        )
        .unwrap();
        let field = AnalyticField::new(prior);
        for &x in &[-6.0, -1.0, 0.0, 2.5, 6.0] {
            let v = field.evaluate(&[x], 1.0 - 1e-9).unwrap();
            assert!(v[0].is_finite());
        }
        // at t = 1 the field is x minus the prior mean
        let v = field.evaluate(&[2.0], 1.0).unwrap();
        assert_abs_diff_eq!(v[0], 2.0 - (0.4 * 4.0 - 0.6 * 2.0), epsilon = 1e-10);
    }

    #[test]
    fn score_velocity_duality_for_mixtures() {
        // Eq. of the score-from-flow conversion is exact for the optimal field.
        let priors = [
            GaussianMixture::standard_normal(1),
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![3.0], vec![-3.0]], vec![1.0, 1.0])
                .unwrap(),
            GaussianMixture::new(
                vec![0.2, 0.3, 0.5],
                vec![vec![-1.0], vec![0.5], vec![2.0]],
                vec![0.5, 1.5, 0.25],
            )
            .unwrap(),
        ];
        for prior in priors {
            let field = AnalyticField::new(prior);
            for i in 1..20 {
                let t = i as f64 / 20.0;
                for j in 0..=12 {
                    let x = -3.0 + 0.5 * j as f64;
                    let v = field.evaluate(&[x], t).unwrap();
                    let s = score_from_velocity(&v, &[x], t).unwrap();
                    let exact = field.marginal_score(&[x], t).unwrap();
                    assert_abs_diff_eq!(s[0], exact[0], epsilon = 1e-8);
                }
            }
        }
    }
}
