//! Toy nonlinear decoder emulating a learned latent-to-signal map.
//!
//! A fixed, seeded two-layer tanh network from a low-dimensional latent
//! space into signal space. It is never trained; its role is to make the
//! composed forward operator nonlinear in a reproducible way. Exact forward
//! (JVP) and reverse (VJP) derivatives are provided for data-consistency
//! descent in latent space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, CoreError, Result};

/// Fixed seeded decoder `R^latent -> R^output` with one hidden tanh layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    latent_dim: usize,
    hidden: usize,
    output_dim: usize,
    w1: Vec<f64>, // hidden x latent_dim, row-major
    b1: Vec<f64>,
    w2: Vec<f64>, // output_dim x hidden, row-major
    b2: Vec<f64>,
}

impl ToyDecoder {
    /// Weights drawn once from a seeded standard normal scaled by
    /// `1/sqrt(fan_in)`; biases zero.
    pub fn new(latent_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 || hidden == 0 || output_dim == 0 {
            return Err(CoreError::invalid("dims", "must be positive"));
        }
        if latent_dim >= output_dim {
            return Err(CoreError::invalid(
                "latent_dim",
                "latent space must be smaller than signal space",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan1 = (latent_dim as f64).sqrt();
        let w1 = (0..hidden * latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / fan1)
            .collect();
        let fan2 = (hidden as f64).sqrt();
        let w2 = (0..output_dim * hidden)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / fan2)
            .collect();
        Ok(Self {
            latent_dim,
            hidden,
            output_dim,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output_dim],
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn hidden_activations(&self, z: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * self.latent_dim..(k + 1) * self.latent_dim];
                let s: f64 = row.iter().zip(z).map(|(w, zi)| w * zi).sum();
                (s + self.b1[k]).tanh()
            })
            .collect()
    }

    /// Deterministic forward map into signal space.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(z, self.latent_dim)?;
        let h = self.hidden_activations(z);
        Ok((0..self.output_dim)
            .map(|j| {
                let row = &self.w2[j * self.hidden..(j + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, hi)| w * hi).sum::<f64>() + self.b2[j]
            })
            .collect())
    }

    /// Jacobian-vector product: directional derivative of `decode` at `z`
    /// along `dz`.
    pub fn jvp(&self, z: &[f64], dz: &[f64]) -> Result<Vec<f64>> {
        check_dim(z, self.latent_dim)?;
        check_dim(dz, self.latent_dim)?;
        let h = self.hidden_activations(z);
        let dh: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * self.latent_dim..(k + 1) * self.latent_dim];
                let ds: f64 = row.iter().zip(dz).map(|(w, di)| w * di).sum();
                (1.0 - h[k] * h[k]) * ds
            })
            .collect();
        Ok((0..self.output_dim)
            .map(|j| {
                let row = &self.w2[j * self.hidden..(j + 1) * self.hidden];
                row.iter().zip(&dh).map(|(w, di)| w * di).sum()
            })
            .collect())
    }

    /// Vector-Jacobian product: pulls a signal-space cotangent back to the
    /// latent space. This is the exact reverse-mode derivative of `decode`.
    pub fn vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_dim(z, self.latent_dim)?;
        check_dim(cotangent, self.output_dim)?;
        let h = self.hidden_activations(z);
        let mut g_h = vec![0.0; self.hidden];
        for (j, &cj) in cotangent.iter().enumerate() {
            let row = &self.w2[j * self.hidden..(j + 1) * self.hidden];
            for (g, w) in g_h.iter_mut().zip(row) {
                *g += w * cj;
            }
        }
        let mut out = vec![0.0; self.latent_dim];
        for (k, &gk) in g_h.iter().enumerate() {
            let gz = gk * (1.0 - h[k] * h[k]);
            let row = &self.w1[k * self.latent_dim..(k + 1) * self.latent_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gz;
            }
        }
        Ok(out)
    }

    /// Approximate inversion: gradient descent on `||decode(z) - x_target||^2`
    /// starting from `z = 0`, returning the best iterate found.
    pub fn invert(&self, x_target: &[f64], iters: usize, step_size: f64) -> Result<Vec<f64>> {
        check_dim(x_target, self.output_dim)?;
        if iters == 0 {
            return Err(CoreError::invalid("iters", "must be >= 1"));
        }
        let mut z = vec![0.0; self.latent_dim];
        let mut best = z.clone();
        let mut best_loss = f64::INFINITY;
        for _ in 0..iters {
            let x = self.decode(&z)?;
            let residual: Vec<f64> = x.iter().zip(x_target).map(|(a, b)| a - b).collect();
            let loss: f64 = residual.iter().map(|r| r * r).sum();
            if !loss.is_finite() {
                return Err(CoreError::NonFinite {
                    context: "decoder inversion loss",
                });
            }
            if loss < best_loss {
                best_loss = loss;
                best.copy_from_slice(&z);
            }
            let grad = self.vjp(&z, &residual)?;
            for (zi, g) in z.iter_mut().zip(&grad) {
                *zi -= 2.0 * step_size * g;
            }
        }
        // keep the final iterate if it improved on everything seen
        let final_loss: f64 = self
            .decode(&z)?
            .iter()
            .zip(x_target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if final_loss < best_loss {
            best = z;
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_is_deterministic_and_zero_at_origin() {
        let d = ToyDecoder::new(3, 8, 12, 7).unwrap();
        let z = vec![0.4, -0.2, 1.0];
        assert_eq!(d.decode(&z).unwrap(), d.decode(&z).unwrap());
        let e = ToyDecoder::new(3, 8, 12, 7).unwrap();
        assert_eq!(d, e);
        // zero biases: decode(0) = b2 = 0
        assert_eq!(d.decode(&[0.0; 3]).unwrap(), vec![0.0; 12]);
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let d = ToyDecoder::new(4, 10, 16, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dz: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let h = 1e-5;
            let zp: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + h * b).collect();
            let zm: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a - h * b).collect();
            let fp = d.decode(&zp).unwrap();
            let fm = d.decode(&zm).unwrap();
            let analytic = d.jvp(&z, &dz).unwrap();
            for (k, a) in analytic.iter().enumerate() {
                let numeric = (fp[k] - fm[k]) / (2.0 * h);
                let denom = numeric.abs().max(a.abs()).max(1e-8);
                assert!(
                    (numeric - a).abs() / denom < 1e-4,
                    "output {k}: jvp {a} vs fd {numeric}"
                );
            }
        }
    }

    #[test]
    fn vjp_agrees_with_jvp_inner_products() {
        // <J dz, c> == <dz, J^T c>
        let d = ToyDecoder::new(3, 6, 9, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let z: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dz: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let c: Vec<f64> = (0..9).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let jdz = d.jvp(&z, &dz).unwrap();
            let jtc = d.vjp(&z, &c).unwrap();
            let lhs: f64 = jdz.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = dz.iter().zip(&jtc).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn invert_recovers_decodable_targets() {
        let d = ToyDecoder::new(2, 12, 8, 19).unwrap();
        let z_star = vec![0.5, -0.3];
        let target = d.decode(&z_star).unwrap();
        let z = d.invert(&target, 4000, 0.05).unwrap();
        let err: f64 = d
            .decode(&z)
            .unwrap()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(err < 1e-3, "reconstruction error {err}");
    }

    #[test]
    fn invert_step_zero_returns_origin() {
        let d = ToyDecoder::new(2, 6, 8, 19).unwrap();
        let target = vec![1.0; 8];
        let z = d.invert(&target, 1, 0.0).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert!(d.invert(&target, 0, 0.1).is_err());
    }
}
