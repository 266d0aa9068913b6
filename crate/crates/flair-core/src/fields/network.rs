//! Small trainable velocity field with hand-written backpropagation.
//!
//! One hidden tanh layer; the time enters as a raw scalar appended to the
//! state, so the input width is `dim + 1`. Training minimizes the
//! conditional flow-matching loss `||v(x_t, t) - u_t(x_t | eps)||^2` with
//! plain gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CoreError, Result};
use crate::flow::{conditional_velocity, interpolate};
use crate::mixture::GaussianMixture;

use super::VelocityField;

const FORMAT_VERSION: u32 = 1;

/// One training sample for the conditional flow-matching loss.
#[derive(Debug, Clone)]
pub struct CfmSample {
    pub x0: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: f64,
}

/// Two-layer tanh network `R^(d+1) -> R^d` parameterizing `v(x, t)`.
///
/// Weights are stored row-major: `w1` is `hidden x (dim + 1)`, `w2` is
/// `dim x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkField {
    dim: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Parameter-shaped gradient for [`NetworkField`].
#[derive(Debug, Clone)]
pub struct NetworkGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFieldFile {
    version: u32,
    dim: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl NetworkField {
    /// Seeded initialization: weights `N(0, 1) / sqrt(fan_in)`, zero biases.
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(CoreError::invalid("dim/hidden", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan1 = ((dim + 1) as f64).sqrt();
        let w1 = (0..hidden * (dim + 1))
            .map(|_| rng.sample::<f64, _>(StandardNormal) / fan1)
            .collect();
        let fan2 = (hidden as f64).sqrt();
        let w2 = (0..dim * hidden)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / fan2)
            .collect();
        Ok(Self {
            dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; dim],
        })
    }

    /// All-zero parameters (outputs zero everywhere).
    pub fn zeros(dim: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(CoreError::invalid("dim/hidden", "must be positive"));
        }
        Ok(Self {
            dim,
            hidden,
            w1: vec![0.0; hidden * (dim + 1)],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Forward pass returning the hidden activations along with the output.
    fn forward_full(&self, x_t: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let in_dim = self.dim + 1;
        let mut h = vec![0.0; self.hidden];
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &self.w1[k * in_dim..(k + 1) * in_dim];
            let mut z = self.b1[k] + row[self.dim] * t;
            for (wi, xi) in row[..self.dim].iter().zip(x_t) {
                z += wi * xi;
            }
            *hk = z.tanh();
        }
        let mut out = vec![0.0; self.dim];
        for (j, oj) in out.iter_mut().enumerate() {
            let row = &self.w2[j * self.hidden..(j + 1) * self.hidden];
            let mut z = self.b2[j];
            for (wi, hi) in row.iter().zip(&h) {
                z += wi * hi;
            }
            *oj = z;
        }
        (h, out)
    }

    /// Flattens parameters in (w1, b1, w2, b2) order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    /// Overwrites parameters from a flat slice in (w1, b1, w2, b2) order.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(flat, self.num_params())?;
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    /// Serializes to JSON with a version header.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&NetworkFieldFile {
            version: FORMAT_VERSION,
            dim: self.dim,
            hidden: self.hidden,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        })
        .expect("network field serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: NetworkFieldFile =
            serde_json::from_str(s).map_err(|e| CoreError::Format(e.to_string()))?;
        if f.version != FORMAT_VERSION {
            return Err(CoreError::Format(format!(
                "unsupported network field version {} (expected {FORMAT_VERSION})",
                f.version
            )));
        }
        if f.w1.len() != f.hidden * (f.dim + 1)
            || f.b1.len() != f.hidden
            || f.w2.len() != f.dim * f.hidden
            || f.b2.len() != f.dim
        {
            return Err(CoreError::Format("parameter shape mismatch".into()));
        }
        Ok(Self {
            dim: f.dim,
            hidden: f.hidden,
            w1: f.w1,
            b1: f.b1,
            w2: f.w2,
            b2: f.b2,
        })
    }
}

impl VelocityField for NetworkField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(x_t, self.dim)?;
        Ok(self.forward_full(x_t, t).1)
    }
}

impl NetworkGradient {
    fn zeros_like(field: &NetworkField) -> Self {
        Self {
            w1: vec![0.0; field.w1.len()],
            b1: vec![0.0; field.b1.len()],
            w2: vec![0.0; field.w2.len()],
            b2: vec![0.0; field.b2.len()],
        }
    }

    /// Flattens in the same order as [`NetworkField::flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }
}

/// Conditional flow-matching loss and its exact reverse-mode gradient.
///
/// `loss = mean_i ||v(x_t_i, t_i) - u_t(x_t_i | eps_i)||^2`.
pub fn cfm_loss_and_gradient(
    field: &NetworkField,
    batch: &[CfmSample],
) -> Result<(f64, NetworkGradient)> {
    if batch.is_empty() {
        return Err(CoreError::EmptyInput("cfm batch"));
    }
    let in_dim = field.dim + 1;
    let inv_batch = 1.0 / batch.len() as f64;
    let mut grad = NetworkGradient::zeros_like(field);
    let mut loss = 0.0;

    for sample in batch {
        check_dim(&sample.x0, field.dim)?;
        let path = interpolate(&sample.x0, &sample.eps, sample.t)?;
        let u = conditional_velocity(&path.x_t, &sample.eps, sample.t)?;
        let (h, out) = field.forward_full(&path.x_t, sample.t);

        // d loss / d out, with the batch mean folded in
        let g_out: Vec<f64> = out
            .iter()
            .zip(&u)
            .map(|(&o, &ui)| 2.0 * (o - ui) * inv_batch)
            .collect();
        loss += out
            .iter()
            .zip(&u)
            .map(|(&o, &ui)| (o - ui) * (o - ui))
            .sum::<f64>()
            * inv_batch;

        for (j, &gj) in g_out.iter().enumerate() {
            grad.b2[j] += gj;
            let row = &mut grad.w2[j * field.hidden..(j + 1) * field.hidden];
            for (gw, &hk) in row.iter_mut().zip(&h) {
                *gw += gj * hk;
            }
        }
        for (k, &hk) in h.iter().enumerate() {
            let mut g_h = 0.0;
            for (j, &gj) in g_out.iter().enumerate() {
                g_h += field.w2[j * field.hidden + k] * gj;
            }
            let g_z = g_h * (1.0 - hk * hk);
            grad.b1[k] += g_z;
            let row = &mut grad.w1[k * in_dim..(k + 1) * in_dim];
            for (gw, &xi) in row[..field.dim].iter_mut().zip(&path.x_t) {
                *gw += g_z * xi;
            }
            row[field.dim] += g_z * sample.t;
        }
    }

    Ok((loss, grad))
}

/// Training settings for [`train_cfm`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub step_size: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 1e-2,
            batch: 32,
            seed: 0,
        }
    }
}

/// Trained field plus the per-step loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: NetworkField,
    pub loss_trace: Vec<f64>,
}

/// Plain gradient descent on the conditional flow-matching loss with fresh
/// `(x0, eps, t ~ U[0, 1))` draws each step.
pub fn train_cfm(
    mut field: NetworkField,
    prior: &GaussianMixture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.steps == 0 {
        return Err(CoreError::invalid("steps", "must be >= 1"));
    }
    if cfg.batch == 0 {
        return Err(CoreError::invalid("batch", "must be >= 1"));
    }
    if prior.dim() != field.dim {
        return Err(CoreError::DimensionMismatch {
            expected: field.dim,
            got: prior.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_trace = Vec::with_capacity(cfg.steps);

    for _ in 0..cfg.steps {
        let batch: Vec<CfmSample> = (0..cfg.batch)
            .map(|_| {
                let x0 = prior.sample(&mut rng);
                let eps: Vec<f64> = (0..field.dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let t: f64 = rng.random();
                CfmSample { x0, eps, t }
            })
            .collect();
        let (loss, grad) = cfm_loss_and_gradient(&field, &batch)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite {
                context: "cfm training loss",
            });
        }
        loss_trace.push(loss);

        for (p, g) in field.w1.iter_mut().zip(&grad.w1) {
            *p -= cfg.step_size * g;
        }
        for (p, g) in field.b1.iter_mut().zip(&grad.b1) {
            *p -= cfg.step_size * g;
        }
        for (p, g) in field.w2.iter_mut().zip(&grad.w2) {
            *p -= cfg.step_size * g;
        }
        for (p, g) in field.b2.iter_mut().zip(&grad.b2) {
            *p -= cfg.step_size * g;
        }
    }

    Ok(TrainOutcome { field, loss_trace })
}
