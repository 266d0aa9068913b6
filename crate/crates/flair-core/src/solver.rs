//! The alternating inference loop: regularizer updates from a velocity
//! field, hard data consistency on the measurement residual, and
//! deterministic trajectory adjustment of the noise estimate.
//!
//! One iteration at time `t` (descending from just below 1 to the stop
//! time):
//!
//! ```text
//! x_t   = (1 - t) mu + t eps_hat
//! u_t   = (eps_hat - x_t) / (1 - t)
//! mu    = mu - lambda(t) (v(x_t, t) - u_t)        regularizer step
//! mu    = descend ||y - A(mu)||^2                 hard data consistency
//! x1_hat = x_t + (1 - t) v(x_t, t)
//! eps_hat = alpha x1_hat + sqrt(1 - alpha^2) eps,  eps ~ N(0, I)
//! ```
//!
//! The velocity field is evaluated once per iteration and reused for both
//! the gradient and the endpoint prediction. The regularizer step never
//! reads the measurement and the data-consistency step never reads the
//! field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, CoreError, Result};
use crate::fields::{CalibrationTable, VelocityField};
use crate::flow::{conditional_velocity, endpoint_prediction, interpolate};
use crate::ops::{LinearOperator, Observation, ToyDecoder};
use crate::par::map_indexed;
use crate::seeding::derive_seed;

/// Blending rule for the deterministic trajectory adjustment.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaRule {
    /// `alpha = 1 - t` (more model guidance as t decreases).
    OneMinusT,
    /// Fixed alpha in [0, 1].
    Constant(f64),
}

impl AlphaRule {
    fn alpha_at(&self, t: f64) -> f64 {
        match *self {
            AlphaRule::OneMinusT => (1.0 - t).clamp(0.0, 1.0),
            AlphaRule::Constant(c) => c,
        }
    }
}

/// Hard data consistency settings.
#[derive(Debug, Clone, PartialEq)]
pub struct HdcConfig {
    pub enabled: bool,
    pub step_size: f64,
    pub max_iters: usize,
    /// Descent stops once the summed squared residual falls to
    /// `stop_threshold_per_measurement * m`.
    pub stop_threshold_per_measurement: f64,
}

impl Default for HdcConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            step_size: 0.5,
            max_iters: 2000,
            stop_threshold_per_measurement: 1e-4,
        }
    }
}

/// Weighting of the regularizer gradient along the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum RegWeighting {
    /// Calibrated weights looked up from a table.
    Calibrated(CalibrationTable),
    /// `lambda(t) = t`, the score-distillation baseline weighting.
    RsdOmegaT,
    /// `lambda(t) = t / (1 - t)`, the weight under which the score-matching
    /// regularizer coincides with plain conditional flow matching.
    FlowRatio,
}

impl RegWeighting {
    fn lambda_at(&self, t: f64) -> f64 {
        match self {
            RegWeighting::Calibrated(table) => table.weight(t),
            RegWeighting::RsdOmegaT => t,
            RegWeighting::FlowRatio => t / (1.0 - t),
        }
    }
}

/// Full solver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Number of field evaluations (solver iterations).
    pub nfe: usize,
    /// Stop time; the grid never goes below it.
    pub t_stop: f64,
    pub alpha_rule: AlphaRule,
    pub hdc: HdcConfig,
    pub reg_weighting: RegWeighting,
    /// When false, alpha is forced to 0 (plain re-noising).
    pub dta_enabled: bool,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(reg_weighting: RegWeighting, seed: u64) -> Self {
        Self {
            nfe: 50,
            t_stop: 0.2,
            alpha_rule: AlphaRule::OneMinusT,
            hdc: HdcConfig::default(),
            reg_weighting,
            dta_enabled: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(CoreError::invalid("nfe", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.t_stop) {
            return Err(CoreError::invalid("t_stop", "must lie in [0, 1)"));
        }
        if self.hdc.step_size <= 0.0 || !self.hdc.step_size.is_finite() {
            return Err(CoreError::invalid("hdc.step_size", "must be > 0"));
        }
        if self.hdc.stop_threshold_per_measurement < 0.0 {
            return Err(CoreError::invalid(
                "hdc.stop_threshold_per_measurement",
                "must be >= 0",
            ));
        }
        if let AlphaRule::Constant(c) = self.alpha_rule {
            if !(0.0..=1.0).contains(&c) {
                return Err(CoreError::invalid("alpha", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Spacing of the descending time grid.
    pub fn delta_t(&self) -> f64 {
        (1.0 - self.t_stop) / self.nfe as f64
    }

    /// The descending time grid: nominally `1 - k dt` for `k = 0..nfe`, with
    /// the first point moved to `1 - dt/2` to respect the conditional
    /// velocity's domain. Exactly `nfe` entries, all >= `t_stop`.
    pub fn time_grid(&self) -> Vec<f64> {
        let dt = self.delta_t();
        (0..self.nfe)
            .map(|k| {
                if k == 0 {
                    1.0 - 0.5 * dt
                } else {
                    1.0 - k as f64 * dt
                }
            })
            .collect()
    }
}

/// What the solver optimizes against.
#[derive(Debug, Clone, Copy)]
pub enum Forward<'a> {
    /// `y ~ A x`: the variational mean lives in signal space.
    Linear(&'a LinearOperator),
    /// `y ~ A D(z)`: the variational mean lives in the decoder's latent
    /// space and data consistency descends through the decoder.
    Decoded {
        op: &'a LinearOperator,
        decoder: &'a ToyDecoder,
    },
}

impl<'a> Forward<'a> {
    /// Dimension of the optimization variable.
    fn variable_dim(&self) -> usize {
        match self {
            Forward::Linear(op) => op.input_dim(),
            Forward::Decoded { decoder, .. } => decoder.latent_dim(),
        }
    }

    fn measure(&self, mu: &[f64]) -> Result<Vec<f64>> {
        match self {
            Forward::Linear(op) => op.apply(mu),
            Forward::Decoded { op, decoder } => op.apply(&decoder.decode(mu)?),
        }
    }

    /// Gradient of `||y - F(mu)||^2` given the residual `r = y - F(mu)`.
    fn residual_gradient(&self, mu: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
        match self {
            Forward::Linear(op) => {
                let g = op.adjoint(residual)?;
                Ok(g.iter().map(|&v| -2.0 * v).collect())
            }
            Forward::Decoded { op, decoder } => {
                let back = op.adjoint(residual)?;
                let g = decoder.vjp(mu, &back)?;
                Ok(g.iter().map(|&v| -2.0 * v).collect())
            }
        }
    }
}

/// Starting point for the variational mean.
#[derive(Debug, Clone)]
pub enum Init {
    /// `A^T y`, pushed through approximate decoder inversion when a decoder
    /// is configured.
    Adjoint,
    Vector(Vec<f64>),
}

/// One row of the per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub t: f64,
    pub lambda: f64,
    pub reg_grad_norm: f64,
    /// Summed squared measurement residual after the data-consistency step.
    pub data_residual: f64,
    pub hdc_iters: usize,
}

/// Mutable state of one solve.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub mu_x: Vec<f64>,
    pub eps_hat: Vec<f64>,
    pub t: f64,
    pub trace: Vec<StepTrace>,
}

/// Final state of one solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub mu_x_final: Vec<f64>,
    /// Signal-space reconstruction when a decoder is in play.
    pub decoded: Option<Vec<f64>>,
    pub trace: Vec<StepTrace>,
    pub seed: u64,
    pub config: SolverConfig,
}

/// Velocity-space regularizer gradient `v(x_t, t) - u_t(x_t | eps_hat)` at
/// `x_t = (1 - t) mu + t eps_hat`. Never reads the measurement.
pub fn regularizer_gradient(
    field: &dyn VelocityField,
    mu_x: &[f64],
    eps_hat: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let path = interpolate(mu_x, eps_hat, t)?;
    let v = field.evaluate(&path.x_t, t)?;
    let u = conditional_velocity(&path.x_t, eps_hat, t)?;
    Ok(v.iter().zip(&u).map(|(&a, &b)| a - b).collect())
}

/// Outcome of one data-consistency descent.
#[derive(Debug, Clone, Copy)]
pub struct HdcOutcome {
    pub iters: usize,
    pub residual: f64,
    pub hit_threshold: bool,
}

/// Summed squared residual `||y - F(mu)||^2`.
fn summed_residual(forward: &Forward, mu: &[f64], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let fx = forward.measure(mu)?;
    let r: Vec<f64> = y.iter().zip(&fx).map(|(&a, &b)| a - b).collect();
    let sq = r.iter().map(|v| v * v).sum();
    Ok((r, sq))
}

/// Gradient descent on the summed squared measurement residual, stopping at
/// `threshold * m` or `max_iters`. Never reads the velocity field.
///
/// Divergence (residual growing for 10 consecutive iterations) is an error.
pub fn hard_data_consistency(
    mu_x: &[f64],
    obs: &Observation,
    forward: &Forward,
    cfg: &HdcConfig,
) -> Result<(Vec<f64>, HdcOutcome)> {
    check_dim(mu_x, forward.variable_dim())?;
    let m = obs.y.len();
    let threshold = cfg.stop_threshold_per_measurement * m as f64;
    let mut mu = mu_x.to_vec();

    let (mut residual, mut sq) = summed_residual(forward, &mu, &obs.y)?;
    let mut grows = 0usize;
    let mut iters = 0usize;
    while sq > threshold && iters < cfg.max_iters {
        let grad = forward.residual_gradient(&mu, &residual)?;
        for (mi, g) in mu.iter_mut().zip(&grad) {
            *mi -= cfg.step_size * g;
        }
        iters += 1;
        let (r_new, sq_new) = summed_residual(forward, &mu, &obs.y)?;
        if !sq_new.is_finite() {
            return Err(CoreError::Divergence {
                iters,
                residual: sq_new,
            });
        }
        if sq_new > sq {
            grows += 1;
            if grows >= 10 {
                return Err(CoreError::Divergence {
                    iters,
                    residual: sq_new,
                });
            }
        } else {
            grows = 0;
        }
        residual = r_new;
        sq = sq_new;
    }
    Ok((
        mu,
        HdcOutcome {
            iters,
            residual: sq,
            hit_threshold: sq <= threshold,
        },
    ))
}

/// Deterministic trajectory adjustment: blends the endpoint prediction with
/// fresh noise, `eps_hat = alpha x1_hat + sqrt(1 - alpha^2) eps`.
pub fn dta_update<R: Rng + ?Sized>(
    x_t: &[f64],
    v: &[f64],
    t: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::invalid("alpha", "must lie in [0, 1]"));
    }
    let x1_hat = endpoint_prediction(x_t, v, t)?;
    let noise_scale = (1.0 - alpha * alpha).sqrt();
    Ok(x1_hat
        .iter()
        .map(|&xh| {
            let eps: f64 = rng.sample(StandardNormal);
            alpha * xh + noise_scale * eps
        })
        .collect())
}

/// Runs the full inference loop.
///
/// With `Init::Adjoint` the variational mean starts from `A^T y` (inverted
/// through the decoder when one is configured). The initial noise estimate
/// is a standard normal draw from the config seed.
pub fn flair_solve(
    field: &dyn VelocityField,
    obs: &Observation,
    forward: &Forward,
    init: &Init,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let dim = forward.variable_dim();
    if field.dim() != dim {
        return Err(CoreError::DimensionMismatch {
            expected: dim,
            got: field.dim(),
        });
    }

    let mu: Vec<f64> = match init {
        Init::Vector(v) => {
            check_dim(v, dim)?;
            v.clone()
        }
        Init::Adjoint => {
            let aty = obs.op.adjoint(&obs.y)?;
            match forward {
                Forward::Linear(_) => aty,
                Forward::Decoded { decoder, .. } => decoder.invert(&aty, 500, 0.05)?,
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps_hat: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut state = VariationalState {
        mu_x: mu,
        eps_hat,
        t: 1.0,
        trace: Vec::with_capacity(cfg.nfe),
    };

    for (step, &t) in cfg.time_grid().iter().enumerate() {
        state.t = t;
        let path = interpolate(&state.mu_x, &state.eps_hat, t)?;
        let u = conditional_velocity(&path.x_t, &state.eps_hat, t)?;
        // the one field evaluation of this iteration
        let v = field.evaluate(&path.x_t, t)?;

        let lambda = cfg.reg_weighting.lambda_at(t);
        let mut grad_norm_sq = 0.0;
        for ((mi, &vi), &ui) in state.mu_x.iter_mut().zip(&v).zip(&u) {
            let g = vi - ui;
            grad_norm_sq += g * g;
            *mi -= lambda * g;
        }

        let (hdc_iters, data_residual) = if cfg.hdc.enabled {
            let (mu_new, outcome) = hard_data_consistency(&state.mu_x, obs, forward, &cfg.hdc)?;
            state.mu_x = mu_new;
            (outcome.iters, outcome.residual)
        } else {
            let (_, sq) = summed_residual(forward, &state.mu_x, &obs.y)?;
            (0, sq)
        };

        let alpha = if cfg.dta_enabled {
            cfg.alpha_rule.alpha_at(t)
        } else {
            0.0
        };
        state.eps_hat = dta_update(&path.x_t, &v, t, alpha, &mut rng)?;

        state.trace.push(StepTrace {
            step,
            t,
            lambda,
            reg_grad_norm: grad_norm_sq.sqrt(),
            data_residual,
            hdc_iters,
        });

        if state.mu_x.iter().any(|x| !x.is_finite())
            || state.eps_hat.iter().any(|x| !x.is_finite())
        {
            return Err(CoreError::NonFinite {
                context: "solver state",
            });
        }
    }

    let decoded = match forward {
        Forward::Linear(_) => None,
        Forward::Decoded { decoder, .. } => Some(decoder.decode(&state.mu_x)?),
    };

    Ok(SolveResult {
        mu_x_final: state.mu_x,
        decoded,
        trace: state.trace,
        seed: cfg.seed,
        config: cfg.clone(),
    })
}

/// One run of a posterior ensemble.
#[derive(Debug)]
pub struct EnsembleRun {
    pub seed: u64,
    pub result: Result<SolveResult>,
}

/// Posterior ensemble: per-dimension sample mean and unbiased variance over
/// the successful runs.
#[derive(Debug)]
pub struct Ensemble {
    pub runs: Vec<EnsembleRun>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Ensemble {
    /// Final iterates of the successful runs, in seed order.
    pub fn samples(&self) -> Vec<&[f64]> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|s| s.mu_x_final.as_slice()))
            .collect()
    }
}

/// Runs `k` independent solves with seeds derived from the config seed.
pub fn posterior_ensemble(
    field: &dyn VelocityField,
    obs: &Observation,
    forward: &Forward,
    cfg: &SolverConfig,
    k: usize,
) -> Result<Ensemble> {
    if k < 2 {
        return Err(CoreError::invalid("k", "need at least 2 ensemble members"));
    }
    let seeds: Vec<u64> = (0..k).map(|i| derive_seed(cfg.seed, i as u64)).collect();
    posterior_ensemble_seeded(field, obs, forward, cfg, &seeds)
}

/// Ensemble with explicit per-run seeds. Runs execute independently (in
/// parallel with the `parallel` feature); failures are reported per run and
/// the statistics cover the successes.
pub fn posterior_ensemble_seeded(
    field: &dyn VelocityField,
    obs: &Observation,
    forward: &Forward,
    cfg: &SolverConfig,
    seeds: &[u64],
) -> Result<Ensemble> {
    if seeds.len() < 2 {
        return Err(CoreError::invalid("seeds", "need at least 2 ensemble members"));
    }
    let runs: Vec<EnsembleRun> = map_indexed(seeds.len(), |i| {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seeds[i];
        EnsembleRun {
            seed: seeds[i],
            result: flair_solve(field, obs, forward, &Init::Adjoint, &run_cfg),
        }
    });

    let ok: Vec<&SolveResult> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    if ok.len() < 2 {
        return Err(CoreError::invalid(
            "ensemble",
            format!("only {} of {} runs succeeded", ok.len(), seeds.len()),
        ));
    }
    let dim = ok[0].mu_x_final.len();
    let inv = 1.0 / ok.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &ok {
        for (m, &x) in mean.iter_mut().zip(&r.mu_x_final) {
            *m += x * inv;
        }
    }
    let mut variance = vec![0.0; dim];
    for r in &ok {
        for ((v, &x), &mu) in variance.iter_mut().zip(&r.mu_x_final).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    for v in &mut variance {
        *v /= (ok.len() - 1) as f64;
    }
    Ok(Ensemble {
        runs,
        mean,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AnalyticField;
    use crate::mixture::GaussianMixture;
    use crate::ops::{observe, SignalShape};
    use approx::assert_abs_diff_eq;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn std_field(dim: usize) -> AnalyticField {
        AnalyticField::new(GaussianMixture::standard_normal(dim))
    }

    #[test]
    fn time_grid_shape() {
        let cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 0);
        let grid = cfg.time_grid();
        assert_eq!(grid.len(), 50);
        let dt = cfg.delta_t();
        assert_abs_diff_eq!(grid[0], 1.0 - 0.5 * dt, epsilon = 1e-15);
        assert!(grid.windows(2).all(|w| w[0] > w[1]));
        assert!(grid.iter().all(|&t| t >= cfg.t_stop));
        assert_abs_diff_eq!(*grid.last().unwrap(), cfg.t_stop + dt, epsilon = 1e-12);
    }

    #[test]
    fn regularizer_gradient_cases() {
        let field = std_field(1);
        // at the prior mode with eps_hat = 0 everything vanishes
        let g = regularizer_gradient(&field, &[0.0], &[0.0], 0.5).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-12);
        // mu = 2, eps_hat = 0, t = 0.5: x_t = 1, v = 0, u = -2 -> gradient +2
        let g = regularizer_gradient(&field, &[2.0], &[0.0], 0.5).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-12);
        assert!(regularizer_gradient(&field, &[2.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn regularizer_gradient_zero_for_perfectly_fit_field() {
        // a field that returns exactly the conditional velocity
        struct Fit;
        impl VelocityField for Fit {
            fn dim(&self) -> usize {
                1
            }
            fn evaluate(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
                // reproduce u for eps_hat = 1.5 used below
                conditional_velocity(x_t, &[1.5], t)
            }
        }
        let g = regularizer_gradient(&Fit, &[0.3], &[1.5], 0.4).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hdc_identity_converges_in_one_step() {
        let op = LinearOperator::identity(SignalShape::Flat(1)).unwrap();
        let obs = observe(&op, &[3.0], 0.0, 0).unwrap();
        let fwd = Forward::Linear(&op);
        let (mu, out) = hard_data_consistency(&[0.0], &obs, &fwd, &HdcConfig::default()).unwrap();
        assert!(out.hit_threshold);
        assert!(out.residual <= 1e-4);
        assert_abs_diff_eq!(mu[0], 3.0, epsilon = 1e-2);
    }

    #[test]
    fn hdc_leaves_masked_out_coordinates_untouched() {
        let op = LinearOperator::mask(SignalShape::Flat(4), vec![0, 2]).unwrap();
        let obs = observe(&op, &[5.0, -1.0, 2.0, 7.0], 0.0, 0).unwrap();
        let fwd = Forward::Linear(&op);
        let start = vec![0.1, 0.9, -0.3, 0.4];
        let (mu, out) = hard_data_consistency(&start, &obs, &fwd, &HdcConfig::default()).unwrap();
        assert!(out.hit_threshold);
        assert_eq!(mu[1], 0.9);
        assert_eq!(mu[3], 0.4);
        assert!((mu[0] - 5.0).abs() < 0.02);
        assert!((mu[2] - 2.0).abs() < 0.02);
    }

    #[test]
    fn hdc_blur_reaches_threshold_and_matches_least_squares() {
        use nalgebra::{DMatrix, DVector};
        let n = 32;
        let kernel = vec![0.25, 0.5, 0.25];
        let op = LinearOperator::blur(SignalShape::Flat(n), kernel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x_true: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let obs = observe(&op, &x_true, 0.0, 0).unwrap();
        let fwd = Forward::Linear(&op);
        let cfg = HdcConfig {
            enabled: true,
            step_size: 0.4,
            max_iters: 20_000,
            stop_threshold_per_measurement: 1e-4,
        };
        let start = vec![0.0; n];
        let (mu, out) = hard_data_consistency(&start, &obs, &fwd, &cfg).unwrap();
        assert!(out.hit_threshold, "residual {} after {}", out.residual, out.iters);

        // compare against the minimum-norm least-squares solution's residual
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = op.apply(&e).unwrap();
            for i in 0..n {
                a[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        let y = DVector::from_row_slice(&obs.y);
        let lstsq = a.clone().svd(true, true).solve(&y, 1e-10).unwrap();
        let ls_res = (&y - &a * &lstsq).norm_squared();
        // descent residual reaches the same floor up to the stop threshold
        assert!(out.residual <= ls_res + 1e-4 * n as f64);
        let ax = op.apply(&mu).unwrap();
        let direct: f64 = obs
            .y
            .iter()
            .zip(&ax)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        assert_abs_diff_eq!(direct, out.residual, epsilon = 1e-9);
    }

    #[test]
    fn dta_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_t = vec![0.5, -0.2];
        let v = vec![1.0, 0.3];
        let t = 0.4;
        let x1 = endpoint_prediction(&x_t, &v, t).unwrap();
        // alpha = 1: exactly the endpoint prediction
        let e = dta_update(&x_t, &v, t, 1.0, &mut rng).unwrap();
        assert_eq!(e, x1);
        // alpha = 0: pure fresh noise, mean 0 over many draws
        let mut acc = 0.0;
        for _ in 0..20_000 {
            let e = dta_update(&x_t, &v, t, 0.0, &mut rng).unwrap();
            acc += e[0];
        }
        assert!(acc.abs() / 20_000.0 < 0.02);
    }

    #[test]
    fn dta_moments_match_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x_t = vec![1.2];
        let v = vec![-0.5];
        let t = 0.3;
        let alpha = 0.6;
        let x1 = endpoint_prediction(&x_t, &v, t).unwrap()[0];
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let e = dta_update(&x_t, &v, t, alpha, &mut rng).unwrap()[0];
            sum += e;
            sum_sq += e * e;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let sigma = (1.0 - alpha * alpha).sqrt();
        assert!((mean - alpha * x1).abs() < 3.0 * sigma / (n as f64).sqrt());
        assert!((var / (1.0 - alpha * alpha) - 1.0).abs() < 0.02);
    }

    #[test]
    fn solve_identity_reproduces_measurement() {
        let op = LinearOperator::identity(SignalShape::Flat(2)).unwrap();
        let obs = observe(&op, &[0.8, -0.4], 0.0, 0).unwrap();
        let field = std_field(2);
        let cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 5);
        let out = flair_solve(&field, &obs, &Forward::Linear(&op), &Init::Adjoint, &cfg).unwrap();
        let last = out.trace.last().unwrap();
        assert!(last.data_residual <= 1e-4 * 2.0);
        for (a, b) in out.mu_x_final.iter().zip(&obs.y) {
            assert!((a - b).abs() < 0.02);
        }
    }

    #[test]
    fn solve_empty_mask_contracts_toward_prior_mean() {
        let op = LinearOperator::mask(SignalShape::Flat(2), vec![]).unwrap();
        let obs = observe(&op, &[3.0, -3.0], 0.0, 0).unwrap();
        let field = std_field(2);
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 7);
        cfg.hdc.enabled = true; // no measurements, so HDC is a no-op
        let init = vec![3.0, -3.0];
        let out = flair_solve(
            &field,
            &obs,
            &Forward::Linear(&op),
            &Init::Vector(init.clone()),
            &cfg,
        )
        .unwrap();
        let norm_in: f64 = init.iter().map(|x| x * x).sum::<f64>();
        let norm_out: f64 = out.mu_x_final.iter().map(|x| x * x).sum::<f64>();
        assert!(
            norm_out < norm_in,
            "expected contraction toward the prior mean ({norm_in} -> {norm_out})"
        );
        assert!(out.trace.iter().all(|s| s.hdc_iters == 0));
    }

    #[test]
    fn solve_is_deterministic() {
        let op = LinearOperator::downsample(SignalShape::Flat(4), 2).unwrap();
        let obs = observe(&op, &[0.3, 0.6, -0.1, 0.2], 0.01, 3).unwrap();
        let field = std_field(4);
        let cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 42);
        let fwd = Forward::Linear(&op);
        let a = flair_solve(&field, &obs, &fwd, &Init::Adjoint, &cfg).unwrap();
        let b = flair_solve(&field, &obs, &fwd, &Init::Adjoint, &cfg).unwrap();
        assert_eq!(a.mu_x_final, b.mu_x_final);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn one_field_evaluation_per_step_and_hdc_reads_no_field() {
        struct Counting<'a> {
            inner: &'a AnalyticField,
            calls: AtomicUsize,
        }
        impl VelocityField for Counting<'_> {
            fn dim(&self) -> usize {
                self.inner.dim()
            }
            fn evaluate(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
                self.calls.fetch_add(1, Ordering::Relaxed);
                self.inner.evaluate(x_t, t)
            }
        }
        let inner = std_field(3);
        let field = Counting {
            inner: &inner,
            calls: AtomicUsize::new(0),
        };
        let op = LinearOperator::mask(SignalShape::Flat(3), vec![0, 1]).unwrap();
        let obs = observe(&op, &[0.5, 0.1, -0.9], 0.0, 0).unwrap();
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 1);
        cfg.nfe = 23;
        // plenty of HDC iterations, none of which may touch the field
        cfg.hdc.max_iters = 500;
        let out = flair_solve(&field, &obs, &Forward::Linear(&op), &Init::Adjoint, &cfg).unwrap();
        assert!(out.trace.iter().map(|s| s.hdc_iters).sum::<usize>() > 0);
        assert_eq!(field.calls.load(Ordering::Relaxed), 23);
    }

    #[test]
    fn stripped_down_step_matches_direct_distillation_update() {
        // HDC off, DTA off, lambda(t) = t: one iteration must equal the
        // plain weighted velocity-matching step computed from scratch.
        let prior = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![2.0], vec![-2.0]],
            vec![0.7, 0.7],
        )
        .unwrap();
        let field = AnalyticField::new(prior);
        let op = LinearOperator::identity(SignalShape::Flat(1)).unwrap();
        let obs = observe(&op, &[0.4], 0.0, 0).unwrap();
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 9);
        cfg.nfe = 1;
        cfg.hdc.enabled = false;
        cfg.dta_enabled = false;
        let mu0 = vec![0.25];
        let out = flair_solve(
            &field,
            &obs,
            &Forward::Linear(&op),
            &Init::Vector(mu0.clone()),
            &cfg,
        )
        .unwrap();

        // direct implementation of the same step
        let t = cfg.time_grid()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let eps_hat: Vec<f64> = (0..1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x_t = (1.0 - t) * mu0[0] + t * eps_hat[0];
        let u = (eps_hat[0] - x_t) / (1.0 - t);
        let v = field.evaluate(&[x_t], t).unwrap()[0];
        let direct = mu0[0] - t * (v - u);
        assert_abs_diff_eq!(out.mu_x_final[0], direct, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_mean_variance_and_forced_identical_seeds() {
        let op = LinearOperator::identity(SignalShape::Flat(1)).unwrap();
        let obs = observe(&op, &[1.0], 0.0, 0).unwrap();
        let field = std_field(1);
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 11);
        cfg.nfe = 10;
        let fwd = Forward::Linear(&op);
        // identical seeds force zero variance
        let ens = posterior_ensemble_seeded(&field, &obs, &fwd, &cfg, &[4, 4]).unwrap();
        assert_abs_diff_eq!(ens.variance[0], 0.0, epsilon = 1e-30);
        // distinct seeds give the documented sample statistics
        let ens = posterior_ensemble(&field, &obs, &fwd, &cfg, 8).unwrap();
        assert_eq!(ens.runs.len(), 8);
        let samples = ens.samples();
        let mean = samples.iter().map(|s| s[0]).sum::<f64>() / 8.0;
        assert_abs_diff_eq!(ens.mean[0], mean, epsilon = 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 0);
        cfg.nfe = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 0);
        cfg.t_stop = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 0);
        cfg.alpha_rule = AlphaRule::Constant(1.5);
        assert!(cfg.validate().is_err());
    }
}
