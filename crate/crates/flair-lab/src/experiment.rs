//! End-to-end experiment execution: build the prior/field/operator from a
//! config, calibrate, observe, solve per seed (and per ablation variant for
//! sweeps), and evaluate against the truth and the analytic posterior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use flair_core::solver::{RegWeighting, StepTrace};
use flair_core::{
    analytic_posterior, calibrate_with, observe, posterior_ensemble_seeded, train_cfm,
    wasserstein1_1d, AnalyticField, CalibrationTable, Forward, GaussianMixture, LinearOperator,
    MetricReport, NetworkField, Observation, SolveResult, ToyDecoder, VelocityField,
};

use crate::config::{ExperimentConfig, FieldSpec, ShapeSpec, SignalSpec};
use crate::HarnessError;

/// Velocity field selected by the config.
pub enum BuiltField {
    Analytic(AnalyticField),
    Network(NetworkField),
}

impl BuiltField {
    pub fn as_dyn(&self) -> &dyn VelocityField {
        match self {
            BuiltField::Analytic(f) => f,
            BuiltField::Network(f) => f,
        }
    }
}

/// Everything an experiment needs, constructed deterministically from the
/// config.
pub struct Built {
    pub config: ExperimentConfig,
    pub prior: GaussianMixture,
    pub field: BuiltField,
    pub operator: LinearOperator,
    pub decoder: Option<ToyDecoder>,
    /// Ground truth in signal space.
    pub truth_signal: Vec<f64>,
    pub obs: Observation,
    pub calibration: Option<CalibrationTable>,
}

impl Built {
    fn forward(&self) -> Forward<'_> {
        match &self.decoder {
            None => Forward::Linear(&self.operator),
            Some(d) => Forward::Decoded {
                op: &self.operator,
                decoder: d,
            },
        }
    }
}

/// One ablation setting of the three solver components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub hdc: bool,
    pub dta: bool,
    pub crw: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        hdc: true,
        dta: true,
        crw: true,
    };

    pub fn label(&self) -> String {
        match (self.hdc, self.dta, self.crw) {
            (true, true, true) => "full".into(),
            (false, true, true) => "no_hdc".into(),
            (true, false, true) => "no_dta".into(),
            (true, true, false) => "no_crw".into(),
            (false, false, true) => "no_hdc_no_dta".into(),
            (false, true, false) => "no_hdc_no_crw".into(),
            (true, false, false) => "no_dta_no_crw".into(),
            (false, false, false) => "none".into(),
        }
    }

    /// All 2^3 on/off combinations, full first.
    pub fn all() -> Vec<Variant> {
        let mut out = Vec::with_capacity(8);
        for hdc in [true, false] {
            for dta in [true, false] {
                for crw in [true, false] {
                    out.push(Variant { hdc, dta, crw });
                }
            }
        }
        out
    }
}

/// One row of results.csv.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub variant: String,
    pub seed: u64,
    pub mse: f64,
    pub psnr_db: f64,
    pub data_residual: f64,
    /// 1D linear problems only: W1 between the ensemble and analytic
    /// posterior draws (one value per variant, repeated on its rows).
    pub posterior_w1: Option<f64>,
}

/// Results of all runs of one variant.
pub struct VariantOutcome {
    pub label: String,
    pub rows: Vec<RunMetrics>,
    pub traces: Vec<(u64, Vec<StepTrace>)>,
    /// Reconstructions in signal space, by seed.
    pub reconstructions: Vec<(u64, Vec<f64>)>,
    pub ensemble_mean: Vec<f64>,
    /// Present when at least two runs succeeded.
    pub ensemble_variance: Option<Vec<f64>>,
    /// Per-run failures as (seed, message).
    pub failures: Vec<(u64, String)>,
}

/// Full record of one experiment execution.
pub struct RunRecord {
    pub config_hash: String,
    pub shape: ShapeSpec,
    pub truth_signal: Vec<f64>,
    pub observation_embedding: Vec<f64>,
    pub calibration: Option<CalibrationTable>,
    pub variants: Vec<VariantOutcome>,
    /// Variant-level failures as (label, message).
    pub failures: Vec<(String, String)>,
    pub wall_ms: u128,
}

/// Which pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// The configured solver only.
    Solve,
    /// All 8 on/off combinations of {HDC, DTA, CRW}.
    Sweep,
}

/// Canonical hash of the parsed config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canon = format!("{cfg:?}");
    let mut hasher = Sha256::new();
    hasher.update(canon.as_bytes());
    hex::encode(hasher.finalize())
}

/// Builds the deterministic experiment pieces.
pub fn build(config: ExperimentConfig) -> Result<Built, HarnessError> {
    let prior = config.build_prior()?;
    let operator = config.build_operator().map_err(HarnessError::from)?;
    let decoder = config.build_decoder()?;

    let field = match config.train_config() {
        None => BuiltField::Analytic(AnalyticField::new(prior.clone())),
        Some((hidden, tc)) => {
            let init = NetworkField::new(config.variable_dim(), hidden, tc.seed)?;
            let outcome = train_cfm(init, &prior, &tc)?;
            BuiltField::Network(outcome.field)
        }
    };

    let truth_signal = match &config.signal {
        SignalSpec::PriorDraw { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let draw = prior.sample(&mut rng);
            match &decoder {
                Some(d) => d.decode(&draw)?,
                None => draw,
            }
        }
        SignalSpec::Checkerboard { cell, low, high } => match config.shape {
            ShapeSpec::Raster { height, width } => {
                crate::config::checkerboard(height, width, *cell, *low, *high)
            }
            ShapeSpec::Flat { .. } => unreachable!("validated"),
        },
        SignalSpec::GaussianBump {
            amplitude,
            radius_frac,
        } => match config.shape {
            ShapeSpec::Raster { height, width } => {
                crate::config::gaussian_bump(height, width, *amplitude, *radius_frac)
            }
            ShapeSpec::Flat { .. } => unreachable!("validated"),
        },
    };

    let obs = observe(&operator, &truth_signal, config.sigma_nu, config.noise_seed)?;

    let needs_table = matches!(config.field, FieldSpec::Network { .. })
        || config.solver.reg_weighting == "calibrated";
    let calibration = if needs_table {
        let mut rng = ChaCha8Rng::seed_from_u64(config.calibration.seed);
        let samples: Vec<Vec<f64>> = (0..config.calibration.n_samples)
            .map(|_| prior.sample(&mut rng))
            .collect();
        Some(calibrate_with(
            field.as_dyn(),
            &samples,
            config.calibration.seed,
            config.weight_mode(),
            config.calibration.cutoff,
        )?)
    } else {
        None
    };

    Ok(Built {
        config,
        prior,
        field,
        operator,
        decoder,
        truth_signal,
        obs,
        calibration,
    })
}

/// The regularizer weighting a variant runs with. CRW-off replaces the
/// calibrated table with `lambda(t) = t`.
fn variant_weighting(built: &Built, crw: bool) -> Result<RegWeighting, HarnessError> {
    if !crw {
        return Ok(RegWeighting::RsdOmegaT);
    }
    match built.config.solver.reg_weighting.as_str() {
        "rsd_omega_t" => Ok(RegWeighting::RsdOmegaT),
        "flow_ratio" => Ok(RegWeighting::FlowRatio),
        _ => {
            let table = built.calibration.clone().ok_or_else(|| {
                HarnessError::Runtime("calibrated weighting requested without a table".into())
            })?;
            Ok(RegWeighting::Calibrated(table))
        }
    }
}

fn signal_reconstruction(result: &SolveResult) -> Vec<f64> {
    match &result.decoded {
        Some(x) => x.clone(),
        None => result.mu_x_final.clone(),
    }
}

/// Runs all seeds of one ablation variant.
pub fn run_variant(
    built: &Built,
    variant: Variant,
    seeds: &[u64],
) -> Result<VariantOutcome, HarnessError> {
    let label = variant.label();
    let weighting = variant_weighting(built, variant.crw)?;
    let mut cfg = built.config.solver_config(weighting, 0);
    cfg.hdc.enabled = variant.hdc && cfg.hdc.enabled;
    cfg.dta_enabled = variant.dta && cfg.dta_enabled;

    let forward = built.forward();
    let field = built.field.as_dyn();

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut reconstructions = Vec::new();
    let mut failures = Vec::new();
    let mut finals: Vec<(u64, SolveResult)> = Vec::new();

    if seeds.len() >= 2 {
        let ens = posterior_ensemble_seeded(field, &built.obs, &forward, &cfg, seeds)?;
        for run in ens.runs {
            match run.result {
                Ok(res) => finals.push((run.seed, res)),
                Err(e) => failures.push((run.seed, e.to_string())),
            }
        }
    } else {
        let mut one = cfg.clone();
        one.seed = seeds[0];
        match flair_core::flair_solve(field, &built.obs, &forward, &flair_core::Init::Adjoint, &one)
        {
            Ok(res) => finals.push((seeds[0], res)),
            Err(e) => failures.push((seeds[0], e.to_string())),
        }
    }

    // variant-level posterior W1 for scalar linear problems
    let posterior_w1 = if built.config.shape.len() == 1
        && built.decoder.is_none()
        && built.config.sigma_nu > 0.0
        && finals.len() >= 2
    {
        let post = analytic_posterior(
            &built.prior,
            &built.operator,
            built.config.sigma_nu,
            &built.obs.y,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(built.obs.seed ^ 0x9d2c5680);
        let draws: Vec<f64> = (0..4096).map(|_| post.sample(&mut rng)[0]).collect();
        let got: Vec<f64> = finals.iter().map(|(_, r)| r.mu_x_final[0]).collect();
        Some(wasserstein1_1d(&got, &draws)?)
    } else {
        None
    };

    for (seed, res) in &finals {
        let recon = signal_reconstruction(res);
        let report = MetricReport::new(
            &recon,
            &built.truth_signal,
            built.config.peak,
            res.trace.last().map(|s| s.data_residual).unwrap_or(0.0),
        )?;
        rows.push(RunMetrics {
            variant: label.clone(),
            seed: *seed,
            mse: report.mse,
            psnr_db: report.psnr_db,
            data_residual: report.data_residual,
            posterior_w1,
        });
        traces.push((*seed, res.trace.clone()));
        reconstructions.push((*seed, recon));
    }

    // moments over the successful reconstructions (signal space)
    let dim = built.config.shape.len();
    let mut mean = vec![0.0; dim];
    if !reconstructions.is_empty() {
        let inv = 1.0 / reconstructions.len() as f64;
        for (_, r) in &reconstructions {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x * inv;
            }
        }
    }
    let ensemble_variance = if reconstructions.len() >= 2 {
        let mut var = vec![0.0; dim];
        for (_, r) in &reconstructions {
            for ((v, &x), &mu) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - mu) * (x - mu);
            }
        }
        for v in &mut var {
            *v /= (reconstructions.len() - 1) as f64;
        }
        Some(var)
    } else {
        None
    };

    Ok(VariantOutcome {
        label,
        rows,
        traces,
        reconstructions,
        ensemble_mean: mean,
        ensemble_variance,
        failures,
    })
}

/// Executes the configured pipeline and collects every artifact-ready
/// result. Individual run failures are recorded, not fatal; a variant'
/// failure aborts only that variant.
pub fn run_experiment(config: ExperimentConfig, mode: RunMode) -> Result<RunRecord, HarnessError> {
    let start = std::time::Instant::now();
    let hash = config_hash(&config);
    let seeds = config.run_seeds();
    let built = build(config)?;

    let variants_to_run = match mode {
        RunMode::Solve => vec![Variant::FULL],
        RunMode::Sweep => Variant::all(),
    };

    let mut variants = Vec::new();
    let mut failures = Vec::new();
    for v in variants_to_run {
        match run_variant(&built, v, &seeds) {
            Ok(outcome) => variants.push(outcome),
            Err(e) => failures.push((v.label(), e.to_string())),
        }
    }

    let observation_embedding = built.operator.adjoint(&built.obs.y)?;

    Ok(RunRecord {
        config_hash: hash,
        shape: built.config.shape,
        truth_signal: built.truth_signal,
        observation_embedding,
        calibration: built.calibration,
        variants,
        failures,
        wall_ms: start.elapsed().as_millis(),
    })
}
