//! JSON experiment configuration: parsing, defaults, validation, and
//! construction of the core objects it describes.
//!
//! Unknown keys are rejected with the list of accepted keys; validation
//! errors name the offending key. See `configs/` in the repository root for
//! ready-to-run examples.

use serde::Deserialize;

use flair_core::solver::{AlphaRule, HdcConfig, RegWeighting, SolverConfig};
use flair_core::{
    GaussianMixture, LinearOperator, OperatorKind, SignalShape, ToyDecoder, TrainConfig,
    WeightMode,
};

use crate::HarnessError;

/// Geometry of the signal space.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Flat { n: usize },
    Raster { height: usize, width: usize },
}

impl ShapeSpec {
    pub fn to_core(self) -> SignalShape {
        match self {
            ShapeSpec::Flat { n } => SignalShape::Flat(n),
            ShapeSpec::Raster { height, width } => SignalShape::Raster { height, width },
        }
    }

    pub fn len(&self) -> usize {
        self.to_core().len()
    }
}

/// Prior over the optimization variable (signal space, or latent space when
/// a decoder is configured).
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    StandardNormal {
        dim: usize,
    },
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    },
    /// Two-component image prior: one mode is a checkerboard, the other a
    /// centered Gaussian bump, both at the configured raster size.
    TwoModeImage {
        #[serde(default = "default_component_sigma")]
        component_sigma: f64,
    },
}

fn default_component_sigma() -> f64 {
    0.1
}

/// Velocity field: exact analytic field for the prior, or a network trained
/// on prior draws.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Analytic,
    Network {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_train_steps")]
        train_steps: usize,
        #[serde(default = "default_train_step_size")]
        train_step_size: f64,
        #[serde(default = "default_train_batch")]
        train_batch: usize,
        #[serde(default)]
        train_seed: u64,
    },
}

fn default_hidden() -> usize {
    64
}
fn default_train_steps() -> usize {
    20_000
}
fn default_train_step_size() -> f64 {
    1e-2
}
fn default_train_batch() -> usize {
    32
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Analytic
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    Downsample { factor: usize },
    Blur { kernel: Vec<f64> },
    Mask { keep: Vec<usize> },
}

/// Toy decoder between the latent variable and signal space.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub latent_dim: usize,
    #[serde(default = "default_decoder_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_decoder_hidden() -> usize {
    32
}

/// Ground-truth source.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// Draw the truth from the prior (through the decoder when configured).
    PriorDraw {
        #[serde(default)]
        seed: u64,
    },
    Checkerboard {
        #[serde(default = "default_cell")]
        cell: usize,
        #[serde(default)]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
    GaussianBump {
        #[serde(default = "default_high")]
        amplitude: f64,
        #[serde(default = "default_radius_frac")]
        radius_frac: f64,
    },
}

fn default_cell() -> usize {
    4
}
fn default_high() -> f64 {
    1.0
}
fn default_radius_frac() -> f64 {
    0.35
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::PriorDraw { seed: 0 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AlphaSpec {
    Named(String),
    Constant { constant: f64 },
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Named("one_minus_t".into())
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HdcSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Omitted: resolved per operator kind (identity/mask 0.5, blur 0.1,
    /// downsample 1.0).
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stop_threshold")]
    pub stop_threshold_per_measurement: f64,
}

fn default_true() -> bool {
    true
}
fn default_max_iters() -> usize {
    2000
}
fn default_stop_threshold() -> f64 {
    1e-4
}

impl Default for HdcSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            step_size: None,
            max_iters: default_max_iters(),
            stop_threshold_per_measurement: default_stop_threshold(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_nfe")]
    pub nfe: usize,
    #[serde(default = "default_t_stop")]
    pub t_stop: f64,
    #[serde(default)]
    pub alpha_rule: AlphaSpec,
    #[serde(default = "default_true")]
    pub dta_enabled: bool,
    #[serde(default)]
    pub hdc: HdcSpec,
    #[serde(default = "default_weighting")]
    pub reg_weighting: String,
}

fn default_nfe() -> usize {
    50
}
fn default_t_stop() -> f64 {
    0.2
}
fn default_weighting() -> String {
    "calibrated".into()
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            nfe: default_nfe(),
            t_stop: default_t_stop(),
            alpha_rule: AlphaSpec::default(),
            dta_enabled: true,
            hdc: HdcSpec::default(),
            reg_weighting: default_weighting(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    #[serde(default = "default_calibration_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_weight_mode")]
    pub weight_mode: String,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

fn default_calibration_samples() -> usize {
    16
}
fn default_weight_mode() -> String {
    "reciprocal".into()
}
fn default_cutoff() -> f64 {
    0.2
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            n_samples: default_calibration_samples(),
            seed: 0,
            weight_mode: default_weight_mode(),
            cutoff: default_cutoff(),
        }
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub shape: ShapeSpec,
    pub prior: PriorSpec,
    #[serde(default)]
    pub field: FieldSpec,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub decoder: Option<DecoderSpec>,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default = "default_sigma_nu")]
    pub sigma_nu: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_peak")]
    pub peak: f64,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_sigma_nu() -> f64 {
    0.01
}
fn default_peak() -> f64 {
    1.0
}
fn default_ensemble() -> usize {
    32
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&body)
    }

    pub fn from_json(body: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(body)
            .map_err(|e| HarnessError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Dimension of the optimization variable (latent when a decoder is
    /// configured, signal otherwise).
    pub fn variable_dim(&self) -> usize {
        match &self.decoder {
            Some(d) => d.latent_dim,
            None => self.shape.len(),
        }
    }

    /// Checks cross-field consistency; errors name the offending key.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |key: &str, why: String| Err(HarnessError::Config(format!("`{key}`: {why}")));

        if self.shape.len() == 0 {
            return bad("shape", "signal must be nonempty".into());
        }
        if self.sigma_nu < 0.0 || !self.sigma_nu.is_finite() {
            return bad("sigma_nu", format!("must be >= 0, got {}", self.sigma_nu));
        }
        if self.peak <= 0.0 {
            return bad("peak", "must be > 0".into());
        }
        if self.solver.nfe == 0 {
            return bad("solver.nfe", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.solver.t_stop) {
            return bad("solver.t_stop", "must lie in [0, 1)".into());
        }
        if let Some(s) = self.solver.hdc.step_size {
            if s <= 0.0 {
                return bad("solver.hdc.step_size", "must be > 0".into());
            }
        }
        if self.solver.hdc.stop_threshold_per_measurement < 0.0 {
            return bad("solver.hdc.stop_threshold_per_measurement", "must be >= 0".into());
        }
        match self.solver.reg_weighting.as_str() {
            "calibrated" | "rsd_omega_t" | "flow_ratio" => {}
            other => {
                return bad(
                    "solver.reg_weighting",
                    format!("unknown weighting `{other}` (calibrated|rsd_omega_t|flow_ratio)"),
                )
            }
        }
        if let AlphaSpec::Named(name) = &self.solver.alpha_rule {
            if name != "one_minus_t" {
                return bad(
                    "solver.alpha_rule",
                    format!("unknown rule `{name}` (one_minus_t or {{\"constant\": c}})"),
                );
            }
        }
        if let AlphaSpec::Constant { constant } = self.solver.alpha_rule {
            if !(0.0..=1.0).contains(&constant) {
                return bad("solver.alpha_rule", "constant must lie in [0, 1]".into());
            }
        }
        match self.calibration.weight_mode.as_str() {
            "reciprocal" | "shifted" => {}
            other => {
                return bad(
                    "calibration.weight_mode",
                    format!("unknown mode `{other}` (reciprocal|shifted)"),
                )
            }
        }
        if self.calibration.n_samples == 0 {
            return bad("calibration.n_samples", "must be >= 1".into());
        }
        if self.ensemble == 0 {
            return bad("ensemble", "must be >= 1".into());
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return bad("seeds", "must be nonempty when given".into());
            }
        }

        // geometry checks
        let var_dim = self.variable_dim();
        match &self.prior {
            PriorSpec::StandardNormal { dim } => {
                if *dim != var_dim {
                    return bad(
                        "prior.dim",
                        format!("must equal the variable dimension {var_dim}, got {dim}"),
                    );
                }
            }
            PriorSpec::Mixture {
                weights,
                means,
                variances,
            } => {
                if weights.len() != means.len() || weights.len() != variances.len() {
                    return bad("prior", "weights/means/variances lengths differ".into());
                }
                for m in means {
                    if m.len() != var_dim {
                        return bad(
                            "prior.means",
                            format!("component dim {} != variable dimension {var_dim}", m.len()),
                        );
                    }
                }
            }
            PriorSpec::TwoModeImage { component_sigma } => {
                if !matches!(self.shape, ShapeSpec::Raster { .. }) {
                    return bad("prior", "two_mode_image needs a raster shape".into());
                }
                if self.decoder.is_some() {
                    return bad("prior", "two_mode_image is a signal-space prior; drop `decoder`".into());
                }
                if *component_sigma <= 0.0 {
                    return bad("prior.component_sigma", "must be > 0".into());
                }
            }
        }
        if let Some(dec) = &self.decoder {
            if dec.latent_dim == 0 || dec.latent_dim >= self.shape.len() {
                return bad(
                    "decoder.latent_dim",
                    format!("must be in 1..{} (signal dim)", self.shape.len()),
                );
            }
        }
        match &self.signal {
            SignalSpec::Checkerboard { cell, .. } => {
                if !matches!(self.shape, ShapeSpec::Raster { .. }) {
                    return bad("signal", "checkerboard needs a raster shape".into());
                }
                if *cell == 0 {
                    return bad("signal.cell", "must be >= 1".into());
                }
                if self.decoder.is_some() {
                    return bad("signal", "pattern signals cannot be used with a decoder".into());
                }
            }
            SignalSpec::GaussianBump { .. } => {
                if !matches!(self.shape, ShapeSpec::Raster { .. }) {
                    return bad("signal", "gaussian_bump needs a raster shape".into());
                }
                if self.decoder.is_some() {
                    return bad("signal", "pattern signals cannot be used with a decoder".into());
                }
            }
            SignalSpec::PriorDraw { .. } => {}
        }

        // the operator itself validates kernel/factor/keep against the shape
        self.build_operator()
            .map_err(|e| HarnessError::Config(format!("`operator`: {e}")))?;
        Ok(())
    }

    pub fn build_operator(&self) -> flair_core::Result<LinearOperator> {
        let shape = self.shape.to_core();
        let kind = match &self.operator {
            OperatorSpec::Identity => OperatorKind::Identity,
            OperatorSpec::Downsample { factor } => OperatorKind::Downsample { factor: *factor },
            OperatorSpec::Blur { kernel } => OperatorKind::Blur {
                kernel: kernel.clone(),
            },
            OperatorSpec::Mask { keep } => OperatorKind::Mask { keep: keep.clone() },
        };
        LinearOperator::new(kind, shape)
    }

    pub fn build_prior(&self) -> Result<GaussianMixture, HarnessError> {
        let prior = match &self.prior {
            PriorSpec::StandardNormal { dim } => GaussianMixture::standard_normal(*dim),
            PriorSpec::Mixture {
                weights,
                means,
                variances,
            } => GaussianMixture::new(weights.clone(), means.clone(), variances.clone())
                .map_err(|e| HarnessError::Config(format!("`prior`: {e}")))?,
            PriorSpec::TwoModeImage { component_sigma } => {
                let (h, w) = match self.shape {
                    ShapeSpec::Raster { height, width } => (height, width),
                    ShapeSpec::Flat { .. } => unreachable!("validated"),
                };
                let board = checkerboard(h, w, 4, 0.0, 1.0);
                let bump = gaussian_bump(h, w, 1.0, 0.35);
                GaussianMixture::new(
                    vec![0.5, 0.5],
                    vec![board, bump],
                    vec![component_sigma * component_sigma; 2],
                )
                .map_err(|e| HarnessError::Config(format!("`prior`: {e}")))?
            }
        };
        Ok(prior)
    }

    pub fn build_decoder(&self) -> Result<Option<ToyDecoder>, HarnessError> {
        match &self.decoder {
            None => Ok(None),
            Some(spec) => ToyDecoder::new(spec.latent_dim, spec.hidden, self.shape.len(), spec.seed)
                .map(Some)
                .map_err(|e| HarnessError::Config(format!("`decoder`: {e}"))),
        }
    }

    pub fn train_config(&self) -> Option<(usize, TrainConfig)> {
        match &self.field {
            FieldSpec::Analytic => None,
            FieldSpec::Network {
                hidden,
                train_steps,
                train_step_size,
                train_batch,
                train_seed,
            } => Some((
                *hidden,
                TrainConfig {
                    steps: *train_steps,
                    step_size: *train_step_size,
                    batch: *train_batch,
                    seed: *train_seed,
                },
            )),
        }
    }

    pub fn weight_mode(&self) -> WeightMode {
        match self.calibration.weight_mode.as_str() {
            "shifted" => WeightMode::Shifted,
            _ => WeightMode::Reciprocal,
        }
    }

    /// Default data-consistency step size for the configured operator.
    pub fn default_hdc_step(&self) -> f64 {
        match self.operator {
            OperatorSpec::Identity | OperatorSpec::Mask { .. } => 0.5,
            OperatorSpec::Blur { .. } => 0.1,
            OperatorSpec::Downsample { .. } => 1.0,
        }
    }

    /// Core solver configuration; the regularizer weighting is supplied by
    /// the caller because calibrated mode owns a table.
    pub fn solver_config(&self, reg_weighting: RegWeighting, seed: u64) -> SolverConfig {
        SolverConfig {
            nfe: self.solver.nfe,
            t_stop: self.solver.t_stop,
            alpha_rule: match &self.solver.alpha_rule {
                AlphaSpec::Named(_) => AlphaRule::OneMinusT,
                AlphaSpec::Constant { constant } => AlphaRule::Constant(*constant),
            },
            hdc: HdcConfig {
                enabled: self.solver.hdc.enabled,
                step_size: self.solver.hdc.step_size.unwrap_or_else(|| self.default_hdc_step()),
                max_iters: self.solver.hdc.max_iters,
                stop_threshold_per_measurement: self.solver.hdc.stop_threshold_per_measurement,
            },
            reg_weighting,
            dta_enabled: self.solver.dta_enabled,
            seed,
        }
    }

    /// Per-run seeds: the explicit list, or 0..ensemble.
    pub fn run_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.ensemble as u64).collect(),
        }
    }
}

/// Checkerboard pattern with the given cell size.
pub fn checkerboard(height: usize, width: usize, cell: usize, low: f64, high: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let v = if ((i / cell) + (j / cell)) % 2 == 0 {
                high
            } else {
                low
            };
            out.push(v);
        }
    }
    out
}

/// Centered Gaussian bump; `radius_frac` scales the standard deviation
/// relative to the shorter side.
pub fn gaussian_bump(height: usize, width: usize, amplitude: f64, radius_frac: f64) -> Vec<f64> {
    let ci = (height as f64 - 1.0) / 2.0;
    let cj = (width as f64 - 1.0) / 2.0;
    let sigma = radius_frac * height.min(width) as f64;
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let r2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            out.push(amplitude * (-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}
