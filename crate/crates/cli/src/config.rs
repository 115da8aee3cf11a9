//! Run configuration: a single JSON file schema shared by all subcommands.
//! Unknown keys are rejected so configs stay honest across versions.

use hsmm_core::model::{DwellFamily, EmissionFamily, InitialDistribution, ModelSpec};
use hsmm_core::priors::{
    calibrate_comparable_priors, comparable_prior_config, DwellPrior, GammaPrior, InvGammaPrior,
    NormalPrior, PriorConfig,
};
use hsmm_core::inference::SamplerSettings;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub priors: PriorsConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Output directory for run artifacts.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub forecast: Option<ForecastConfig>,
    #[serde(default)]
    pub select: Option<SelectConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub find_frequency: Option<FrequencyConfig>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

fn default_output_dir() -> String {
    "runs/latest".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: String,
    /// Column name (header) holding the observations.
    pub column: String,
    /// Apply a square-root transform on ingestion.
    #[serde(default)]
    pub sqrt_transform: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_states: usize,
    /// One dwell family per state, or a single entry applied to all.
    pub dwell: Vec<DwellFamily>,
    /// One threshold per state, or a single entry applied to all.
    pub thresholds: Vec<usize>,
    #[serde(default = "default_emission")]
    pub emission: EmissionFamily,
    #[serde(default)]
    pub omega_hat: Option<f64>,
    #[serde(default = "default_initial")]
    pub initial: InitialDistribution,
}

fn default_emission() -> EmissionFamily {
    EmissionFamily::Gaussian
}

fn default_initial() -> InitialDistribution {
    InitialDistribution::Stationary
}

/// Either explicit hyperparameters or comparable-prior targets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsConfig {
    /// Per-state target (mean, variance) of the dwell time; triggers the
    /// comparable-prior calibration shared across dwell families.
    #[serde(default)]
    pub comparable_targets: Option<Vec<TargetMoments>>,
    /// Explicit per-state dwell priors (ignored when targets are given).
    #[serde(default)]
    pub dwell: Option<Vec<DwellPrior>>,
    #[serde(default)]
    pub dirichlet_alpha: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub inv_rho: Option<Vec<Option<GammaPrior>>>,
    #[serde(default)]
    pub location: Option<Vec<NormalPrior>>,
    #[serde(default)]
    pub harmonic_coef: Option<NormalPrior>,
    #[serde(default)]
    pub sigma2: Option<Vec<InvGammaPrior>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMoments {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub max_tree_depth: usize,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 1,
            max_tree_depth: 10,
            target_accept: 0.8,
        }
    }
}

impl SamplerConfig {
    pub fn to_settings(&self) -> SamplerSettings {
        SamplerSettings {
            n_chains: self.chains,
            n_warmup: self.warmup,
            n_draws: self.draws,
            seed: self.seed,
            max_depth: self.max_tree_depth,
            target_accept: self.target_accept,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    /// Number of trailing observations held out as the test set.
    pub horizon: usize,
    /// Re-filter on each scored test point instead of the static filter.
    #[serde(default)]
    pub rolling: bool,
    /// Thinning stride over posterior draws for the Bayesian score.
    #[serde(default = "default_thin")]
    pub thin: usize,
}

fn default_thin() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    /// Dwell families to compare (each fitted with comparable priors).
    pub families: Vec<DwellFamily>,
    /// Expanded-state thresholds per family, one vector per family; entries
    /// of length one broadcast over states.
    #[serde(default)]
    pub thresholds: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_len: usize,
    pub seed: u64,
    /// "hsmm" (exact), "embedded", or "hmm" (geometric dwell).
    #[serde(default = "default_generator")]
    pub generator: String,
    /// Generating parameters as a flat JSON object; see the README schema.
    pub params: SimPar,
}

fn default_generator() -> String {
    "hsmm".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPar {
    pub pi: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub rho: Option<Vec<Option<f64>>>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    #[serde(default)]
    pub beta1: Option<Vec<f64>>,
    #[serde(default)]
    pub beta2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrequencyConfig {
    pub n_iter: usize,
    pub phi_omega: f64,
    pub pi_omega: f64,
    pub seed: u64,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        Self { n_iter: 5000, phi_omega: 0.1, pi_omega: 0.1, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub rel_tolerance: f64,
    pub decrease_tail_prob: f64,
    pub seed: u64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { rel_tolerance: 0.10, decrease_tail_prob: 0.999, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub t_len: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { t_len: 2000, repeats: 5, seed: 13 }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let k = self.model.n_states;
        if k < 2 {
            return Err(ConfigError::Invalid("model.n_states must be at least 2".into()));
        }
        if !(self.model.dwell.len() == k || self.model.dwell.len() == 1) {
            return Err(ConfigError::Invalid(
                "model.dwell needs one family per state (or a single shared entry)".into(),
            ));
        }
        if !(self.model.thresholds.len() == k || self.model.thresholds.len() == 1) {
            return Err(ConfigError::Invalid(
                "model.thresholds needs one entry per state (or a single shared entry)".into(),
            ));
        }
        if let Some(targets) = &self.priors.comparable_targets {
            if targets.len() != k && targets.len() != 1 {
                return Err(ConfigError::Invalid(
                    "priors.comparable_targets needs one entry per state".into(),
                ));
            }
        }
        Ok(())
    }

    fn broadcast<T: Clone>(xs: &[T], k: usize) -> Vec<T> {
        if xs.len() == 1 {
            vec![xs[0].clone(); k]
        } else {
            xs.to_vec()
        }
    }

    /// Dwell families, broadcast to one per state.
    pub fn families(&self) -> Vec<DwellFamily> {
        Self::broadcast(&self.model.dwell, self.model.n_states)
    }

    /// Build the prior configuration for a given family assignment.
    pub fn prior_config(&self, families: &[DwellFamily]) -> Result<PriorConfig, ConfigError> {
        let k = self.model.n_states;
        if let Some(targets) = &self.priors.comparable_targets {
            let targets = Self::broadcast(targets, k);
            let fragments: Result<Vec<_>, _> = targets
                .iter()
                .map(|t| {
                    calibrate_comparable_priors(t.mean, t.variance, k, None)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))
                })
                .collect();
            let fragments = fragments?;
            // Comparable calibration requires a single family across states.
            let family = families[0];
            if families.iter().any(|f| *f != family) {
                return Err(ConfigError::Invalid(
                    "comparable_targets requires a single dwell family across states".into(),
                ));
            }
            let location = self
                .priors
                .location
                .clone()
                .unwrap_or(vec![NormalPrior { mean: 0.0, variance: 100.0 }; k]);
            let sigma2 = self
                .priors
                .sigma2
                .clone()
                .unwrap_or(vec![InvGammaPrior { shape: 2.0, scale: 0.5 }; k]);
            let harmonic = match self.model.emission {
                EmissionFamily::HarmonicGaussian => Some(
                    self.priors
                        .harmonic_coef
                        .unwrap_or(NormalPrior { mean: 0.0, variance: 4.0 }),
                ),
                EmissionFamily::Gaussian => None,
            };
            return Ok(comparable_prior_config(&fragments, family, location, sigma2, harmonic));
        }
        let mut prior = PriorConfig::weakly_informative(k, families);
        if let Some(d) = &self.priors.dwell {
            prior.dwell = Self::broadcast(d, k);
        }
        if let Some(a) = &self.priors.dirichlet_alpha {
            prior.dirichlet_alpha = a.clone();
        }
        if let Some(r) = &self.priors.inv_rho {
            prior.inv_rho = r.clone();
        }
        if let Some(l) = &self.priors.location {
            prior.location = Self::broadcast(l, k);
        }
        if let Some(s) = &self.priors.sigma2 {
            prior.sigma2 = Self::broadcast(s, k);
        }
        if let Some(h) = self.priors.harmonic_coef {
            prior.harmonic_coef = Some(h);
        }
        Ok(prior)
    }

    /// Assemble the model spec for the configured family assignment.
    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let families = self.families();
        self.model_spec_for(&families, &Self::broadcast(&self.model.thresholds, self.model.n_states))
    }

    pub fn model_spec_for(
        &self,
        families: &[DwellFamily],
        thresholds: &[usize],
    ) -> Result<ModelSpec, ConfigError> {
        let prior = self.prior_config(families)?;
        let mut spec = ModelSpec::new(
            self.model.n_states,
            families.to_vec(),
            thresholds.to_vec(),
            self.model.emission,
            self.model.omega_hat,
            prior,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        spec.initial = self.model.initial;
        Ok(spec)
    }

    /// Canonical JSON echo of the configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
