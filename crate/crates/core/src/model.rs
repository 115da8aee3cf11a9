//! Model specification, parameter containers, and the dwell/emission
//! distributions shared by every other module.
//!
//! Dwell distributions are shifted to strictly positive support and all three
//! families share the convention that `lambda` is the mean dwell length minus
//! one: shifted Poisson has mean λ+1 and variance λ; shifted negative binomial
//! has mean λ+1 and variance λ(1+λ/ρ); the geometric uses self-continuation
//! probability γ = λ/(1+λ) so its mean is also λ+1. Negative binomial with
//! ρ = 1 coincides with the geometric exactly.

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::math::special;
use crate::priors::PriorConfig;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// State dwell-duration family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwellFamily {
    Geometric,
    Poisson,
    NegBinomial,
}

impl DwellFamily {
    pub fn needs_dispersion(self) -> bool {
        matches!(self, DwellFamily::NegBinomial)
    }
}

/// Observation model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionFamily {
    Gaussian,
    HarmonicGaussian,
}

/// Initial distribution over the expanded state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    /// Stationary distribution of the embedded transition matrix.
    Stationary,
    /// Unit mass on the first expanded state of the given state (0-based).
    FixedUnitVector(usize),
}

/// Structural description of a model: number of states, per-state dwell
/// family, dwell-approximation thresholds, emission family and priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_states: usize,
    pub dwell: Vec<DwellFamily>,
    /// Dwell-approximation threshold a_j per state (aggregate sizes).
    pub thresholds: Vec<usize>,
    pub emission: EmissionFamily,
    /// Fixed emission frequency in cycles/observation; harmonic model only.
    pub omega_hat: Option<f64>,
    pub prior: PriorConfig,
    #[serde(default = "default_initial")]
    pub initial: InitialDistribution,
}

fn default_initial() -> InitialDistribution {
    InitialDistribution::Stationary
}

impl ModelSpec {
    pub fn new(
        n_states: usize,
        dwell: Vec<DwellFamily>,
        thresholds: Vec<usize>,
        emission: EmissionFamily,
        omega_hat: Option<f64>,
        prior: PriorConfig,
    ) -> Result<Self> {
        let spec = Self {
            n_states,
            dwell,
            thresholds,
            emission,
            omega_hat,
            prior,
            initial: InitialDistribution::Stationary,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 states, got {}",
                self.n_states
            )));
        }
        if self.dwell.len() != self.n_states {
            return Err(Error::InvalidSpec("one dwell family per state required".into()));
        }
        if self.thresholds.len() != self.n_states {
            return Err(Error::InvalidSpec("one threshold per state required".into()));
        }
        if self.thresholds.iter().any(|&a| a == 0) {
            return Err(Error::InvalidSpec("thresholds must be >= 1".into()));
        }
        match (self.emission, self.omega_hat) {
            (EmissionFamily::HarmonicGaussian, Some(w)) => {
                if !(0.0 < w && w < 0.5) {
                    return Err(Error::InvalidSpec(format!(
                        "omega_hat must lie in (0, 0.5), got {w}"
                    )));
                }
            }
            (EmissionFamily::HarmonicGaussian, None) => {
                return Err(Error::InvalidSpec("harmonic emissions need omega_hat".into()));
            }
            (EmissionFamily::Gaussian, Some(_)) => {
                return Err(Error::InvalidSpec("omega_hat is only valid for harmonic emissions".into()));
            }
            (EmissionFamily::Gaussian, None) => {}
        }
        if let InitialDistribution::FixedUnitVector(j) = self.initial {
            if j >= self.n_states {
                return Err(Error::InvalidSpec(format!("initial state {j} out of range")));
            }
        }
        self.prior.validate(self)?;
        Ok(())
    }

    /// Total expanded dimension Ā = Σ a_j.
    pub fn total_dim(&self) -> usize {
        self.thresholds.iter().sum()
    }

    /// Start index of each state aggregate in the expanded space.
    pub fn aggregate_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.n_states);
        let mut acc = 0;
        for &a in &self.thresholds {
            offsets.push(acc);
            acc += a;
        }
        offsets
    }

    /// Map expanded index -> owning state.
    pub fn owners(&self) -> Vec<usize> {
        let mut owner = Vec::with_capacity(self.total_dim());
        for (j, &a) in self.thresholds.iter().enumerate() {
            owner.extend(std::iter::repeat(j).take(a));
        }
        owner
    }

    /// Number of free parameters: K(K−2) transition, K dwell (+K dispersion
    /// for negative binomial states), plus the per-family emission count.
    pub fn n_free_params(&self) -> usize {
        let k = self.n_states;
        let transitions = k * k.saturating_sub(2);
        let dwell = k + self.dwell.iter().filter(|f| f.needs_dispersion()).count();
        let emission = match self.emission {
            EmissionFamily::Gaussian => 2 * k,
            EmissionFamily::HarmonicGaussian => 4 * k,
        };
        transitions + dwell + emission
    }
}

/// Emission parameters for one state, generic over the evaluation scalar.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionParamsG<S> {
    Gaussian { mu: S, sigma2: S },
    Harmonic { beta0: S, beta1: S, beta2: S, sigma2: S },
}

pub type EmissionParams = EmissionParamsG<f64>;

impl<S: Real> EmissionParamsG<S> {
    pub fn sigma2(&self) -> S {
        match *self {
            EmissionParamsG::Gaussian { sigma2, .. } => sigma2,
            EmissionParamsG::Harmonic { sigma2, .. } => sigma2,
        }
    }

    /// Location parameter used for the ordering constraint.
    pub fn location(&self) -> S {
        match *self {
            EmissionParamsG::Gaussian { mu, .. } => mu,
            EmissionParamsG::Harmonic { beta0, .. } => beta0,
        }
    }
}

impl EmissionParams {
    pub fn gaussian(mu: f64, sigma2: f64) -> Self {
        EmissionParamsG::Gaussian { mu, sigma2 }
    }
}

/// Constrained model parameters, generic over the evaluation scalar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsG<S> {
    /// Between-state transition probabilities; `pi[j][j] == 0` and each row
    /// sums to one. For K = 2 the off-diagonals are fixed at 1.
    pub pi: Vec<Vec<S>>,
    /// Dwell parameter per state (mean dwell − 1).
    pub lambda: Vec<S>,
    /// Negative-binomial dispersion; `Some` exactly for NB states.
    pub rho: Vec<Option<S>>,
    pub emissions: Vec<EmissionParamsG<S>>,
}

pub type ParamVector = ParamsG<f64>;

impl ParamVector {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let k = spec.n_states;
        if self.pi.len() != k || self.lambda.len() != k || self.rho.len() != k
            || self.emissions.len() != k
        {
            return Err(Error::InvalidParam("parameter blocks must have one entry per state".into()));
        }
        for (j, row) in self.pi.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidParam(format!("pi[{j}] must have length K")));
            }
            if row[j] != 0.0 {
                return Err(Error::InvalidParam(format!("pi[{j}][{j}] must be exactly 0")));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidParam(format!("pi[{j}] has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParam(format!("pi[{j}] sums to {sum}, expected 1")));
            }
            if k == 2 {
                let other = 1 - j;
                if (row[other] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParam(
                        "for K = 2 the off-diagonal transition probability is fixed at 1".into(),
                    ));
                }
            }
        }
        for (j, &l) in self.lambda.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParam(format!("lambda[{j}] must be positive, got {l}")));
            }
        }
        for (j, r) in self.rho.iter().enumerate() {
            match (spec.dwell[j].needs_dispersion(), r) {
                (true, Some(v)) if *v > 0.0 && v.is_finite() => {}
                (true, _) => {
                    return Err(Error::InvalidParam(format!(
                        "state {j} uses negative-binomial dwell and needs rho > 0"
                    )))
                }
                (false, None) => {}
                (false, Some(_)) => {
                    return Err(Error::InvalidParam(format!(
                        "state {j} does not take a dispersion parameter"
                    )))
                }
            }
        }
        for (j, e) in self.emissions.iter().enumerate() {
            let matches_family = matches!(
                (spec.emission, e),
                (EmissionFamily::Gaussian, EmissionParamsG::Gaussian { .. })
                    | (EmissionFamily::HarmonicGaussian, EmissionParamsG::Harmonic { .. })
            );
            if !matches_family {
                return Err(Error::InvalidParam(format!(
                    "emission parameters for state {j} do not match the spec family"
                )));
            }
            if e.sigma2() <= 0.0 {
                return Err(Error::InvalidParam(format!("sigma2[{j}] must be positive")));
            }
        }
        Ok(())
    }
}

/// Observed univariate series; time indices are 1-based in the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("time series must have at least one observation".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite observation at row {}", i + 1)));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

// ---------------------------------------------------------------------------
// Dwell distributions
// ---------------------------------------------------------------------------

/// Log pmf of the dwell distribution at r ≥ 1, generic over the scalar.
pub fn dwell_log_pmf_g<S: Real>(family: DwellFamily, lambda: S, rho: Option<S>, r: usize) -> S {
    debug_assert!(r >= 1);
    let k = (r - 1) as f64;
    match family {
        DwellFamily::Geometric => {
            // γ = λ/(1+λ): p(r) = (1−γ) γ^{r−1}
            let log1p_l = lambda.ln_1p();
            (lambda.ln() - log1p_l) * k - log1p_l
        }
        DwellFamily::Poisson => {
            lambda.ln() * k - lambda - special::ln_gamma(k + 1.0)
        }
        DwellFamily::NegBinomial => {
            let rho = rho.expect("negative binomial needs rho");
            let log_denom = (rho + lambda).ln();
            (rho + k).ln_gamma() - rho.ln_gamma() - special::ln_gamma(k + 1.0)
                + rho * (rho.ln() - log_denom)
                + (lambda.ln() - log_denom) * k
        }
    }
}

fn check_dwell_args(family: DwellFamily, lambda: f64, rho: Option<f64>, r: usize) -> Result<()> {
    if r < 1 {
        return Err(Error::Domain("dwell index r must be >= 1".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    match (family.needs_dispersion(), rho) {
        (true, Some(p)) if p > 0.0 => Ok(()),
        (true, _) => Err(Error::Domain("negative binomial needs rho > 0".into())),
        (false, Some(_)) => Err(Error::Domain(format!("{family:?} does not take rho"))),
        (false, None) => Ok(()),
    }
}

/// Probability that the dwell lasts exactly `r` steps.
pub fn dwell_pmf(family: DwellFamily, lambda: f64, rho: Option<f64>, r: usize) -> Result<f64> {
    check_dwell_args(family, lambda, rho, r)?;
    Ok(dwell_log_pmf_g(family, lambda, rho, r).exp())
}

/// Probability that the dwell lasts at least `r` steps:
/// p(d ≥ r) = 1 − Σ_{s<r} p(d = s); equals 1 for r = 1.
pub fn dwell_survival(family: DwellFamily, lambda: f64, rho: Option<f64>, r: usize) -> Result<f64> {
    check_dwell_args(family, lambda, rho, r)?;
    let mut cum = 0.0f64;
    for s in 1..r {
        cum += dwell_log_pmf_g(family, lambda, rho, s).exp();
    }
    Ok((1.0 - cum).max(0.0))
}

/// Mean of the (shifted) dwell distribution: λ + 1 for every family.
pub fn dwell_mean(lambda: f64) -> f64 {
    lambda + 1.0
}

// ---------------------------------------------------------------------------
// Emission densities
// ---------------------------------------------------------------------------

/// Gaussian log-density with generic parameters and fixed observation.
fn gaussian_log_density<S: Real>(y: f64, mean: S, sigma2: S) -> S {
    let d = mean.rsub(y);
    -(sigma2.ln() + special::LN_2PI) * 0.5 - d * d / (sigma2 * 2.0)
}

/// Emission log-density at observation `y` and time `t` (1-based; only used
/// by the harmonic family).
pub fn emission_log_density_g<S: Real>(
    params: &EmissionParamsG<S>,
    y: f64,
    t: usize,
    omega_hat: Option<f64>,
) -> S {
    match *params {
        EmissionParamsG::Gaussian { mu, sigma2 } => gaussian_log_density(y, mu, sigma2),
        EmissionParamsG::Harmonic { beta0, beta1, beta2, sigma2 } => {
            let w = omega_hat.expect("harmonic emissions need omega_hat");
            let phase = 2.0 * PI * w * t as f64;
            let mean = beta0 + beta1 * phase.cos() + beta2 * phase.sin();
            gaussian_log_density(y, mean, sigma2)
        }
    }
}

/// Emission log-density with argument validation.
pub fn emission_logdensity(
    params: &EmissionParams,
    y: f64,
    t: usize,
    omega_hat: Option<f64>,
) -> Result<f64> {
    if params.sigma2() <= 0.0 {
        return Err(Error::Domain(format!("sigma2 must be positive, got {}", params.sigma2())));
    }
    if matches!(params, EmissionParamsG::Harmonic { .. }) && omega_hat.is_none() {
        return Err(Error::Domain("harmonic emissions need omega_hat".into()));
    }
    Ok(emission_log_density_g(params, y, t, omega_hat))
}

/// Gaussian CDF of the emission distribution at `y` (used by pseudo-residuals).
pub fn emission_cdf(params: &EmissionParams, y: f64, t: usize, omega_hat: Option<f64>) -> f64 {
    let (mean, sigma2) = match *params {
        EmissionParamsG::Gaussian { mu, sigma2 } => (mu, sigma2),
        EmissionParamsG::Harmonic { beta0, beta1, beta2, sigma2 } => {
            let w = omega_hat.expect("harmonic emissions need omega_hat");
            let phase = 2.0 * PI * w * t as f64;
            (beta0 + beta1 * phase.cos() + beta2 * phase.sin(), sigma2)
        }
    };
    special::normal_cdf((y - mean) / sigma2.sqrt())
}
