//! Posterior-predictive simulation and the dwell-threshold diagnostic loop:
//! fit on observed data, regenerate from the exact semi-Markov process at the
//! fitted values, refit, and compare the dwell parameters.

use crate::error::{Error, Result};
use crate::inference::{sample_posterior, quantile_sorted, PosteriorDraws, SamplerSettings};
use crate::model::{dwell_survival, ModelSpec, TimeSeries};
use crate::simulate::{simulate_embedded, SimOutput, StartDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Replicated series from the posterior predictive: each replicate simulates
/// the embedded model at one uniformly chosen posterior draw.
pub fn posterior_predictive_simulate(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    t_len: usize,
    n_rep: usize,
    seed: u64,
) -> Result<Vec<SimOutput>> {
    if n_rep == 0 {
        return Ok(Vec::new());
    }
    if draws.is_empty() {
        return Err(Error::Invalid("need posterior draws to simulate from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps = Vec::with_capacity(n_rep);
    for _ in 0..n_rep {
        let idx = rng.gen_range(0..draws.len());
        let rep_seed: u64 = rng.gen();
        reps.push(simulate_embedded(spec, &draws.draws[idx], t_len, rep_seed)?);
    }
    Ok(reps)
}

/// Options for the dwell-threshold diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct DwellDiagnosticConfig {
    pub sampler: SamplerSettings,
    /// Relative dwell-parameter discrepancy tolerated before flagging.
    pub rel_tolerance: f64,
    /// Posterior P(d ≤ a) above which shrinking the threshold is suggested.
    pub decrease_tail_prob: f64,
    /// Length of the synthetic series (defaults to the observed length).
    pub gen_len: Option<usize>,
    pub seed: u64,
}

impl Default for DwellDiagnosticConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerSettings::default(),
            rel_tolerance: 0.10,
            decrease_tail_prob: 0.999,
            gen_len: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DwellStateReport {
    pub state: usize,
    pub threshold: usize,
    pub lambda_obs: f64,
    pub lambda_gen: f64,
    pub rel_error: f64,
    pub ci90_obs: (f64, f64),
    pub gen_inside_ci: bool,
    pub pass: bool,
    /// Posterior probability that a dwell fits inside the threshold.
    pub prob_dwell_within: f64,
    pub recommendation: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DwellDiagnosticReport {
    pub states: Vec<DwellStateReport>,
    pub all_pass: bool,
}

fn lambda_quantiles(draws: &PosteriorDraws, state: usize, q_lo: f64, q_hi: f64) -> (f64, f64) {
    let mut lams: Vec<f64> = draws.draws.iter().map(|p| p.lambda[state]).collect();
    lams.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (quantile_sorted(&lams, q_lo), quantile_sorted(&lams, q_hi))
}

/// Diagnostic for the dwell-approximation thresholds: (1) fit on the observed
/// series, (2) generate a synthetic series from the exact semi-Markov model
/// at the fitted posterior means, (3) refit with the same thresholds, and
/// (4) compare per-state dwell parameters. A state passes when the refit
/// dwell parameter lands within `rel_tolerance` of the observed fit or inside
/// its 90% credible interval.
pub fn dwell_threshold_diagnostic(
    spec: &ModelSpec,
    y: &TimeSeries,
    config: &DwellDiagnosticConfig,
) -> Result<DwellDiagnosticReport> {
    let (obs_draws, _) = sample_posterior(spec, y, &config.sampler)
        .map_err(|e| Error::Sampler(format!("observed-data fit: {e}")))?;
    let obs_mean = obs_draws.mean_params(spec);

    let gen_len = config.gen_len.unwrap_or_else(|| y.len());
    let synthetic = crate::simulate::simulate_hsmm(
        spec,
        &obs_mean,
        gen_len,
        config.seed ^ 0x5851_f42d_4c95_7f2d,
        &StartDistribution::EmbeddedStationaryOwner,
    )
    .map_err(|e| Error::Sampler(format!("synthetic generation: {e}")))?;

    let mut refit_settings = config.sampler.clone();
    refit_settings.seed = config.sampler.seed.wrapping_add(1);
    let (gen_draws, _) = sample_posterior(spec, &synthetic.y, &refit_settings)
        .map_err(|e| Error::Sampler(format!("synthetic refit: {e}")))?;
    let gen_mean = gen_draws.mean_params(spec);

    let mut states = Vec::with_capacity(spec.n_states);
    for j in 0..spec.n_states {
        let lambda_obs = obs_mean.lambda[j];
        let lambda_gen = gen_mean.lambda[j];
        let rel_error = (lambda_gen - lambda_obs).abs() / lambda_obs.abs().max(1e-12);
        let ci90 = lambda_quantiles(&obs_draws, j, 0.05, 0.95);
        let gen_inside_ci = lambda_gen >= ci90.0 && lambda_gen <= ci90.1;
        let pass = rel_error <= config.rel_tolerance || gen_inside_ci;
        // Posterior mass of dwells covered by the threshold.
        let a_j = spec.thresholds[j];
        let prob_dwell_within = obs_draws
            .draws
            .iter()
            .map(|p| {
                1.0 - dwell_survival(spec.dwell[j], p.lambda[j], p.rho[j], a_j + 1)
                    .unwrap_or(0.0)
            })
            .sum::<f64>()
            / obs_draws.len() as f64;
        let recommendation = if !pass {
            format!("increase a[{}]", j + 1)
        } else if prob_dwell_within > config.decrease_tail_prob {
            format!("may decrease a[{}]", j + 1)
        } else {
            format!("keep a[{}]", j + 1)
        };
        states.push(DwellStateReport {
            state: j,
            threshold: a_j,
            lambda_obs,
            lambda_gen,
            rel_error,
            ci90_obs: ci90,
            gen_inside_ci,
            pass,
            prob_dwell_within,
            recommendation,
        });
    }
    let all_pass = states.iter().all(|s| s.pass);
    Ok(DwellDiagnosticReport { states, all_pass })
}

/// Smallest thresholds ã_j whose prior-predictive dwell coverage reaches
/// `prob` (the initialization rule for the diagnostic loop).
pub fn suggest_thresholds(spec: &ModelSpec, prob: f64, seed: u64) -> Result<Vec<usize>> {
    use crate::priors::DwellPrior;
    use rand_distr::{Beta, Distribution, Gamma};
    if !(0.0 < prob && prob < 1.0) {
        return Err(Error::Invalid("coverage probability must be in (0,1)".into()));
    }
    let n_mc = 4000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut thresholds = Vec::with_capacity(spec.n_states);
    for j in 0..spec.n_states {
        // Prior-predictive draws of the mean dwell parameter λ.
        let lambdas: Vec<f64> = (0..n_mc)
            .map(|_| match spec.prior.dwell[j] {
                DwellPrior::Gamma { shape, rate } => {
                    Gamma::new(shape, 1.0 / rate).expect("validated").sample(&mut rng)
                }
                DwellPrior::MeanDwellBeta { v_self, beta } => {
                    let g: f64 = Beta::new(v_self, beta).expect("validated").sample(&mut rng);
                    g / (1.0 - g)
                }
            })
            .collect();
        let rho_prior = spec.prior.inv_rho[j];
        let rhos: Vec<Option<f64>> = (0..n_mc)
            .map(|_| {
                rho_prior.map(|g| {
                    let inv: f64 =
                        Gamma::new(g.shape, 1.0 / g.rate).expect("validated").sample(&mut rng);
                    1.0 / inv.max(1e-12)
                })
            })
            .collect();
        let mut a = 1usize;
        loop {
            let coverage: f64 = lambdas
                .iter()
                .zip(&rhos)
                .map(|(&l, r)| {
                    1.0 - dwell_survival(spec.dwell[j], l, *r, a + 1).unwrap_or(0.0)
                })
                .sum::<f64>()
                / n_mc as f64;
            if coverage >= prob || a >= 5000 {
                break;
            }
            a += 1;
        }
        thresholds.push(a);
    }
    Ok(thresholds)
}
