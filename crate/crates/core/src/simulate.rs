//! Generators for the exact semi-Markov model, standard Markov chains, and
//! the embedded approximation. Used by tests, the dwell-threshold diagnostic,
//! and the benchmark command.

use crate::embedding::{build_phi, stationary_distribution};
use crate::error::{Error, Result};
use crate::model::{
    DwellFamily, EmissionParamsG, ModelSpec, ParamVector, TimeSeries,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use std::f64::consts::PI;

/// A simulated series with its generating truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub y: TimeSeries,
    /// Generating state (0-based) at each time step.
    pub true_states: Vec<usize>,
    /// (state, dwell) segments; dwells sum to T.
    pub true_segments: Vec<(usize, usize)>,
    /// Whether the final segment was cut off by the end of the series.
    pub censored: bool,
}

/// Initial-state policy for the exact semi-Markov simulator.
#[derive(Debug, Clone)]
pub enum StartDistribution {
    /// Owner-marginal of the embedded chain's stationary distribution.
    EmbeddedStationaryOwner,
    Uniform,
    Fixed(usize),
    Custom(Vec<f64>),
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_dwell<R: Rng>(
    rng: &mut R,
    family: DwellFamily,
    lambda: f64,
    rho: Option<f64>,
) -> usize {
    match family {
        DwellFamily::Geometric => {
            let gamma = lambda / (1.0 + lambda);
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            1 + (u.ln() / gamma.ln()).floor() as usize
        }
        DwellFamily::Poisson => {
            let d: f64 = Poisson::new(lambda).expect("lambda > 0").sample(rng);
            1 + d as usize
        }
        DwellFamily::NegBinomial => {
            let rho = rho.expect("negative binomial needs rho");
            // Gamma–Poisson mixture: rate ~ Gamma(ρ, scale λ/ρ)
            let rate: f64 = Gamma::new(rho, lambda / rho).expect("valid gamma").sample(rng);
            if rate <= 0.0 {
                return 1;
            }
            let d: f64 = Poisson::new(rate.max(1e-300)).expect("rate > 0").sample(rng);
            1 + d as usize
        }
    }
}

fn sample_emission<R: Rng>(
    rng: &mut R,
    params: &EmissionParamsG<f64>,
    t: usize,
    omega_hat: Option<f64>,
) -> f64 {
    let (mean, sigma2) = match *params {
        EmissionParamsG::Gaussian { mu, sigma2 } => (mu, sigma2),
        EmissionParamsG::Harmonic { beta0, beta1, beta2, sigma2 } => {
            let w = omega_hat.expect("harmonic emissions need omega_hat");
            let phase = 2.0 * PI * w * t as f64;
            (beta0 + beta1 * phase.cos() + beta2 * phase.sin(), sigma2)
        }
    };
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    mean + sigma2.sqrt() * z
}

/// Owner-marginal of the embedded stationary distribution.
pub fn embedded_stationary_owner_marginal(
    spec: &ModelSpec,
    params: &ParamVector,
) -> Result<Vec<f64>> {
    let phi = build_phi(spec, params)?;
    let st = stationary_distribution(&phi)?;
    let mut marginal = vec![0.0; spec.n_states];
    for (i, &p) in st.pi0_star.iter().enumerate() {
        marginal[phi.owner[i]] += p;
    }
    Ok(marginal)
}

fn resolve_start(
    spec: &ModelSpec,
    params: &ParamVector,
    start: &StartDistribution,
) -> Result<Vec<f64>> {
    match start {
        StartDistribution::EmbeddedStationaryOwner => {
            embedded_stationary_owner_marginal(spec, params)
        }
        StartDistribution::Uniform => Ok(vec![1.0 / spec.n_states as f64; spec.n_states]),
        StartDistribution::Fixed(j) => {
            if *j >= spec.n_states {
                return Err(Error::Invalid(format!("start state {j} out of range")));
            }
            let mut v = vec![0.0; spec.n_states];
            v[*j] = 1.0;
            Ok(v)
        }
        StartDistribution::Custom(v) => {
            if v.len() != spec.n_states || v.iter().any(|&p| p < 0.0) {
                return Err(Error::Invalid("custom start must be a probability vector".into()));
            }
            Ok(v.clone())
        }
    }
}

/// Simulate from the exact semi-Markov generative process: alternate dwell
/// draws and no-self-transition Markov moves, truncating the final segment
/// at T with a censoring flag.
pub fn simulate_hsmm(
    spec: &ModelSpec,
    params: &ParamVector,
    t_len: usize,
    seed: u64,
    start: &StartDistribution,
) -> Result<SimOutput> {
    if t_len == 0 {
        return Err(Error::Invalid("need t_len >= 1".into()));
    }
    params.validate(spec)?;
    let start = resolve_start(spec, params, start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample_categorical(&mut rng, &start);
    let mut values = Vec::with_capacity(t_len);
    let mut true_states = Vec::with_capacity(t_len);
    let mut segments = Vec::new();
    let mut censored = false;
    let mut t = 0usize;
    while t < t_len {
        let dwell = sample_dwell(&mut rng, spec.dwell[state], params.lambda[state], params.rho[state]);
        let keep = dwell.min(t_len - t);
        if dwell > t_len - t {
            censored = true;
        }
        for _ in 0..keep {
            values.push(sample_emission(&mut rng, &params.emissions[state], t + 1, spec.omega_hat));
            true_states.push(state);
            t += 1;
        }
        segments.push((state, keep));
        if t < t_len {
            state = sample_categorical(&mut rng, &params.pi[state]);
        }
    }
    Ok(SimOutput { y: TimeSeries::new(values)?, true_states, true_segments: segments, censored })
}

/// Simulate a standard Markov chain with transition matrix `gamma`
/// (self-transitions allowed) and per-state emissions. Segments are derived
/// by run-length encoding; the final run is flagged censored.
pub fn simulate_hmm(
    gamma: &[Vec<f64>],
    emissions: &[EmissionParamsG<f64>],
    omega_hat: Option<f64>,
    t_len: usize,
    seed: u64,
    initial: Option<&[f64]>,
) -> Result<SimOutput> {
    let k = gamma.len();
    if k < 1 || gamma.iter().any(|row| row.len() != k) || emissions.len() != k {
        return Err(Error::Invalid("gamma must be square with matching emissions".into()));
    }
    for (j, row) in gamma.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-8 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Invalid(format!("gamma row {j} is not a probability vector")));
        }
    }
    if t_len == 0 {
        return Err(Error::Invalid("need t_len >= 1".into()));
    }
    let uniform = vec![1.0 / k as f64; k];
    let init = initial.unwrap_or(&uniform);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample_categorical(&mut rng, init);
    let mut values = Vec::with_capacity(t_len);
    let mut true_states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        values.push(sample_emission(&mut rng, &emissions[state], t + 1, omega_hat));
        true_states.push(state);
        if t + 1 < t_len {
            state = sample_categorical(&mut rng, &gamma[state]);
        }
    }
    let true_segments = run_length_encode(&true_states);
    Ok(SimOutput { y: TimeSeries::new(values)?, true_states, true_segments, censored: true })
}

/// Simulate the expanded chain under the embedded transition matrix itself,
/// emitting through aggregate owners. Validates the embedding's dwell law.
pub fn simulate_embedded(
    spec: &ModelSpec,
    params: &ParamVector,
    t_len: usize,
    seed: u64,
) -> Result<SimOutput> {
    if t_len == 0 {
        return Err(Error::Invalid("need t_len >= 1".into()));
    }
    let phi = build_phi(spec, params)?;
    let pi0 = match spec.initial {
        crate::model::InitialDistribution::Stationary => {
            stationary_distribution(&phi)?.pi0_star
        }
        crate::model::InitialDistribution::FixedUnitVector(j) => {
            let mut v = vec![0.0; phi.dim];
            v[phi.aggregate_offsets[j]] = 1.0;
            v
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agg = sample_categorical(&mut rng, &pi0);
    let mut values = Vec::with_capacity(t_len);
    let mut true_states = Vec::with_capacity(t_len);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for t in 0..t_len {
        let state = phi.owner[agg];
        values.push(sample_emission(&mut rng, &params.emissions[state], t + 1, spec.omega_hat));
        true_states.push(state);
        if t + 1 < t_len {
            row.clear();
            row.extend(phi.row(agg));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut next = row[row.len() - 1].0;
            for &(c, p) in &row {
                acc += p;
                if u < acc {
                    next = c;
                    break;
                }
            }
            agg = next;
        }
    }
    let true_segments = run_length_encode(&true_states);
    Ok(SimOutput { y: TimeSeries::new(values)?, true_states, true_segments, censored: true })
}

fn run_length_encode(states: &[usize]) -> Vec<(usize, usize)> {
    let mut segments = Vec::new();
    let mut cur = states[0];
    let mut len = 0usize;
    for &s in states {
        if s == cur {
            len += 1;
        } else {
            segments.push((cur, len));
            cur = s;
            len = 1;
        }
    }
    segments.push((cur, len));
    segments
}
