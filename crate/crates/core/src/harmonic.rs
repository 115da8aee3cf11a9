//! Periodicity identification for harmonic emissions: the periodogram and a
//! Metropolis-within-Gibbs sampler for (ω, β, σ²) under the stationary
//! single-frequency periodic model with a uniform frequency prior on
//! (0, φ_ω). The frequency proposal mixes a periodogram-histogram
//! independence draw with a Gaussian random walk.

use crate::error::{Error, Result};
use crate::math::fft::{dft, dft_direct};
use crate::model::TimeSeries;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;
use std::f64::consts::PI;

/// Periodogram I_h = (1/T)|Σ_t y_t exp(−i2πth/T)|² for h = 0..T−1.
/// Uses the FFT for longer series and the direct sum for short ones; the two
/// paths agree to rounding.
pub fn periodogram(y: &TimeSeries) -> Result<Vec<f64>> {
    if y.len() < 2 {
        return Err(Error::Invalid("periodogram needs at least two observations".into()));
    }
    if y.len() >= 32 {
        Ok(periodogram_fft(y.values()))
    } else {
        Ok(periodogram_direct(y.values()))
    }
}

/// FFT evaluation path.
pub fn periodogram_fft(values: &[f64]) -> Vec<f64> {
    let t_len = values.len();
    let im = vec![0.0; t_len];
    let (re, im) = dft(values, &im);
    re.iter()
        .zip(&im)
        .map(|(&r, &i)| (r * r + i * i) / t_len as f64)
        .collect()
}

/// Direct O(T²) evaluation path, kept as the oracle.
pub fn periodogram_direct(values: &[f64]) -> Vec<f64> {
    let t_len = values.len();
    let im = vec![0.0; t_len];
    let (re, im) = dft_direct(values, &im);
    re.iter()
        .zip(&im)
        .map(|(&r, &i)| (r * r + i * i) / t_len as f64)
        .collect()
}

/// Tuning constants of the frequency sampler.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencySamplerConfig {
    /// Upper bound φ_ω of the uniform frequency prior.
    pub phi_omega: f64,
    /// Prior variance of the harmonic coefficients.
    pub sigma2_beta: f64,
    /// Inverse-Gamma(ξ₀/2, τ₀/2) prior on the residual variance.
    pub xi0: f64,
    pub tau0: f64,
    /// Random-walk proposal variance; `None` uses 1/(25T).
    pub sigma2_omega: Option<f64>,
    /// Probability of the periodogram independence proposal.
    pub pi_omega: f64,
    /// Fraction of iterations discarded as burn-in.
    pub burn_in_frac: f64,
    /// Tune the random-walk scale during burn-in toward
    /// `rw_accept_target`; the kernel is frozen afterwards.
    pub adapt_rw: bool,
    pub rw_accept_target: f64,
}

impl Default for FrequencySamplerConfig {
    fn default() -> Self {
        Self {
            phi_omega: 0.1,
            sigma2_beta: 5.0,
            xi0: 4.0,
            tau0: 1.0,
            sigma2_omega: None,
            pi_omega: 0.1,
            burn_in_frac: 0.2,
            adapt_rw: true,
            rw_accept_target: 0.35,
        }
    }
}

/// Posterior sample of the periodic model.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodicPosterior {
    pub omega_draws: Vec<f64>,
    pub beta_draws: Vec<[f64; 2]>,
    pub sigma2_draws: Vec<f64>,
    pub acceptance_rate: f64,
    /// Post-burn-in posterior mean of ω (the plug-in estimate).
    pub omega_hat: f64,
    pub burn_in: usize,
    /// Set when the periodogram had no mass below φ_ω and the sampler fell
    /// back to pure random-walk proposals.
    pub random_walk_fallback: bool,
}

// Residual sum of squares of the two-column harmonic regression.
fn harmonic_ssr(values: &[f64], omega: f64, beta: [f64; 2]) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let t = (idx + 1) as f64;
            let fit = beta[0] * (2.0 * PI * omega * t).cos() + beta[1] * (2.0 * PI * omega * t).sin();
            (v - fit) * (v - fit)
        })
        .sum()
}

// Log target of ω given β and σ² (up to a constant), with the prior support
// indicator.
fn omega_log_target(values: &[f64], omega: f64, beta: [f64; 2], sigma2: f64, phi: f64) -> f64 {
    if omega <= 0.0 || omega >= phi {
        return f64::NEG_INFINITY;
    }
    -harmonic_ssr(values, omega, beta) / (2.0 * sigma2)
}

// Piecewise-constant periodogram density over bins [h/T, (h+1)/T) for h ≥ 1;
// the DC bin is excluded (frequency 0 is outside the prior support). The
// normalizer cancels in acceptance ratios.
fn q1_log_density(pgram: &[f64], t_len: usize, omega: f64) -> f64 {
    let bin = (omega * t_len as f64).floor() as usize;
    let peak = pgram.iter().cloned().fold(0.0f64, f64::max);
    if bin == 0 || bin >= pgram.len() || pgram[bin] <= peak * 1e-12 {
        f64::NEG_INFINITY
    } else {
        pgram[bin].ln()
    }
}

// Acceptance log-probability for the independence move: target ratio times
// the q₁ reverse/forward correction.
fn accept_log_prob_independence(
    values: &[f64],
    pgram: &[f64],
    current: f64,
    proposal: f64,
    beta: [f64; 2],
    sigma2: f64,
    phi: f64,
) -> f64 {
    let t_len = values.len();
    let target = omega_log_target(values, proposal, beta, sigma2, phi)
        - omega_log_target(values, current, beta, sigma2, phi);
    let correction =
        q1_log_density(pgram, t_len, current) - q1_log_density(pgram, t_len, proposal);
    (target + correction).min(0.0)
}

// Acceptance log-probability for the symmetric random-walk move: the plain
// posterior ratio, no proposal correction.
fn accept_log_prob_random_walk(
    values: &[f64],
    current: f64,
    proposal: f64,
    beta: [f64; 2],
    sigma2: f64,
    phi: f64,
) -> f64 {
    (omega_log_target(values, proposal, beta, sigma2, phi)
        - omega_log_target(values, current, beta, sigma2, phi))
    .min(0.0)
}

// Conditional Gaussian update for β: V = (σ_β⁻²I + σ⁻²X′X)⁻¹, β̂ = Vσ⁻²X′y.
fn beta_conditional(
    values: &[f64],
    omega: f64,
    sigma2: f64,
    sigma2_beta: f64,
) -> ([f64; 2], [f64; 3]) {
    let mut xtx = [0.0f64; 3]; // cc, cs, ss
    let mut xty = [0.0f64; 2];
    for (idx, &v) in values.iter().enumerate() {
        let t = (idx + 1) as f64;
        let c = (2.0 * PI * omega * t).cos();
        let s = (2.0 * PI * omega * t).sin();
        xtx[0] += c * c;
        xtx[1] += c * s;
        xtx[2] += s * s;
        xty[0] += c * v;
        xty[1] += s * v;
    }
    let a = 1.0 / sigma2_beta + xtx[0] / sigma2;
    let b = xtx[1] / sigma2;
    let d = 1.0 / sigma2_beta + xtx[2] / sigma2;
    let det = a * d - b * b;
    let v = [d / det, -b / det, a / det]; // V = precision⁻¹, packed (00, 01, 11)
    let rhs = [xty[0] / sigma2, xty[1] / sigma2];
    let mean = [v[0] * rhs[0] + v[1] * rhs[1], v[1] * rhs[0] + v[2] * rhs[1]];
    (mean, v)
}

fn sample_bivariate_normal(
    rng: &mut ChaCha8Rng,
    mean: [f64; 2],
    cov: [f64; 3],
) -> [f64; 2] {
    // 2×2 Cholesky.
    let l00 = cov[0].sqrt();
    let l10 = cov[1] / l00;
    let l11 = (cov[2] - l10 * l10).max(1e-300).sqrt();
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    [mean[0] + l00 * z0, mean[1] + l10 * z0 + l11 * z1]
}

// Periodogram-histogram sampler over bins intersecting (0, φ_ω).
struct BinSampler {
    cum: Vec<f64>,
    bins: Vec<usize>,
    t_len: usize,
    phi: f64,
}

impl BinSampler {
    fn new(pgram: &[f64], t_len: usize, phi: f64) -> Option<Self> {
        let mut bins = Vec::new();
        let mut cum = Vec::new();
        let mut total = 0.0;
        // Powers at rounding-noise level (relative to the spectrum peak)
        // count as zero mass.
        let peak = pgram.iter().cloned().fold(0.0f64, f64::max);
        let floor = peak * 1e-12;
        // Skip the DC bin: frequency 0 is not in the support.
        for (h, &power) in pgram.iter().enumerate().skip(1) {
            let lo = h as f64 / t_len as f64;
            if lo >= phi {
                break;
            }
            let hi = ((h + 1) as f64 / t_len as f64).min(phi);
            let mass = power * (hi - lo);
            if power > floor && mass > 0.0 {
                total += mass;
                bins.push(h);
                cum.push(total);
            }
        }
        if total <= 0.0 {
            return None;
        }
        for c in cum.iter_mut() {
            *c /= total;
        }
        Some(Self { cum, bins, t_len, phi })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen();
        let idx = self.cum.partition_point(|&c| c < u).min(self.bins.len() - 1);
        let h = self.bins[idx];
        let lo = h as f64 / self.t_len as f64;
        let hi = ((h + 1) as f64 / self.t_len as f64).min(self.phi);
        rng.gen_range(lo..hi)
    }
}

/// Metropolis-within-Gibbs sampler for (ω, β, σ²) under the periodic model.
pub fn sample_frequency_posterior(
    y: &TimeSeries,
    n_iter: usize,
    config: &FrequencySamplerConfig,
    seed: u64,
) -> Result<PeriodicPosterior> {
    if n_iter < 100 {
        return Err(Error::Invalid("need at least 100 iterations".into()));
    }
    if !(0.0 < config.phi_omega && config.phi_omega <= 0.5) {
        return Err(Error::Invalid("phi_omega must lie in (0, 0.5]".into()));
    }
    let values = y.values();
    let t_len = values.len();
    let pgram = periodogram(y)?;
    let sigma2_omega = config.sigma2_omega.unwrap_or(1.0 / (25.0 * t_len as f64));
    let bin_sampler = BinSampler::new(&pgram, t_len, config.phi_omega);
    let random_walk_fallback = bin_sampler.is_none();
    let pi_omega = if random_walk_fallback { 0.0 } else { config.pi_omega };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Start at the dominant periodogram bin inside the support.
    let mut omega = match &bin_sampler {
        Some(bs) => {
            let best = bs
                .bins
                .iter()
                .max_by(|&&a, &&b| pgram[a].partial_cmp(&pgram[b]).unwrap())
                .copied()
                .unwrap();
            ((best as f64 + 0.5) / t_len as f64).min(config.phi_omega * 0.999)
        }
        None => config.phi_omega / 2.0,
    };
    if omega <= 0.0 {
        omega = config.phi_omega / 2.0;
    }
    let mut beta = [0.0f64; 2];
    let mean_y = values.iter().sum::<f64>() / t_len as f64;
    let mut sigma2 =
        values.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / t_len as f64;
    sigma2 = sigma2.max(1e-12);

    let mut omega_draws = Vec::with_capacity(n_iter);
    let mut beta_draws = Vec::with_capacity(n_iter);
    let mut sigma2_draws = Vec::with_capacity(n_iter);
    let mut accepted = 0usize;
    let burn_in = ((n_iter as f64) * config.burn_in_frac).floor() as usize;
    let mut rw_sd = sigma2_omega.sqrt();
    let mut rw_count = 0usize;

    for iter in 0..n_iter {
        // ω move: mixture of independence and random-walk proposals.
        let use_independence = rng.gen::<f64>() < pi_omega;
        let (proposal, log_accept) = if use_independence {
            let prop = bin_sampler.as_ref().expect("fallback excluded").sample(&mut rng);
            let la = accept_log_prob_independence(
                values,
                &pgram,
                omega,
                prop,
                beta,
                sigma2,
                config.phi_omega,
            );
            (prop, la)
        } else {
            let z: f64 = rng.sample(StandardNormal);
            let prop = omega + rw_sd * z;
            let la = accept_log_prob_random_walk(
                values,
                omega,
                prop,
                beta,
                sigma2,
                config.phi_omega,
            );
            (prop, la)
        };
        let took = rng.gen::<f64>().ln() < log_accept;
        if took {
            omega = proposal;
            accepted += 1;
        }
        if !use_independence {
            rw_count += 1;
            if config.adapt_rw && iter < burn_in {
                // Robbins–Monro step on the log scale, frozen after burn-in.
                let gain = (rw_count as f64).powf(-0.6);
                let delta = if took { 1.0 - config.rw_accept_target } else { -config.rw_accept_target };
                rw_sd = (rw_sd * (gain * delta).exp()).clamp(1e-9, config.phi_omega);
            }
        }

        // β Gibbs step.
        let (mean, cov) = beta_conditional(values, omega, sigma2, config.sigma2_beta);
        beta = sample_bivariate_normal(&mut rng, mean, cov);

        // σ² Gibbs step: Inverse-Gamma((T+ξ₀)/2, (τ₀ + SSR)/2).
        let shape = (t_len as f64 + config.xi0) / 2.0;
        let scale = (config.tau0 + harmonic_ssr(values, omega, beta)) / 2.0;
        let g: f64 = Gamma::new(shape, 1.0).expect("valid shape").sample(&mut rng);
        sigma2 = (scale / g).max(1e-300);

        omega_draws.push(omega);
        beta_draws.push(beta);
        sigma2_draws.push(sigma2);
    }

    let kept = &omega_draws[burn_in..];
    let omega_hat = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(PeriodicPosterior {
        omega_draws,
        beta_draws,
        sigma2_draws,
        acceptance_rate: accepted as f64 / n_iter as f64,
        omega_hat,
        burn_in,
        random_walk_fallback,
    })
}

/// Frequency-only sampler at fixed (β, σ²); targets the conditional
/// posterior p(ω | β, σ², y) exactly. Used to validate the ω move against
/// quadrature.
pub fn sample_frequency_conditional(
    y: &TimeSeries,
    beta: [f64; 2],
    sigma2: f64,
    n_iter: usize,
    config: &FrequencySamplerConfig,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let values = y.values();
    let t_len = values.len();
    let pgram = periodogram(y)?;
    let sigma2_omega = config.sigma2_omega.unwrap_or(1.0 / (25.0 * t_len as f64));
    let bin_sampler = BinSampler::new(&pgram, t_len, config.phi_omega);
    let pi_omega = if bin_sampler.is_none() { 0.0 } else { config.pi_omega };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = config.phi_omega / 2.0;
    let mut draws = Vec::with_capacity(n_iter);
    let mut accepted = 0usize;
    let burn_in = ((n_iter as f64) * config.burn_in_frac).floor() as usize;
    let mut rw_sd = sigma2_omega.sqrt();
    let mut rw_count = 0usize;
    for iter in 0..n_iter {
        let use_independence = rng.gen::<f64>() < pi_omega;
        let (proposal, log_accept) = if use_independence {
            let prop = bin_sampler.as_ref().unwrap().sample(&mut rng);
            (
                prop,
                accept_log_prob_independence(
                    values,
                    &pgram,
                    omega,
                    prop,
                    beta,
                    sigma2,
                    config.phi_omega,
                ),
            )
        } else {
            let z: f64 = rng.sample(StandardNormal);
            let prop = omega + rw_sd * z;
            (
                prop,
                accept_log_prob_random_walk(values, omega, prop, beta, sigma2, config.phi_omega),
            )
        };
        let took = rng.gen::<f64>().ln() < log_accept;
        if took {
            omega = proposal;
            accepted += 1;
        }
        if !use_independence {
            rw_count += 1;
            if config.adapt_rw && iter < burn_in {
                let gain = (rw_count as f64).powf(-0.6);
                let delta = if took { 1.0 - config.rw_accept_target } else { -config.rw_accept_target };
                rw_sd = (rw_sd * (gain * delta).exp()).clamp(1e-9, config.phi_omega);
            }
        }
        draws.push(omega);
    }
    Ok((draws, accepted as f64 / n_iter as f64))
}
