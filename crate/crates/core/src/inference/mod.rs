//! Posterior sampling, chain diagnostics and maximum likelihood.

pub mod diagnostics;
pub mod mle;
pub mod nuts;

pub use mle::{aic, bic, maximize_likelihood, MleResult};
pub use nuts::{nuts_chain, ChainOutput, LogDensityGrad, NutsConfig};

use crate::ad::{Real, Tape};
use crate::error::{Error, Result};
use crate::likelihood::forward_g;
use crate::model::{ModelSpec, ParamVector, TimeSeries};
use crate::priors::log_prior_g;
use crate::transform::{constrain, constrain_g, constrained_names, UnconstrainedLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

thread_local! {
    static EVAL_TAPE: Tape = Tape::new();
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// The model's unnormalized posterior over unconstrained coordinates:
/// log-likelihood + log-prior + transform log-Jacobian.
pub struct ModelPosterior<'a> {
    spec: &'a ModelSpec,
    y: &'a TimeSeries,
    layout: UnconstrainedLayout,
}

impl<'a> ModelPosterior<'a> {
    pub fn new(spec: &'a ModelSpec, y: &'a TimeSeries) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, y, layout: UnconstrainedLayout::of(spec) })
    }

    pub fn layout(&self) -> &UnconstrainedLayout {
        &self.layout
    }

    /// Value-only evaluation (no tape), used by bridge sampling.
    pub fn log_posterior(&self, u: &[f64]) -> f64 {
        let (params, log_jac) = constrain(self.spec, u);
        let Ok((ll, _, _)) = forward_g(self.spec, &params, self.y) else {
            return f64::NEG_INFINITY;
        };
        let lp = ll + log_prior_g(self.spec, &params) + log_jac;
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Log-posterior with gradient by the taped reverse sweep. Non-finite
    /// intermediates surface as a −∞ value (a divergent evaluation), never a
    /// panic.
    pub fn log_posterior_with_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        EVAL_TAPE.with(|tape| {
            tape.clear();
            let vars: Vec<_> = u.iter().map(|&x| tape.var(x)).collect();
            let (params, log_jac) = constrain_g(self.spec, &vars);
            let Ok(ll) = crate::likelihood::forward_fast_var(self.spec, &params, self.y)
            else {
                return (f64::NEG_INFINITY, vec![0.0; u.len()]);
            };
            if !ll.val().is_finite() {
                return (f64::NEG_INFINITY, vec![0.0; u.len()]);
            }
            let lp = ll + log_prior_g(self.spec, &params) + log_jac;
            if !lp.val().is_finite() {
                return (f64::NEG_INFINITY, vec![0.0; u.len()]);
            }
            let adj = tape.gradient(lp);
            let grad: Vec<f64> = vars.iter().map(|v| adj[v.index()]).collect();
            if grad.iter().any(|g| !g.is_finite()) {
                return (f64::NEG_INFINITY, vec![0.0; u.len()]);
            }
            (lp.val(), grad)
        })
    }
}

impl LogDensityGrad for ModelPosterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim
    }
    fn logp_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
        self.log_posterior_with_grad(q)
    }
}

/// Log-posterior density and gradient at unconstrained coordinates.
pub fn log_posterior_and_grad(
    spec: &ModelSpec,
    u: &[f64],
    y: &TimeSeries,
) -> Result<(f64, Vec<f64>)> {
    let posterior = ModelPosterior::new(spec, y)?;
    Ok(posterior.log_posterior_with_grad(u))
}

// One-dimensional k-means (Lloyd, quantile-seeded) over the observations.
fn kmeans_1d(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut centers: Vec<f64> = (0..k)
        .map(|j| sorted[((j as f64 + 0.5) / k as f64 * (n - 1) as f64).round() as usize])
        .collect();
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for _ in 0..30 {
        sums.fill(0.0);
        counts.fill(0);
        for &v in sorted {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, &c) in centers.iter().enumerate() {
                let d = (v - c).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            sums[best] += v;
            counts[best] += 1;
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] > 0 {
                let next = sums[j] / counts[j] as f64;
                moved += (next - centers[j]).abs();
                centers[j] = next;
            }
        }
        if moved < 1e-10 {
            break;
        }
    }
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    centers
}

// Over-dispersed chain start: uniform [−2, 2] on every coordinate except the
// ordered emission locations, which start at jittered 1-D cluster centers of
// the data. Uniform location starts collapse all states onto the low end of
// the data scale and regularly trap chains in merged-state posterior modes;
// cluster-informed starts put every chain in the data-supported basin while
// per-chain jitter keeps the starts dispersed.
fn over_dispersed_init(
    spec: &ModelSpec,
    y: &TimeSeries,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let k = spec.n_states;
    let mut sorted = y.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = (sorted[sorted.len() - 1] - sorted[0]).max(1e-6);
    let centers = kmeans_1d(&sorted, k);
    let min_gap = centers
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(span, f64::min)
        .max(span / 50.0);
    let mut locs: Vec<f64> = centers
        .iter()
        .map(|&c| c + rng.gen_range(-0.25..0.25) * min_gap)
        .collect();
    locs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    u[0] = locs[0];
    for j in 1..k {
        u[j] = (locs[j] - locs[j - 1]).max(span / 100.0).ln();
    }
    u
}

/// Sampler run settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerSettings {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub target_accept: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            seed: 1,
            max_depth: 10,
            target_accept: 0.8,
        }
    }
}

/// Post-warmup posterior draws in both coordinate systems.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<ParamVector>,
    pub unconstrained: Vec<Vec<f64>>,
    pub lp: Vec<f64>,
    pub chain: Vec<usize>,
    pub n_warmup: usize,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Posterior mean of the constrained parameters.
    pub fn mean_params(&self, spec: &ModelSpec) -> ParamVector {
        let flat: Vec<Vec<f64>> = self
            .draws
            .iter()
            .map(|p| crate::transform::flatten_constrained(spec, p))
            .collect();
        let dim = flat[0].len();
        let n = flat.len() as f64;
        let mean: Vec<f64> =
            (0..dim).map(|i| flat.iter().map(|row| row[i]).sum::<f64>() / n).collect();
        unflatten_mean(spec, &mean, &self.draws[0])
    }
}

// Rebuild a ParamVector from reporting-order flattened values, using a
// template for the rho layout.
fn unflatten_mean(spec: &ModelSpec, flat: &[f64], template: &ParamVector) -> ParamVector {
    let k = spec.n_states;
    let mut pos = 0usize;
    let mut emissions = Vec::with_capacity(k);
    for _ in 0..k {
        match spec.emission {
            crate::model::EmissionFamily::Gaussian => {
                emissions.push(crate::model::EmissionParamsG::Gaussian {
                    mu: flat[pos],
                    sigma2: flat[pos + 1],
                });
                pos += 2;
            }
            crate::model::EmissionFamily::HarmonicGaussian => {
                emissions.push(crate::model::EmissionParamsG::Harmonic {
                    beta0: flat[pos],
                    beta1: flat[pos + 1],
                    beta2: flat[pos + 2],
                    sigma2: flat[pos + 3],
                });
                pos += 4;
            }
        }
    }
    let lambda: Vec<f64> = (0..k).map(|j| flat[pos + j]).collect();
    pos += k;
    let mut rho: Vec<Option<f64>> = vec![None; k];
    for j in 0..k {
        if template.rho[j].is_some() {
            rho[j] = Some(flat[pos]);
            pos += 1;
        }
    }
    let mut pi = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut row_sum = 0.0;
        for l in 0..k {
            if l != j {
                pi[j][l] = flat[pos];
                row_sum += flat[pos];
                pos += 1;
            }
        }
        // Means of simplex draws sum to one already; renormalize defensively.
        for l in 0..k {
            pi[j][l] /= row_sum;
        }
        pi[j][j] = 0.0;
    }
    ParamVector { pi, lambda, rho, emissions }
}

/// Convergence and sampler-health summary for one run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainDiagnostics {
    pub param_names: Vec<String>,
    pub split_rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub lp_rhat: f64,
    pub lp_ess: f64,
    pub divergences: usize,
    pub divergence_rate: f64,
    pub mean_accept: f64,
    pub step_sizes: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Draw from the posterior with dynamic HMC: `n_chains` parallel chains from
/// over-dispersed starts, merged deterministically by chain id.
pub fn sample_posterior(
    spec: &ModelSpec,
    y: &TimeSeries,
    settings: &SamplerSettings,
) -> Result<(PosteriorDraws, ChainDiagnostics)> {
    if settings.n_chains < 2 {
        return Err(Error::Sampler("need at least 2 chains for split-R̂".into()));
    }
    let posterior = ModelPosterior::new(spec, y)?;
    let dim = posterior.dim();
    let config = NutsConfig {
        max_depth: settings.max_depth,
        target_accept: settings.target_accept,
        init_step: None,
    };

    let chain_results: Vec<std::result::Result<ChainOutput, String>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..settings.n_chains)
                .map(|chain_id| {
                    let posterior = &posterior;
                    let config = &config;
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                        rng.set_stream(chain_id as u64);
                        let mut init = over_dispersed_init(spec, y, dim, &mut rng);
                        for _ in 0..100 {
                            if posterior.log_posterior(&init).is_finite() {
                                break;
                            }
                            init = over_dispersed_init(spec, y, dim, &mut rng);
                        }
                        nuts_chain(
                            posterior,
                            &init,
                            settings.n_warmup,
                            settings.n_draws,
                            config,
                            &mut rng,
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });

    let mut outputs = Vec::with_capacity(settings.n_chains);
    for (chain_id, res) in chain_results.into_iter().enumerate() {
        match res {
            Ok(out) => outputs.push(out),
            Err(e) => {
                return Err(Error::Sampler(format!("chain {chain_id} failed: {e}")));
            }
        }
    }

    // Merge draws by chain id.
    let mut draws = Vec::with_capacity(settings.n_chains * settings.n_draws);
    let mut unconstrained = Vec::with_capacity(settings.n_chains * settings.n_draws);
    let mut lp = Vec::new();
    let mut chain_ids = Vec::new();
    for (chain_id, out) in outputs.iter().enumerate() {
        for (u, &l) in out.draws.iter().zip(&out.lp) {
            let (params, _) = constrain(spec, u);
            draws.push(params);
            unconstrained.push(u.clone());
            lp.push(l);
            chain_ids.push(chain_id);
        }
    }

    // Diagnostics on the flattened constrained parameters plus lp.
    let names = constrained_names(spec);
    let n_params = names.len();
    let per_chain_flat: Vec<Vec<Vec<f64>>> = outputs
        .iter()
        .map(|out| {
            out.draws
                .iter()
                .map(|u| {
                    let (p, _) = constrain(spec, u);
                    crate::transform::flatten_constrained(spec, &p)
                })
                .collect()
        })
        .collect();
    let mut split_rhat = Vec::with_capacity(n_params);
    let mut ess = Vec::with_capacity(n_params);
    for idx in 0..n_params {
        let traces: Vec<Vec<f64>> = per_chain_flat
            .iter()
            .map(|chain| chain.iter().map(|row| row[idx]).collect())
            .collect();
        split_rhat.push(diagnostics::split_rhat(&traces));
        ess.push(diagnostics::effective_sample_size(&traces));
    }
    let lp_traces: Vec<Vec<f64>> = outputs.iter().map(|o| o.lp.clone()).collect();
    let lp_rhat = diagnostics::split_rhat(&lp_traces);
    let lp_ess = diagnostics::effective_sample_size(&lp_traces);

    let divergences: usize = outputs.iter().map(|o| o.divergences).sum();
    let total_kept = (settings.n_chains * settings.n_draws) as f64;
    let divergence_rate = divergences as f64 / total_kept;
    let mean_accept = outputs
        .iter()
        .flat_map(|o| o.accept_stats.iter())
        .sum::<f64>()
        / total_kept;

    let mut warnings = Vec::new();
    if divergence_rate > 0.01 {
        warnings.push(format!(
            "{:.1}% divergent transitions post-warmup; results are unreliable",
            divergence_rate * 100.0
        ));
    }
    let worst_rhat = split_rhat
        .iter()
        .chain(std::iter::once(&lp_rhat))
        .cloned()
        .fold(f64::NAN, f64::max);
    if worst_rhat > 1.01 {
        warnings.push(format!("split-R̂ up to {worst_rhat:.4} > 1.01; chains may not have mixed"));
    }

    Ok((
        PosteriorDraws {
            draws,
            unconstrained,
            lp,
            chain: chain_ids,
            n_warmup: settings.n_warmup,
            seed: settings.seed,
        },
        ChainDiagnostics {
            param_names: names,
            split_rhat,
            ess,
            lp_rhat,
            lp_ess,
            divergences,
            divergence_rate,
            mean_accept,
            step_sizes: outputs.iter().map(|o| o.step_size).collect(),
            warnings,
        },
    ))
}

/// Per-parameter posterior summary in reporting order.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

/// Summarize draws with means and central 90%/95% credible intervals.
pub fn summarize(spec: &ModelSpec, draws: &PosteriorDraws) -> PosteriorSummary {
    let names = constrained_names(spec);
    let flat: Vec<Vec<f64>> = draws
        .draws
        .iter()
        .map(|p| crate::transform::flatten_constrained(spec, p))
        .collect();
    let n = flat.len();
    let dim = names.len();
    let mut summary = PosteriorSummary {
        names,
        mean: Vec::with_capacity(dim),
        sd: Vec::with_capacity(dim),
        q05: Vec::with_capacity(dim),
        q50: Vec::with_capacity(dim),
        q95: Vec::with_capacity(dim),
        q025: Vec::with_capacity(dim),
        q975: Vec::with_capacity(dim),
    };
    let mut column = vec![0.0f64; n];
    for i in 0..dim {
        for (r, row) in flat.iter().enumerate() {
            column[r] = row[i];
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        summary.mean.push(mean);
        summary.sd.push(var.sqrt());
        summary.q05.push(quantile_sorted(&column, 0.05));
        summary.q50.push(quantile_sorted(&column, 0.50));
        summary.q95.push(quantile_sorted(&column, 0.95));
        summary.q025.push(quantile_sorted(&column, 0.025));
        summary.q975.push(quantile_sorted(&column, 0.975));
    }
    summary
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = q * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
