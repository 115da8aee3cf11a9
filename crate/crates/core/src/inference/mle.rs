//! Gradient-based maximum likelihood over unconstrained coordinates, with
//! AIC/BIC for the frequentist model-selection comparisons.

use crate::error::{Error, Result};
use crate::likelihood::loglik_gradient;
use crate::model::{ModelSpec, ParamVector, TimeSeries};
use crate::transform::{constrain, UnconstrainedLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum-likelihood fit summary.
#[derive(Debug, Clone)]
pub struct MleResult {
    pub params: ParamVector,
    pub unconstrained: Vec<f64>,
    pub log_likelihood: f64,
    /// −2 logL + 2p
    pub aic: f64,
    /// −2 logL + p log T
    pub bic: f64,
    pub n_free_params: usize,
    pub restarts_converged: usize,
}

struct Objective<'a> {
    spec: &'a ModelSpec,
    y: &'a TimeSeries,
}

impl Objective<'_> {
    // Negative log-likelihood and gradient; None on a non-finite evaluation.
    fn eval(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        match loglik_gradient(self.spec, u, self.y) {
            Ok((ll, grad)) if ll.is_finite() => {
                Some((-ll, grad.iter().map(|g| -g).collect()))
            }
            _ => None,
        }
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        let (p, _) = constrain(self.spec, u);
        crate::likelihood::log_likelihood(self.spec, &p, self.y)
            .ok()
            .map(|r| -r.log_likelihood)
            .filter(|v| v.is_finite())
    }
}

// Dense BFGS with Armijo backtracking. Returns (u, f) at the optimum.
fn bfgs(obj: &Objective<'_>, start: &[f64], max_iter: usize) -> std::result::Result<(Vec<f64>, f64), String> {
    let dim = start.len();
    let mut u = start.to_vec();
    let (mut f, mut g) = obj.eval(&u).ok_or("non-finite objective at start")?;
    // Inverse Hessian approximation, initialized to identity.
    let mut h = vec![0.0f64; dim * dim];
    for i in 0..dim {
        h[i * dim + i] = 1.0;
    }
    let mut direction = vec![0.0f64; dim];
    for iter in 0..max_iter {
        let gnorm = g.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        if gnorm < 1e-7 * (1.0 + f.abs()) {
            return Ok((u, f));
        }
        for i in 0..dim {
            direction[i] = -(0..dim).map(|j| h[i * dim + j] * g[j]).sum::<f64>();
        }
        let slope: f64 = direction.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            // Reset the approximation if it stops being a descent direction.
            for i in 0..dim {
                for j in 0..dim {
                    h[i * dim + j] = if i == j { 1.0 } else { 0.0 };
                }
                direction[i] = -g[i];
            }
        }
        let slope: f64 = direction.iter().zip(&g).map(|(d, gi)| d * gi).sum();

        // Armijo backtracking.
        let mut step = 1.0f64;
        let mut found = None;
        for _ in 0..50 {
            let trial: Vec<f64> =
                u.iter().zip(&direction).map(|(&ui, &di)| ui + step * di).collect();
            if let Some(f_new) = obj.value(&trial) {
                if f_new <= f + 1e-4 * step * slope {
                    found = Some((trial, f_new));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((u_new, f_new)) = found else {
            return if iter == 0 {
                Err(format!("line search failed at start (|g| = {gnorm:.3e})"))
            } else {
                Ok((u, f)) // converged as far as the line search allows
            };
        };
        let (_, g_new) = obj.eval(&u_new).ok_or("non-finite gradient after line step")?;

        // BFGS update on the inverse Hessian.
        let s: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let s_norm: f64 = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let y_norm: f64 = yv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            let rho = 1.0 / sy;
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let mut hy = vec![0.0f64; dim];
            for i in 0..dim {
                hy[i] = (0..dim).map(|j| h[i * dim + j] * yv[j]).sum();
            }
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..dim {
                for j in 0..dim {
                    h[i * dim + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
        }
        u = u_new;
        f = f_new;
        g = g_new;
    }
    Ok((u, f))
}

/// Maximize the log-likelihood from `n_restarts` over-dispersed starting
/// points, returning the best local optimum with AIC and BIC.
pub fn maximize_likelihood(
    spec: &ModelSpec,
    y: &TimeSeries,
    n_restarts: usize,
    seed: u64,
) -> Result<MleResult> {
    if n_restarts == 0 {
        return Err(Error::Optim("need at least one restart".into()));
    }
    let layout = UnconstrainedLayout::of(spec);
    let obj = Objective { spec, y };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = 0usize;
    let mut failures: Vec<String> = Vec::new();
    for restart in 0..n_restarts {
        let start: Vec<f64> = if restart == 0 {
            data_informed_start(spec, y, &layout)
        } else {
            (0..layout.dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        match bfgs(&obj, &start, 400) {
            Ok((u, f)) => {
                converged += 1;
                if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
                    best = Some((u, f));
                }
            }
            Err(e) => failures.push(format!("restart {restart}: {e}")),
        }
    }
    let Some((u, f)) = best else {
        return Err(Error::Optim(format!(
            "all {n_restarts} restarts failed: {}",
            failures.join("; ")
        )));
    };
    let (params, _) = constrain(spec, &u);
    let log_likelihood = -f;
    let p = spec.n_free_params() as f64;
    let t_len = y.len() as f64;
    Ok(MleResult {
        params,
        unconstrained: u,
        log_likelihood,
        aic: -2.0 * log_likelihood + 2.0 * p,
        bic: -2.0 * log_likelihood + p * t_len.ln(),
        n_free_params: spec.n_free_params(),
        restarts_converged: converged,
    })
}

// Start locations at evenly spaced data quantiles, scales at the pooled
// variance over K, and mean dwells near T/(5K).
fn data_informed_start(
    spec: &ModelSpec,
    y: &TimeSeries,
    layout: &UnconstrainedLayout,
) -> Vec<f64> {
    let k = spec.n_states;
    let mut sorted = y.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| {
        let idx = (q * (sorted.len() - 1) as f64).round() as usize;
        sorted[idx]
    };
    let locs: Vec<f64> = (0..k)
        .map(|j| quantile((j as f64 + 0.5) / k as f64))
        .collect();
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / sorted.len() as f64;
    let sigma2 = (var / k as f64).max(1e-3);

    let mut u = Vec::with_capacity(layout.dim);
    u.push(locs[0]);
    for j in 1..k {
        u.push((locs[j] - locs[j - 1]).max(1e-3).ln());
    }
    if spec.emission == crate::model::EmissionFamily::HarmonicGaussian {
        for _ in 0..k {
            u.push(0.0);
            u.push(0.0);
        }
    }
    for _ in 0..k {
        u.push(sigma2.ln());
    }
    for j in 0..k {
        // Keep the initial mean dwell inside the representable range of the
        // aggregate so the embedded chain is comfortably ergodic.
        let lambda = (y.len() as f64 / (5.0 * k as f64))
            .clamp(1.0, spec.thresholds[j] as f64);
        u.push(lambda.ln());
    }
    for _ in &layout.nb_states {
        u.push(0.0);
    }
    for _ in 0..k * k.saturating_sub(2) {
        u.push(0.0);
    }
    debug_assert_eq!(u.len(), layout.dim);
    u
}

/// AIC from a log-likelihood and a parameter count.
pub fn aic(log_likelihood: f64, n_params: usize) -> f64 {
    -2.0 * log_likelihood + 2.0 * n_params as f64
}

/// BIC from a log-likelihood, parameter count and sample size.
pub fn bic(log_likelihood: f64, n_params: usize, t_len: usize) -> f64 {
    -2.0 * log_likelihood + n_params as f64 * (t_len as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DwellFamily, EmissionFamily, EmissionParams};
    use crate::priors::PriorConfig;
    use crate::simulate::{simulate_hsmm, StartDistribution};

    #[test]
    fn information_criteria_formulas() {
        assert!((aic(-50.0, 2) - 104.0).abs() < 1e-12);
        assert!((bic(-50.0, 2, 100) - 109.21034037197618).abs() < 1e-10);
    }

    #[test]
    fn mle_recovers_a_well_separated_two_state_model() {
        let families = vec![DwellFamily::Poisson; 2];
        let prior = PriorConfig::weakly_informative(2, &families);
        let spec = ModelSpec::new(
            2,
            families,
            vec![8, 8],
            EmissionFamily::Gaussian,
            None,
            prior,
        )
        .unwrap();
        let truth = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![4.0, 2.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(0.0, 1.0), EmissionParams::gaussian(5.0, 1.0)],
        };
        let sim = simulate_hsmm(&spec, &truth, 600, 77, &StartDistribution::Uniform).unwrap();
        let fit = maximize_likelihood(&spec, &sim.y, 3, 1).unwrap();
        // Optimality: the fit must beat the generating parameters.
        let ll_truth =
            crate::likelihood::log_likelihood(&spec, &truth, &sim.y).unwrap().log_likelihood;
        assert!(
            fit.log_likelihood >= ll_truth - 1e-6,
            "{} vs truth {}",
            fit.log_likelihood,
            ll_truth
        );
        // Locations are ordered and close to the truth at this separation.
        let locs: Vec<f64> = fit.params.emissions.iter().map(|e| e.location()).collect();
        assert!((locs[0] - 0.0).abs() < 0.4, "{locs:?}");
        assert!((locs[1] - 5.0).abs() < 0.4, "{locs:?}");
        // Dwell rates within ±30% at this sample size.
        assert!((fit.params.lambda[0] / 4.0 - 1.0).abs() < 0.3, "{:?}", fit.params.lambda);
        assert!((fit.params.lambda[1] / 2.0 - 1.0).abs() < 0.3, "{:?}", fit.params.lambda);
        assert_eq!(fit.n_free_params, 6);
        assert!((fit.aic - (-2.0 * fit.log_likelihood + 12.0)).abs() < 1e-9);
    }
}
