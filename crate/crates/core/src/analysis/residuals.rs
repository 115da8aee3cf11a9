//! Normal pseudo-residuals: probit-transformed leave-one-out predictive CDF
//! values, standard normal under a well-specified model.

use crate::embedding::build_phi;
use crate::error::Result;
use crate::likelihood::initial_vector_g;
use crate::model::{
    emission_cdf, emission_log_density_g, ModelSpec, ParamVector, TimeSeries,
};
use crate::math::special::normal_quantile;

/// r_t = Φ⁻¹[ p(Y_t < y_t | y^(−t), η) ] for every t.
pub fn pseudo_residuals(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
) -> Result<Vec<f64>> {
    params.validate(spec)?;
    let phi = build_phi(spec, params)?;
    let pi0 = initial_vector_g(spec, &phi)?;
    let n = phi.dim;
    let t_len = y.len();
    let owner = &phi.owner;

    let density = |t: usize, state: usize| -> f64 {
        emission_log_density_g(&params.emissions[state], y.values()[t - 1], t, spec.omega_hat)
            .exp()
    };

    // Scaled forward pass, keeping every filtered vector.
    let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut scales: Vec<f64> = Vec::with_capacity(t_len);
    let mut prop = Vec::new();
    for t in 1..=t_len {
        let mut alpha: Vec<f64> = if t == 1 {
            (0..n).map(|i| pi0[i] * density(1, owner[i])).collect()
        } else {
            phi.left_mul(alphas.last().unwrap(), &mut prop);
            (0..n).map(|i| prop[i] * density(t, owner[i])).collect()
        };
        let norm: f64 = alpha.iter().sum();
        for v in alpha.iter_mut() {
            *v /= norm;
        }
        alphas.push(alpha);
        scales.push(norm);
    }

    // Scaled backward pass: b[t] ∝ p(y_{t+1..T} | state at t).
    let mut betas: Vec<Vec<f64>> = vec![vec![1.0; n]; t_len];
    for t in (1..t_len).rev() {
        // b_i(t) = Σ_c Φ[i,c] density(t+1, owner(c)) b_c(t+1), rescaled by
        // the forward constant to keep magnitudes bounded.
        let mut weighted: Vec<f64> =
            (0..n).map(|c| density(t + 1, owner[c]) * betas[t][c]).collect();
        let mut out = Vec::new();
        phi.right_mul(&weighted, &mut out);
        for v in out.iter_mut() {
            *v /= scales[t];
        }
        weighted.clear();
        betas[t - 1] = out;
    }

    // Leave-one-out state weights at t exclude the emission term at t.
    let mut residuals = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let predictive: Vec<f64> = if t == 1 {
            (0..n).map(|i| pi0[i]).collect()
        } else {
            phi.left_mul(&alphas[t - 2], &mut prop);
            prop.clone()
        };
        let mut weights: Vec<f64> =
            (0..n).map(|i| predictive[i] * betas[t - 1][i]).collect();
        let norm: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= norm;
        }
        let mut cdf = 0.0;
        for j in 0..spec.n_states {
            let w_state: f64 = (0..n).filter(|&i| owner[i] == j).map(|i| weights[i]).sum();
            cdf += w_state * emission_cdf(&params.emissions[j], y.values()[t - 1], t, spec.omega_hat);
        }
        let clamped = cdf.clamp(1e-12, 1.0 - 1e-12);
        residuals.push(normal_quantile(clamped));
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::special::ks_test_standard_normal;
    use crate::model::{DwellFamily, EmissionFamily, EmissionParams};
    use crate::priors::PriorConfig;
    use crate::simulate::{simulate_hsmm, StartDistribution};

    fn spec_of(k: usize, thresholds: Vec<usize>) -> ModelSpec {
        let families = vec![DwellFamily::Poisson; k];
        let prior = PriorConfig::weakly_informative(k, &families);
        ModelSpec::new(k, families, thresholds, EmissionFamily::Gaussian, None, prior).unwrap()
    }

    #[test]
    fn identical_states_reduce_to_plain_standardization() {
        // Both states share N(1.5, 4): r_t must equal (y_t − 1.5)/2 exactly.
        let spec = spec_of(2, vec![3, 3]);
        let params = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![2.0, 1.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(1.5, 4.0), EmissionParams::gaussian(1.5, 4.0)],
        };
        let y = TimeSeries::new(vec![0.3, 2.0, 1.5, -1.0, 4.2]).unwrap();
        let r = pseudo_residuals(&spec, &params, &y).unwrap();
        for (rt, &yt) in r.iter().zip(y.values()) {
            assert!((rt - (yt - 1.5) / 2.0).abs() < 1e-9, "{rt} vs {}", (yt - 1.5) / 2.0);
        }
    }

    #[test]
    fn residuals_are_standard_normal_under_the_true_model() {
        let spec = spec_of(2, vec![8, 8]);
        let params = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![3.0, 2.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(0.0, 1.0), EmissionParams::gaussian(4.0, 1.5)],
        };
        let mut passes = 0;
        for seed in 0..10 {
            let sim =
                simulate_hsmm(&spec, &params, 500, 100 + seed, &StartDistribution::Uniform)
                    .unwrap();
            let r = pseudo_residuals(&spec, &params, &sim.y).unwrap();
            let (_, p) = ks_test_standard_normal(&r);
            if p > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 9, "only {passes}/10 well-specified fits look normal");
    }

    #[test]
    fn gross_misfit_is_detected() {
        // Fit a single emission law to strongly bimodal two-state data.
        let spec = spec_of(2, vec![8, 8]);
        let truth = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![3.0, 2.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(0.0, 1.0), EmissionParams::gaussian(10.0, 1.0)],
        };
        let sim = simulate_hsmm(&spec, &truth, 500, 9, &StartDistribution::Uniform).unwrap();
        // Misfit: both states collapse onto the pooled mean and variance.
        let mean = sim.y.values().iter().sum::<f64>() / 500.0;
        let var = sim.y.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 499.0;
        let misfit = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![3.0, 2.0],
            rho: vec![None, None],
            emissions: vec![
                EmissionParams::gaussian(mean, var),
                EmissionParams::gaussian(mean, var),
            ],
        };
        let r = pseudo_residuals(&spec, &misfit, &sim.y).unwrap();
        let (_, p) = ks_test_standard_normal(&r);
        assert!(p < 0.01, "misfit undetected: p = {p}");
    }

    #[test]
    fn residuals_are_invariant_to_state_relabeling() {
        let spec = spec_of(2, vec![4, 6]);
        let params = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![3.0, 1.5],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(0.0, 1.0), EmissionParams::gaussian(3.0, 2.0)],
        };
        let spec_swapped = spec_of(2, vec![6, 4]);
        let swapped = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![1.5, 3.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(3.0, 2.0), EmissionParams::gaussian(0.0, 1.0)],
        };
        let y = TimeSeries::new(vec![0.2, 3.1, 2.8, 0.1, -0.4, 2.9, 3.3, 0.0]).unwrap();
        let a = pseudo_residuals(&spec, &params, &y).unwrap();
        let b = pseudo_residuals(&spec_swapped, &swapped, &y).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-10, "{x} vs {z}");
        }
    }
}
