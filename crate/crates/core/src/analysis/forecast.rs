//! Forecast densities p(ỹ_h | y) = ξ′ Φ^h P(ỹ_h) 1 by iterated sparse
//! products, with frequentist (plug-in) and Bayesian (draw-averaged)
//! logarithmic scores.

use crate::embedding::build_phi;
use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::likelihood::log_likelihood;
use crate::model::{emission_log_density_g, ModelSpec, ParamVector, TimeSeries};

/// How the filtered state distribution evolves over the test horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForecastMode {
    /// ξ stays the training-data filter; horizon-h density uses ξ′Φ^h.
    #[default]
    Static,
    /// Re-filter on each test observation after scoring it.
    Rolling,
}

/// Per-horizon log predictive densities for one parameter value.
#[derive(Debug, Clone)]
pub struct ForecastDensity {
    pub horizon: usize,
    pub per_h_log_density: Vec<f64>,
    /// Filtered terminal distribution used as the forecast seed.
    pub xi: Vec<f64>,
}

struct ForecastEngine<'a> {
    spec: &'a ModelSpec,
    params: &'a ParamVector,
    phi: crate::embedding::SparseTransitionMatrix<f64>,
    /// One-step-propagated state distribution at the current horizon.
    weights: Vec<f64>,
    t_train: usize,
    scratch: Vec<f64>,
}

impl<'a> ForecastEngine<'a> {
    fn new(spec: &'a ModelSpec, params: &'a ParamVector, y_train: &TimeSeries) -> Result<(Self, Vec<f64>)> {
        let fwd = log_likelihood(spec, params, y_train)?;
        let phi = build_phi(spec, params)?;
        Ok((
            Self {
                spec,
                params,
                phi,
                weights: fwd.alpha_t.clone(),
                t_train: y_train.len(),
                scratch: Vec::new(),
            },
            fwd.alpha_t,
        ))
    }

    /// Advance one step: weights ← weightsᵀ Φ.
    fn propagate(&mut self) {
        self.phi.left_mul(&self.weights, &mut self.scratch);
        std::mem::swap(&mut self.weights, &mut self.scratch);
    }

    /// Predictive density of value `v` at horizon `h` under current weights.
    fn density(&self, v: f64, h: usize) -> f64 {
        let t_abs = self.t_train + h;
        let per_state: Vec<f64> = (0..self.spec.n_states)
            .map(|j| {
                emission_log_density_g(&self.params.emissions[j], v, t_abs, self.spec.omega_hat)
                    .exp()
            })
            .collect();
        self.weights
            .iter()
            .enumerate()
            .map(|(l, &w)| w * per_state[self.phi.owner[l]])
            .sum()
    }

    /// Condition the weights on an observed test value (rolling mode).
    fn absorb(&mut self, v: f64, h: usize) {
        let t_abs = self.t_train + h;
        let per_state: Vec<f64> = (0..self.spec.n_states)
            .map(|j| {
                emission_log_density_g(&self.params.emissions[j], v, t_abs, self.spec.omega_hat)
                    .exp()
            })
            .collect();
        let mut norm = 0.0;
        for (l, w) in self.weights.iter_mut().enumerate() {
            *w *= per_state[self.phi.owner[l]];
            norm += *w;
        }
        if norm > 0.0 {
            for w in self.weights.iter_mut() {
                *w /= norm;
            }
        }
    }
}

/// Plug-in forecast log-score Σ_h −log p(ỹ_h | η̂) together with the
/// per-horizon densities.
pub fn forecast_density_frequentist(
    spec: &ModelSpec,
    params: &ParamVector,
    y_train: &TimeSeries,
    y_test: &[f64],
    mode: ForecastMode,
) -> Result<ForecastDensity> {
    if y_test.is_empty() {
        return Err(Error::Invalid("need at least one test observation".into()));
    }
    let (mut engine, xi) = ForecastEngine::new(spec, params, y_train)?;
    let mut per_h = Vec::with_capacity(y_test.len());
    for (idx, &v) in y_test.iter().enumerate() {
        let h = idx + 1;
        engine.propagate();
        per_h.push(engine.density(v, h).ln());
        if mode == ForecastMode::Rolling {
            engine.absorb(v, h);
        }
    }
    Ok(ForecastDensity { horizon: y_test.len(), per_h_log_density: per_h, xi })
}

/// L_freq(ỹ) = Σ_h −log p(ỹ_h | η̂); +∞ with a warning flag if any
/// predictive density underflows to zero.
pub fn forecast_logscore_frequentist(
    spec: &ModelSpec,
    params: &ParamVector,
    y_train: &TimeSeries,
    y_test: &[f64],
    mode: ForecastMode,
) -> Result<f64> {
    let fd = forecast_density_frequentist(spec, params, y_train, y_test, mode)?;
    Ok(fd.per_h_log_density.iter().map(|&ld| -ld).sum())
}

/// Bayesian forecast log-scores for several test series sharing one training
/// segment: per horizon the predictive density is averaged over posterior
/// draws on the probability scale before taking logs.
pub fn forecast_logscore_bayes_multi(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    y_train: &TimeSeries,
    y_tests: &[Vec<f64>],
    mode: ForecastMode,
) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::Invalid("need at least one posterior draw".into()));
    }
    if y_tests.is_empty() {
        return Err(Error::Invalid("need at least one test series".into()));
    }
    let horizon = y_tests[0].len();
    if y_tests.iter().any(|s| s.len() != horizon) || horizon == 0 {
        return Err(Error::Invalid("test series must share a positive horizon".into()));
    }
    // Static mode only when scoring several series against one filter; the
    // rolling filter would entangle the series.
    if mode == ForecastMode::Rolling && y_tests.len() > 1 {
        return Err(Error::Invalid("rolling mode scores one series at a time".into()));
    }

    let n_series = y_tests.len();
    let m = draws.len() as f64;
    // Online log-sum-exp accumulators per (series, horizon).
    let mut acc_max = vec![f64::NEG_INFINITY; n_series * horizon];
    let mut acc_sum = vec![0.0f64; n_series * horizon];

    for params in &draws.draws {
        let (mut engine, _) = ForecastEngine::new(spec, params, y_train)?;
        for h in 1..=horizon {
            engine.propagate();
            for (s, series) in y_tests.iter().enumerate() {
                let ld = engine.density(series[h - 1], h).ln();
                let cell = s * horizon + h - 1;
                if ld > acc_max[cell] {
                    acc_sum[cell] = acc_sum[cell] * (acc_max[cell] - ld).exp() + 1.0;
                    acc_max[cell] = ld;
                } else if ld > f64::NEG_INFINITY {
                    acc_sum[cell] += (ld - acc_max[cell]).exp();
                }
            }
            if mode == ForecastMode::Rolling {
                engine.absorb(y_tests[0][h - 1], h);
            }
        }
    }

    Ok((0..n_series)
        .map(|s| {
            (0..horizon)
                .map(|h| {
                    let cell = s * horizon + h;
                    let log_mean = acc_max[cell] + acc_sum[cell].ln() - m.ln();
                    -log_mean
                })
                .sum()
        })
        .collect())
}

/// Single-series Bayesian log-score.
pub fn forecast_logscore_bayes(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    y_train: &TimeSeries,
    y_test: &[f64],
    mode: ForecastMode,
) -> Result<f64> {
    Ok(forecast_logscore_bayes_multi(spec, draws, y_train, &[y_test.to_vec()], mode)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::special::normal_logpdf;
    use crate::model::{DwellFamily, EmissionFamily, EmissionParams};
    use crate::priors::PriorConfig;

    fn spec_of(k: usize, thresholds: Vec<usize>) -> ModelSpec {
        let families = vec![DwellFamily::Poisson; k];
        let prior = PriorConfig::weakly_informative(k, &families);
        ModelSpec::new(k, families, thresholds, EmissionFamily::Gaussian, None, prior).unwrap()
    }

    fn params_k2() -> ParamVector {
        ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![2.0, 1.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(0.0, 1.0), EmissionParams::gaussian(3.0, 1.5)],
        }
    }

    #[test]
    fn identical_states_reduce_to_a_single_gaussian() {
        // Both states share one emission law, so the state distribution is
        // irrelevant and the forecast is that Gaussian exactly.
        let spec = spec_of(2, vec![3, 3]);
        let mut params = params_k2();
        params.emissions[1] = EmissionParams::gaussian(0.0, 1.0);
        // Ordered-location transforms forbid equal means in sampling, but the
        // forecast math itself accepts them.
        let y_train = TimeSeries::new(vec![0.3, -0.2, 0.5]).unwrap();
        let score = forecast_logscore_frequentist(
            &spec,
            &params,
            &y_train,
            &[0.7],
            ForecastMode::Static,
        )
        .unwrap();
        assert!((score + normal_logpdf(0.7, 0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn one_step_density_is_the_transition_mixture() {
        let spec = spec_of(2, vec![2, 2]);
        let params = params_k2();
        let y_train = TimeSeries::new(vec![0.1]).unwrap();
        let fd = forecast_density_frequentist(
            &spec,
            &params,
            &y_train,
            &[2.4],
            ForecastMode::Static,
        )
        .unwrap();
        // Direct computation: ξ′ Φ P(ỹ) 1.
        let phi = build_phi(&spec, &params).unwrap();
        let mut prop = Vec::new();
        phi.left_mul(&fd.xi, &mut prop);
        let mut expect = 0.0;
        for (l, &w) in prop.iter().enumerate() {
            let j = phi.owner[l];
            expect += w
                * emission_log_density_g(&params.emissions[j], 2.4, 2, None).exp();
        }
        assert!((fd.per_h_log_density[0] - expect.ln()).abs() < 1e-12);
    }

    #[test]
    fn forecast_matches_path_enumeration() {
        // Small expanded space: enumerate h-step transitions exhaustively.
        let spec = spec_of(2, vec![2, 2]);
        let params = params_k2();
        let y_train = TimeSeries::new(vec![0.2, 2.9, 0.4]).unwrap();
        let h_max = 4;
        let fd = forecast_density_frequentist(
            &spec,
            &params,
            &y_train,
            &[1.0, 1.5, -0.2, 3.3],
            ForecastMode::Static,
        )
        .unwrap();
        let phi = build_phi(&spec, &params).unwrap();
        let dense = phi.to_dense();
        let n = phi.dim;
        for h in 1..=h_max {
            // Φ^h by repeated dense multiplication.
            let mut power = vec![0.0; n * n];
            for i in 0..n {
                power[i * n + i] = 1.0;
            }
            for _ in 0..h {
                let mut next = vec![0.0; n * n];
                for i in 0..n {
                    for kk in 0..n {
                        let a = power[i * n + kk];
                        if a == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            next[i * n + j] += a * dense[kk * n + j];
                        }
                    }
                }
                power = next;
            }
            let yv = [1.0, 1.5, -0.2, 3.3][h - 1];
            let t_abs = 3 + h;
            let mut expect = 0.0;
            for i in 0..n {
                for l in 0..n {
                    expect += fd.xi[i]
                        * power[i * n + l]
                        * emission_log_density_g(
                            &params.emissions[phi.owner[l]],
                            yv,
                            t_abs,
                            None,
                        )
                        .exp();
                }
            }
            assert!(
                (fd.per_h_log_density[h - 1] - expect.ln()).abs() < 1e-9,
                "h={h}: {} vs {}",
                fd.per_h_log_density[h - 1],
                expect.ln()
            );
        }
    }

    #[test]
    fn per_horizon_densities_integrate_to_one() {
        let spec = spec_of(2, vec![3, 3]);
        let params = params_k2();
        let y_train = TimeSeries::new(vec![0.0, 3.2, 0.1, 0.3]).unwrap();
        // Trapezoid quadrature over a wide grid.
        let lo = -12.0;
        let hi = 15.0;
        let steps = 2700;
        let dx = (hi - lo) / steps as f64;
        for h in [1usize, 3, 7] {
            let mut mass = 0.0;
            for i in 0..=steps {
                let v = lo + dx * i as f64;
                let mut test = vec![0.0; h];
                test[h - 1] = v;
                let fd = forecast_density_frequentist(
                    &spec,
                    &params,
                    &y_train,
                    &test,
                    ForecastMode::Static,
                )
                .unwrap();
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                mass += w * fd.per_h_log_density[h - 1].exp() * dx;
            }
            assert!((mass - 1.0).abs() < 1e-3, "h={h}: mass {mass}");
        }
    }

    #[test]
    fn consecutive_horizons_are_marginally_consistent() {
        // Integrating the joint (h, h+1) construction over the h-th value
        // reproduces the direct (h+1)-step density.
        let spec = spec_of(2, vec![2, 3]);
        let params = params_k2();
        let y_train = TimeSeries::new(vec![0.2, 2.9]).unwrap();
        let phi = build_phi(&spec, &params).unwrap();
        let (mut engine, xi) = ForecastEngine::new(&spec, &params, &y_train).unwrap();
        engine.propagate();

        let y_next = 1.3;
        // Direct h=2 density.
        let direct = forecast_density_frequentist(
            &spec,
            &params,
            &y_train,
            &[0.0, y_next],
            ForecastMode::Static,
        )
        .unwrap()
        .per_h_log_density[1]
            .exp();

        // Quadrature over the h=1 value of the rolling construction.
        let lo = -10.0;
        let hi = 13.0;
        let steps = 2300;
        let dx = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..=steps {
            let v = lo + dx * i as f64;
            // joint density p(ỹ1 = v, ỹ2 = y_next)
            let mut eng = ForecastEngine {
                spec: &spec,
                params: &params,
                phi: phi.clone(),
                weights: xi.clone(),
                t_train: 2,
                scratch: Vec::new(),
            };
            eng.propagate();
            let p1 = eng.density(v, 1);
            eng.absorb(v, 1);
            eng.propagate();
            let p2 = eng.density(y_next, 2);
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * p1 * p2 * dx;
        }
        assert!((mass - direct).abs() < 1e-3, "{mass} vs {direct}");
    }

    #[test]
    fn single_draw_bayes_score_equals_frequentist_score() {
        let spec = spec_of(2, vec![3, 3]);
        let params = params_k2();
        let y_train = TimeSeries::new(vec![0.0, 3.2, 0.1]).unwrap();
        let y_test = vec![0.5, 2.8, 0.2];
        let draws = PosteriorDraws {
            draws: vec![params.clone()],
            unconstrained: vec![vec![]],
            lp: vec![0.0],
            chain: vec![0],
            n_warmup: 0,
            seed: 0,
        };
        let freq = forecast_logscore_frequentist(
            &spec, &params, &y_train, &y_test, ForecastMode::Static,
        )
        .unwrap();
        let bayes =
            forecast_logscore_bayes(&spec, &draws, &y_train, &y_test, ForecastMode::Static)
                .unwrap();
        assert!((freq - bayes).abs() < 1e-12);
    }

    #[test]
    fn duplicated_draws_leave_the_score_unchanged() {
        let spec = spec_of(2, vec![3, 3]);
        let params = params_k2();
        let y_train = TimeSeries::new(vec![0.0, 3.2, 0.1]).unwrap();
        let y_test = vec![0.5, 2.8];
        let single = PosteriorDraws {
            draws: vec![params.clone()],
            unconstrained: vec![vec![]],
            lp: vec![0.0],
            chain: vec![0],
            n_warmup: 0,
            seed: 0,
        };
        let tripled = PosteriorDraws {
            draws: vec![params.clone(), params.clone(), params.clone()],
            unconstrained: vec![vec![], vec![], vec![]],
            lp: vec![0.0; 3],
            chain: vec![0; 3],
            n_warmup: 0,
            seed: 0,
        };
        let a = forecast_logscore_bayes(&spec, &single, &y_train, &y_test, ForecastMode::Static)
            .unwrap();
        let b = forecast_logscore_bayes(&spec, &tripled, &y_train, &y_test, ForecastMode::Static)
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
