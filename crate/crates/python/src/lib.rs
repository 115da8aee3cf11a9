//! Python bindings for the core library: model construction, simulation,
//! likelihood evaluation and oracles, posterior sampling, marginal
//! likelihoods, decoding, forecasting, residuals, and the frequency sampler.

use hsmm_core::analysis::{
    forecast_logscore_bayes, forecast_logscore_frequentist, pseudo_residuals, viterbi,
    ForecastMode,
};
use hsmm_core::harmonic::{
    periodogram as core_periodogram, sample_frequency_posterior, FrequencySamplerConfig,
};
use hsmm_core::inference::{
    maximize_likelihood, sample_posterior, summarize, PosteriorDraws, SamplerSettings,
};
use hsmm_core::likelihood::{brute_force_loglik, exact_hsmm_loglik, log_likelihood};
use hsmm_core::model::{
    dwell_pmf, dwell_survival, DwellFamily, EmissionFamily, EmissionParamsG, ModelSpec,
    ParamVector, TimeSeries,
};
use hsmm_core::priors::PriorConfig;
use hsmm_core::selection::bridge_sampling_logml;
use hsmm_core::simulate::{simulate_hsmm, StartDistribution};
use hsmm_core::transform::{constrained_names, flatten_constrained};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_family(name: &str) -> PyResult<DwellFamily> {
    match name.to_ascii_lowercase().as_str() {
        "geometric" => Ok(DwellFamily::Geometric),
        "poisson" => Ok(DwellFamily::Poisson),
        "neg_binomial" | "negbinomial" | "nb" => Ok(DwellFamily::NegBinomial),
        other => Err(PyValueError::new_err(format!("unknown dwell family '{other}'"))),
    }
}

/// Model structure: states, dwell families, thresholds, emission family.
#[pyclass(name = "ModelSpec")]
#[derive(Clone)]
struct PyModelSpec {
    inner: ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[new]
    #[pyo3(signature = (n_states, dwell, thresholds, emission="gaussian", omega_hat=None))]
    fn new(
        n_states: usize,
        dwell: Vec<String>,
        thresholds: Vec<usize>,
        emission: &str,
        omega_hat: Option<f64>,
    ) -> PyResult<Self> {
        let families: PyResult<Vec<DwellFamily>> = dwell.iter().map(|f| parse_family(f)).collect();
        let families = families?;
        let families =
            if families.len() == 1 { vec![families[0]; n_states] } else { families };
        let thresholds =
            if thresholds.len() == 1 { vec![thresholds[0]; n_states] } else { thresholds };
        let emission = match emission.to_ascii_lowercase().as_str() {
            "gaussian" => EmissionFamily::Gaussian,
            "harmonic" | "harmonic_gaussian" => EmissionFamily::HarmonicGaussian,
            other => {
                return Err(PyValueError::new_err(format!("unknown emission family '{other}'")))
            }
        };
        let prior = PriorConfig::weakly_informative(n_states, &families);
        let inner = ModelSpec::new(n_states, families, thresholds, emission, omega_hat, prior)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn total_dim(&self) -> usize {
        self.inner.total_dim()
    }

    /// Names of the constrained parameters in reporting order.
    fn parameter_names(&self) -> Vec<String> {
        constrained_names(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec(n_states={}, thresholds={:?}, total_dim={})",
            self.inner.n_states,
            self.inner.thresholds,
            self.inner.total_dim()
        )
    }
}

/// Constrained model parameters (Gaussian emissions).
#[pyclass(name = "Params")]
#[derive(Clone)]
struct PyParams {
    inner: ParamVector,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (pi, lambda_, mu, sigma2, rho=None))]
    fn new(
        pi: Vec<Vec<f64>>,
        lambda_: Vec<f64>,
        mu: Vec<f64>,
        sigma2: Vec<f64>,
        rho: Option<Vec<Option<f64>>>,
    ) -> PyResult<Self> {
        let k = lambda_.len();
        if mu.len() != k || sigma2.len() != k || pi.len() != k {
            return Err(PyValueError::new_err("parameter blocks must have one entry per state"));
        }
        let emissions = mu
            .iter()
            .zip(&sigma2)
            .map(|(&m, &s)| EmissionParamsG::Gaussian { mu: m, sigma2: s })
            .collect();
        Ok(Self {
            inner: ParamVector {
                pi,
                lambda: lambda_,
                rho: rho.unwrap_or(vec![None; k]),
                emissions,
            },
        })
    }

    #[getter]
    fn lambda_(&self) -> Vec<f64> {
        self.inner.lambda.clone()
    }

    #[getter]
    fn pi(&self) -> Vec<Vec<f64>> {
        self.inner.pi.clone()
    }

    fn flatten(&self, spec: &PyModelSpec) -> Vec<f64> {
        flatten_constrained(&spec.inner, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Params(lambda={:?})", self.inner.lambda)
    }
}

#[pyfunction(name = "dwell_pmf")]
#[pyo3(signature = (family, lambda_, r, rho=None))]
fn py_dwell_pmf(family: &str, lambda_: f64, r: usize, rho: Option<f64>) -> PyResult<f64> {
    dwell_pmf(parse_family(family)?, lambda_, rho, r).map_err(err)
}

#[pyfunction(name = "dwell_survival")]
#[pyo3(signature = (family, lambda_, r, rho=None))]
fn py_dwell_survival(family: &str, lambda_: f64, r: usize, rho: Option<f64>) -> PyResult<f64> {
    dwell_survival(parse_family(family)?, lambda_, rho, r).map_err(err)
}

#[pyfunction(name = "hazard")]
#[pyo3(signature = (family, lambda_, r, rho=None))]
fn py_hazard(family: &str, lambda_: f64, r: usize, rho: Option<f64>) -> PyResult<f64> {
    hsmm_core::embedding::hazard(parse_family(family)?, lambda_, rho, r).map_err(err)
}

/// Scaled forward log-likelihood of the embedded model.
#[pyfunction(name = "log_likelihood")]
fn py_log_likelihood(spec: &PyModelSpec, params: &PyParams, y: Vec<f64>) -> PyResult<f64> {
    let series = TimeSeries::new(y).map_err(err)?;
    Ok(log_likelihood(&spec.inner, &params.inner, &series).map_err(err)?.log_likelihood)
}

/// Exhaustive path-enumeration oracle (guarded to small instances).
#[pyfunction(name = "brute_force_loglik")]
fn py_brute_force(spec: &PyModelSpec, params: &PyParams, y: Vec<f64>) -> PyResult<f64> {
    let series = TimeSeries::new(y).map_err(err)?;
    brute_force_loglik(&spec.inner, &params.inner, &series).map_err(err)
}

/// Exact semi-Markov forward recursion with right censoring.
#[pyfunction(name = "exact_hsmm_loglik")]
fn py_exact(
    spec: &PyModelSpec,
    params: &PyParams,
    y: Vec<f64>,
    initial: Vec<f64>,
) -> PyResult<f64> {
    let series = TimeSeries::new(y).map_err(err)?;
    Ok(exact_hsmm_loglik(&spec.inner, &params.inner, &series, &initial)
        .map_err(err)?
        .log_likelihood)
}

/// Simulate the exact semi-Markov generative process; returns (y, states).
#[pyfunction(name = "simulate_hsmm")]
fn py_simulate(
    spec: &PyModelSpec,
    params: &PyParams,
    t_len: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let sim = simulate_hsmm(
        &spec.inner,
        &params.inner,
        t_len,
        seed,
        &StartDistribution::EmbeddedStationaryOwner,
    )
    .map_err(err)?;
    Ok((sim.y.values().to_vec(), sim.true_states))
}

/// Viterbi decoding; returns the owner-state path (0-based).
#[pyfunction(name = "viterbi")]
fn py_viterbi(spec: &PyModelSpec, params: &PyParams, y: Vec<f64>) -> PyResult<Vec<usize>> {
    let series = TimeSeries::new(y).map_err(err)?;
    Ok(viterbi(&spec.inner, &params.inner, &series).map_err(err)?.state_path)
}

/// Normal pseudo-residuals.
#[pyfunction(name = "pseudo_residuals")]
fn py_residuals(spec: &PyModelSpec, params: &PyParams, y: Vec<f64>) -> PyResult<Vec<f64>> {
    let series = TimeSeries::new(y).map_err(err)?;
    pseudo_residuals(&spec.inner, &params.inner, &series).map_err(err)
}

/// Posterior sample with dynamic HMC; returns a dict with draws (row-major,
/// constrained reporting order), names, lp, chains, and diagnostics.
#[pyfunction(name = "sample_posterior")]
#[pyo3(signature = (spec, y, n_chains=2, n_warmup=500, n_draws=500, seed=1))]
fn py_sample_posterior(
    py: Python<'_>,
    spec: &PyModelSpec,
    y: Vec<f64>,
    n_chains: usize,
    n_warmup: usize,
    n_draws: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let series = TimeSeries::new(y).map_err(err)?;
    let settings = SamplerSettings { n_chains, n_warmup, n_draws, seed, ..Default::default() };
    let (draws, diag) = sample_posterior(&spec.inner, &series, &settings).map_err(err)?;
    let flat: Vec<Vec<f64>> =
        draws.draws.iter().map(|p| flatten_constrained(&spec.inner, p)).collect();
    let summary = summarize(&spec.inner, &draws);
    let out = PyDict::new_bound(py);
    out.set_item("names", constrained_names(&spec.inner))?;
    out.set_item("draws", flat)?;
    out.set_item("lp", draws.lp.clone())?;
    out.set_item("chain", draws.chain.clone())?;
    out.set_item("mean", summary.mean)?;
    out.set_item("q025", summary.q025)?;
    out.set_item("q975", summary.q975)?;
    out.set_item("split_rhat", diag.split_rhat)?;
    out.set_item("ess", diag.ess)?;
    out.set_item("divergences", diag.divergences)?;
    out.set_item("warnings", diag.warnings)?;
    Ok(out.into())
}

/// Bridge-sampled log marginal likelihood of a fitted model.
#[pyfunction(name = "log_marginal_likelihood")]
#[pyo3(signature = (spec, y, n_chains=2, n_warmup=500, n_draws=500, seed=1))]
fn py_logml(
    spec: &PyModelSpec,
    y: Vec<f64>,
    n_chains: usize,
    n_warmup: usize,
    n_draws: usize,
    seed: u64,
) -> PyResult<f64> {
    let series = TimeSeries::new(y).map_err(err)?;
    let settings = SamplerSettings { n_chains, n_warmup, n_draws, seed, ..Default::default() };
    let (draws, _) = sample_posterior(&spec.inner, &series, &settings).map_err(err)?;
    Ok(bridge_sampling_logml(&spec.inner, &series, &draws).map_err(err)?.log_ml)
}

/// Maximum-likelihood fit; returns (log_likelihood, aic, bic, params).
#[pyfunction(name = "fit_mle")]
#[pyo3(signature = (spec, y, n_restarts=3, seed=1))]
fn py_mle(
    spec: &PyModelSpec,
    y: Vec<f64>,
    n_restarts: usize,
    seed: u64,
) -> PyResult<(f64, f64, f64, PyParams)> {
    let series = TimeSeries::new(y).map_err(err)?;
    let fit = maximize_likelihood(&spec.inner, &series, n_restarts, seed).map_err(err)?;
    Ok((fit.log_likelihood, fit.aic, fit.bic, PyParams { inner: fit.params }))
}

/// Plug-in forecast log-score, plus the posterior-averaged score when draws
/// are supplied.
#[pyfunction(name = "forecast_scores")]
#[pyo3(signature = (spec, params, y_train, y_test, draws=None))]
fn py_forecast(
    spec: &PyModelSpec,
    params: &PyParams,
    y_train: Vec<f64>,
    y_test: Vec<f64>,
    draws: Option<Vec<PyParams>>,
) -> PyResult<(f64, Option<f64>)> {
    let train = TimeSeries::new(y_train).map_err(err)?;
    let freq = forecast_logscore_frequentist(
        &spec.inner,
        &params.inner,
        &train,
        &y_test,
        ForecastMode::Static,
    )
    .map_err(err)?;
    let bayes = match draws {
        Some(ds) if !ds.is_empty() => {
            let posterior = PosteriorDraws {
                draws: ds.iter().map(|p| p.inner.clone()).collect(),
                unconstrained: vec![Vec::new(); ds.len()],
                lp: vec![0.0; ds.len()],
                chain: vec![0; ds.len()],
                n_warmup: 0,
                seed: 0,
            };
            Some(
                forecast_logscore_bayes(
                    &spec.inner,
                    &posterior,
                    &train,
                    &y_test,
                    ForecastMode::Static,
                )
                .map_err(err)?,
            )
        }
        _ => None,
    };
    Ok((freq, bayes))
}

/// Periodogram I_h for h = 0..T−1.
#[pyfunction(name = "periodogram")]
fn py_periodogram(y: Vec<f64>) -> PyResult<Vec<f64>> {
    core_periodogram(&TimeSeries::new(y).map_err(err)?).map_err(err)
}

/// Frequency posterior under the periodic model; returns
/// (omega_hat, acceptance_rate, omega_draws).
#[pyfunction(name = "find_frequency")]
#[pyo3(signature = (y, n_iter=5000, phi_omega=0.1, seed=1))]
fn py_find_frequency(
    y: Vec<f64>,
    n_iter: usize,
    phi_omega: f64,
    seed: u64,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let series = TimeSeries::new(y).map_err(err)?;
    let config = FrequencySamplerConfig { phi_omega, ..Default::default() };
    let post = sample_frequency_posterior(&series, n_iter, &config, seed).map_err(err)?;
    Ok((post.omega_hat, post.acceptance_rate, post.omega_draws))
}

#[pymodule]
fn hsmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(py_dwell_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(py_dwell_survival, m)?)?;
    m.add_function(wrap_pyfunction!(py_hazard, m)?)?;
    m.add_function(wrap_pyfunction!(py_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(py_brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(py_exact, m)?)?;
    m.add_function(wrap_pyfunction!(py_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(py_viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(py_residuals, m)?)?;
    m.add_function(wrap_pyfunction!(py_sample_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(py_logml, m)?)?;
    m.add_function(wrap_pyfunction!(py_mle, m)?)?;
    m.add_function(wrap_pyfunction!(py_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(py_periodogram, m)?)?;
    m.add_function(wrap_pyfunction!(py_find_frequency, m)?)?;
    Ok(())
}
