//! Command-line front end: fit, select, forecast, decode, residuals,
//! dwell-threshold diagnosis, frequency identification, simulation and a
//! small benchmark, all driven by one JSON run configuration.

mod config;
mod io;

use clap::{Parser, Subcommand};
use config::{ConfigError, RunConfig};
use hsmm_core::analysis::{
    dwell_threshold_diagnostic, forecast_logscore_bayes, forecast_logscore_frequentist,
    pseudo_residuals, viterbi, DwellDiagnosticConfig, ForecastMode,
};
use hsmm_core::harmonic::{periodogram, sample_frequency_posterior, FrequencySamplerConfig};
use hsmm_core::inference::{
    maximize_likelihood, sample_posterior, summarize, PosteriorDraws, SamplerSettings,
};
use hsmm_core::math::special::ks_test_standard_normal;
use hsmm_core::model::{DwellFamily, ModelSpec, ParamVector, TimeSeries};
use hsmm_core::selection::{bridge_sampling_logml, compare_models, ModelScore, ScoreKind};
use hsmm_core::simulate::{simulate_embedded, simulate_hmm, simulate_hsmm, StartDistribution};
use hsmm_core::transform::{constrained_names, flatten_constrained};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const CONFIG_SCHEMA_VERSION: &str = "1";

// Exit codes: 0 ok, 2 config, 3 data, 4 sampling/compute.
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_COMPUTE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "hsmm",
    about = "Bayesian hidden semi-Markov models via a sparse embedded-HMM likelihood",
    disable_version_flag = true
)]
struct Cli {
    /// Print version (engine + config schema) and exit.
    #[arg(long, global = true)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior and write draws, summary, and a decoded path.
    Fit(CommonArgs),
    /// Fit several dwell families and rank them by marginal likelihood.
    Select(CommonArgs),
    /// Held-out forecast log-scores (plug-in and Bayesian).
    Forecast(CommonArgs),
    /// Most likely state sequence at the posterior mean.
    Decode(CommonArgs),
    /// Dwell-threshold adequacy diagnostic.
    DiagnoseDwell(CommonArgs),
    /// Normal pseudo-residuals and a KS calibration check.
    Residuals(CommonArgs),
    /// Periodogram and frequency posterior for harmonic emissions.
    FindFrequency(CommonArgs),
    /// Generate synthetic data from a configured model.
    Simulate(CommonArgs),
    /// Sparse vs dense vs exact likelihood timing on simulated data.
    Benchmark(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override the sampler seed from the config / environment.
    #[arg(long)]
    seed: Option<u64>,
    /// Dump the embedded transition matrix as a coordinate list (row col value).
    #[arg(long)]
    dump_phi: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!(
            "hsmm {} (config schema v{CONFIG_SCHEMA_VERSION})",
            env!("CARGO_PKG_VERSION")
        );
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see --help");
        return ExitCode::from(EXIT_CONFIG);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Compute(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Compute(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<io::IngestError> for CliError {
    fn from(e: io::IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<hsmm_core::Error> for CliError {
    fn from(e: hsmm_core::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(format!("io error: {e}"))
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Select(args) => cmd_select(&args),
        Command::Forecast(args) => cmd_forecast(&args),
        Command::Decode(args) => cmd_decode(&args),
        Command::DiagnoseDwell(args) => cmd_diagnose(&args),
        Command::Residuals(args) => cmd_residuals(&args),
        Command::FindFrequency(args) => cmd_find_frequency(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
    }
}

struct Run {
    config: RunConfig,
    out: PathBuf,
}

fn setup(args: &CommonArgs) -> Result<Run, CliError> {
    let mut config = RunConfig::from_path(&args.config)?;
    // Environment override first, explicit flag wins.
    if let Ok(seed) = std::env::var("HSMM_SEED") {
        config.sampler.seed = seed
            .parse()
            .map_err(|_| CliError::Config(format!("HSMM_SEED is not an integer: {seed}")))?;
    }
    if let Some(seed) = args.seed {
        config.sampler.seed = seed;
    }
    let out = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), config.canonical_json())?;
    Ok(Run { config, out })
}

fn load_data(config: &RunConfig) -> Result<TimeSeries, CliError> {
    Ok(io::read_series(
        Path::new(&config.data.path),
        &config.data.column,
        config.data.sqrt_transform,
    )?)
}

fn settings_of(config: &RunConfig) -> SamplerSettings {
    config.sampler.to_settings()
}

fn dump_phi_if_requested(
    args: &CommonArgs,
    out: &Path,
    spec: &ModelSpec,
    params: &ParamVector,
) -> Result<(), CliError> {
    if !args.dump_phi {
        return Ok(());
    }
    let phi = hsmm_core::embedding::build_phi(spec, params)?;
    let mut text = String::new();
    for i in 0..phi.dim {
        for (c, v) in phi.row(i) {
            text.push_str(&format!("{i} {c} {v}\n"));
        }
    }
    std::fs::write(out.join("phi.txt"), text)?;
    Ok(())
}

fn thin_draws(draws: &PosteriorDraws, stride: usize) -> PosteriorDraws {
    let stride = stride.max(1);
    PosteriorDraws {
        draws: draws.draws.iter().step_by(stride).cloned().collect(),
        unconstrained: draws.unconstrained.iter().step_by(stride).cloned().collect(),
        lp: draws.lp.iter().step_by(stride).cloned().collect(),
        chain: draws.chain.iter().step_by(stride).cloned().collect(),
        n_warmup: draws.n_warmup,
        seed: draws.seed,
    }
}

fn write_states_csv(
    path: &Path,
    y: &TimeSeries,
    state_path: &[usize],
    aggregate_path: &[usize],
) -> Result<(), CliError> {
    io::write_csv(
        path,
        &["t", "y", "state", "expanded_state"],
        y.values().iter().enumerate().map(|(i, &v)| {
            vec![
                (i + 1) as f64,
                v,
                (state_path[i] + 1) as f64,
                (aggregate_path[i] + 1) as f64,
            ]
        }),
    )?;
    Ok(())
}

fn write_fit_outputs(
    out: &Path,
    spec: &ModelSpec,
    y: &TimeSeries,
    draws: &PosteriorDraws,
    diagnostics: &hsmm_core::inference::ChainDiagnostics,
) -> Result<ParamVector, CliError> {
    let names = constrained_names(spec);
    let mut header = vec!["chain".to_string(), "lp".to_string()];
    header.extend(names.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    io::write_csv(
        &out.join("draws.csv"),
        &header_refs,
        draws.draws.iter().enumerate().map(|(i, p)| {
            let mut row = vec![draws.chain[i] as f64, draws.lp[i]];
            row.extend(flatten_constrained(spec, p));
            row
        }),
    )?;

    let summary = summarize(spec, draws);
    #[derive(serde::Serialize)]
    struct ParameterSummary {
        name: String,
        mean: f64,
        sd: f64,
        q05: f64,
        median: f64,
        q95: f64,
        q025: f64,
        q975: f64,
        split_rhat: f64,
        ess: f64,
    }
    #[derive(serde::Serialize)]
    struct SummaryFile<'a> {
        parameters: Vec<ParameterSummary>,
        diagnostics: &'a hsmm_core::inference::ChainDiagnostics,
        n_draws: usize,
        seed: u64,
    }
    let parameters = (0..summary.names.len())
        .map(|i| ParameterSummary {
            name: summary.names[i].clone(),
            mean: summary.mean[i],
            sd: summary.sd[i],
            q05: summary.q05[i],
            median: summary.q50[i],
            q95: summary.q95[i],
            q025: summary.q025[i],
            q975: summary.q975[i],
            split_rhat: diagnostics.split_rhat[i],
            ess: diagnostics.ess[i],
        })
        .collect();
    io::write_json(
        &out.join("summary.json"),
        &SummaryFile { parameters, diagnostics, n_draws: draws.len(), seed: draws.seed },
    )?;

    let mean_params = draws.mean_params(spec);
    let path = viterbi(spec, &mean_params, y)?;
    write_states_csv(&out.join("states.csv"), y, &path.state_path, &path.aggregate_path)?;

    let mut report = String::new();
    report.push_str(&format!(
        "fit: {} draws across {} chains (seed {})\n",
        draws.len(),
        diagnostics.step_sizes.len(),
        draws.seed
    ));
    report.push_str(&format!(
        "divergences: {} ({:.2}%), mean acceptance {:.2}\n\n",
        diagnostics.divergences,
        100.0 * diagnostics.divergence_rate,
        diagnostics.mean_accept
    ));
    report.push_str(&format!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
        "parameter", "mean", "q2.5%", "q97.5%", "sd", "rhat", "ess"
    ));
    for i in 0..summary.names.len() {
        report.push_str(&format!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>8.0}\n",
            summary.names[i],
            summary.mean[i],
            summary.q025[i],
            summary.q975[i],
            summary.sd[i],
            diagnostics.split_rhat[i],
            diagnostics.ess[i]
        ));
    }
    for w in &diagnostics.warnings {
        report.push_str(&format!("warning: {w}\n"));
    }
    std::fs::write(out.join("report.txt"), report)?;
    Ok(mean_params)
}

fn cmd_fit(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y = load_data(&run.config)?;
    let spec = run.config.model_spec()?;
    let (draws, diagnostics) = sample_posterior(&spec, &y, &settings_of(&run.config))?;
    let mean_params = write_fit_outputs(&run.out, &spec, &y, &draws, &diagnostics)?;
    dump_phi_if_requested(args, &run.out, &spec, &mean_params)?;
    println!("fit complete: outputs in {}", run.out.display());
    for w in &diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_select(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y = load_data(&run.config)?;
    let select = run
        .config
        .select
        .clone()
        .ok_or_else(|| CliError::Config("select command needs a `select` config section".into()))?;
    let k = run.config.model.n_states;
    let mut scores = Vec::new();
    let mut rows = Vec::new();
    for (fi, family) in select.families.iter().enumerate() {
        let families = vec![*family; k];
        let thresholds = match &select.thresholds {
            Some(ts) => {
                let row = &ts[fi.min(ts.len() - 1)];
                if row.len() == 1 {
                    vec![row[0]; k]
                } else {
                    row.clone()
                }
            }
            None if *family == DwellFamily::Geometric => vec![1; k],
            None => {
                let t = &run.config.model.thresholds;
                if t.len() == 1 {
                    vec![t[0]; k]
                } else {
                    t.clone()
                }
            }
        };
        let spec = run.config.model_spec_for(&families, &thresholds)?;
        let (draws, _) = sample_posterior(&spec, &y, &settings_of(&run.config))?;
        let est = bridge_sampling_logml(&spec, &y, &draws)?;
        let summary = summarize(&spec, &draws);
        scores.push(ModelScore {
            name: format!("{family:?}"),
            kind: ScoreKind::LogMarginal,
            score: est.log_ml,
        });
        let mut cells = vec![format!("{family:?}"), format!("{:.2}", est.log_ml)];
        for j in 0..k {
            let idx = summary
                .names
                .iter()
                .position(|n| n == &format!("lambda[{}]", j + 1))
                .expect("lambda column");
            cells.push(format!(
                "{:.2} ({:.2}–{:.2})",
                summary.mean[idx], summary.q05[idx], summary.q95[idx]
            ));
        }
        if family.needs_dispersion() {
            for j in 0..k {
                let idx = summary
                    .names
                    .iter()
                    .position(|n| n == &format!("rho[{}]", j + 1))
                    .expect("rho column");
                cells.push(format!(
                    "{:.2} ({:.2}–{:.2})",
                    summary.mean[idx], summary.q05[idx], summary.q95[idx]
                ));
            }
        }
        rows.push(cells);
    }
    let comparison = compare_models(&scores)?;
    io::write_json(&run.out.join("logml.json"), &comparison)?;

    let mut report = String::new();
    report.push_str("model selection by bridge-sampled log marginal likelihood\n\n");
    report.push_str(&format!(
        "{:<14} {:>12}   dwell parameters: posterior mean (90% interval)\n",
        "dwell", "log-marg-lik"
    ));
    for row in &rows {
        report.push_str(&format!("{:<14} {:>12}   {}\n", row[0], row[1], row[2..].join("  ")));
    }
    report.push('\n');
    let best = comparison.ranking[0];
    report.push_str(&format!("best model: {}\n", comparison.names[best]));
    for &j in &comparison.ranking[1..] {
        report.push_str(&format!(
            "  log BF vs {}: {:.2} ({})\n",
            comparison.names[j],
            comparison.log_bayes_factors[best][j],
            comparison.categories[best][j]
        ));
    }
    std::fs::write(run.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_forecast(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y_full = load_data(&run.config)?;
    let fc = run
        .config
        .forecast
        .clone()
        .ok_or_else(|| CliError::Config("forecast command needs a `forecast` config section".into()))?;
    if fc.horizon == 0 || fc.horizon >= y_full.len() {
        return Err(CliError::Config(format!(
            "forecast.horizon must be in 1..{}",
            y_full.len()
        )));
    }
    let split = y_full.len() - fc.horizon;
    let y_train = TimeSeries::new(y_full.values()[..split].to_vec())
        .map_err(|e| CliError::Data(e.to_string()))?;
    let y_test = &y_full.values()[split..];
    let spec = run.config.model_spec()?;
    let mode = if fc.rolling { ForecastMode::Rolling } else { ForecastMode::Static };

    let (draws, _) = sample_posterior(&spec, &y_train, &settings_of(&run.config))?;
    let thinned = thin_draws(&draws, fc.thin);
    let l_bayes = forecast_logscore_bayes(&spec, &thinned, &y_train, y_test, mode)?;
    let mle = maximize_likelihood(&spec, &y_train, 3, run.config.sampler.seed)?;
    let l_freq = forecast_logscore_frequentist(&spec, &mle.params, &y_train, y_test, mode)?;

    let mean_params = draws.mean_params(&spec);
    let fd = hsmm_core::analysis::forecast_density_frequentist(
        &spec,
        &mean_params,
        &y_train,
        y_test,
        mode,
    )?;
    io::write_csv(
        &run.out.join("forecast.csv"),
        &["h", "y_test", "log_predictive_at_posterior_mean"],
        y_test
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![(i + 1) as f64, v, fd.per_h_log_density[i]]),
    )?;
    #[derive(serde::Serialize)]
    struct ForecastSummary {
        horizon: usize,
        log_score_bayes: f64,
        log_score_plug_in: f64,
        mode: String,
        n_draws_used: usize,
    }
    io::write_json(
        &run.out.join("forecast_summary.json"),
        &ForecastSummary {
            horizon: fc.horizon,
            log_score_bayes: l_bayes,
            log_score_plug_in: l_freq,
            mode: format!("{mode:?}"),
            n_draws_used: thinned.len(),
        },
    )?;
    println!(
        "forecast over horizon {}: L_Bayes = {:.3}, L_plug-in = {:.3} (lower is better)",
        fc.horizon, l_bayes, l_freq
    );
    Ok(())
}

fn cmd_decode(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y = load_data(&run.config)?;
    let spec = run.config.model_spec()?;
    let (draws, _) = sample_posterior(&spec, &y, &settings_of(&run.config))?;
    let mean_params = draws.mean_params(&spec);
    let path = viterbi(&spec, &mean_params, &y)?;
    write_states_csv(&run.out.join("states.csv"), &y, &path.state_path, &path.aggregate_path)?;
    dump_phi_if_requested(args, &run.out, &spec, &mean_params)?;
    println!(
        "decoded {} steps (log joint score {:.3}); states.csv written to {}",
        y.len(),
        path.log_joint,
        run.out.display()
    );
    Ok(())
}

fn cmd_diagnose(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y = load_data(&run.config)?;
    let spec = run.config.model_spec()?;
    let d = run.config.diagnose.clone().unwrap_or_default();
    let config = DwellDiagnosticConfig {
        sampler: settings_of(&run.config),
        rel_tolerance: d.rel_tolerance,
        decrease_tail_prob: d.decrease_tail_prob,
        gen_len: None,
        seed: d.seed,
    };
    let report = dwell_threshold_diagnostic(&spec, &y, &config)?;
    io::write_json(&run.out.join("dwell_diagnostic.json"), &report)?;
    for s in &report.states {
        println!(
            "state {}: lambda_obs {:.2}, lambda_gen {:.2}, rel err {:.1}% → {} ({})",
            s.state + 1,
            s.lambda_obs,
            s.lambda_gen,
            100.0 * s.rel_error,
            if s.pass { "pass" } else { "FAIL" },
            s.recommendation
        );
    }
    Ok(())
}

fn cmd_residuals(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y = load_data(&run.config)?;
    let spec = run.config.model_spec()?;
    let (draws, _) = sample_posterior(&spec, &y, &settings_of(&run.config))?;
    let mean_params = draws.mean_params(&spec);
    let residuals = pseudo_residuals(&spec, &mean_params, &y)?;
    let (ks_stat, ks_p) = ks_test_standard_normal(&residuals);
    io::write_csv(
        &run.out.join("residuals.csv"),
        &["t", "y", "pseudo_residual"],
        y.values()
            .iter()
            .zip(&residuals)
            .enumerate()
            .map(|(i, (&v, &r))| vec![(i + 1) as f64, v, r]),
    )?;
    #[derive(serde::Serialize)]
    struct ResidualSummary {
        ks_statistic: f64,
        ks_p_value: f64,
        n: usize,
    }
    io::write_json(
        &run.out.join("residual_summary.json"),
        &ResidualSummary { ks_statistic: ks_stat, ks_p_value: ks_p, n: residuals.len() },
    )?;
    println!("pseudo-residuals: KS statistic {ks_stat:.4}, p = {ks_p:.4}");
    Ok(())
}

fn cmd_find_frequency(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let y = load_data(&run.config)?;
    let fc = run.config.find_frequency.clone().unwrap_or_default();
    let pgram = periodogram(&y)?;
    io::write_csv(
        &run.out.join("periodogram.csv"),
        &["frequency", "power"],
        pgram
            .iter()
            .enumerate()
            .map(|(h, &p)| vec![h as f64 / y.len() as f64, p]),
    )?;
    let sampler_config = FrequencySamplerConfig {
        phi_omega: fc.phi_omega,
        pi_omega: fc.pi_omega,
        ..Default::default()
    };
    let post = sample_frequency_posterior(&y, fc.n_iter, &sampler_config, fc.seed)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    io::write_csv(
        &run.out.join("omega_draws.csv"),
        &["iteration", "omega", "beta1", "beta2", "sigma2"],
        post.omega_draws.iter().enumerate().map(|(i, &w)| {
            vec![
                (i + 1) as f64,
                w,
                post.beta_draws[i][0],
                post.beta_draws[i][1],
                post.sigma2_draws[i],
            ]
        }),
    )?;
    #[derive(serde::Serialize)]
    struct FreqSummary {
        omega_hat: f64,
        acceptance_rate: f64,
        burn_in: usize,
        random_walk_fallback: bool,
    }
    io::write_json(
        &run.out.join("omega_summary.json"),
        &FreqSummary {
            omega_hat: post.omega_hat,
            acceptance_rate: post.acceptance_rate,
            burn_in: post.burn_in,
            random_walk_fallback: post.random_walk_fallback,
        },
    )?;
    println!("omega_hat = {:.6} (acceptance {:.2})", post.omega_hat, post.acceptance_rate);
    Ok(())
}

fn sim_params(run: &RunConfig) -> Result<(ModelSpec, ParamVector), CliError> {
    let sim = run
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a `simulate` config section".into()))?;
    let spec = run.model_spec()?;
    let k = spec.n_states;
    let p = &sim.params;
    if p.pi.len() != k || p.lambda.len() != k || p.mu.len() != k || p.sigma2.len() != k {
        return Err(CliError::Config(
            "simulate.params blocks must have one entry per state".into(),
        ));
    }
    let emissions = (0..k)
        .map(|j| match spec.emission {
            hsmm_core::model::EmissionFamily::Gaussian => {
                hsmm_core::model::EmissionParamsG::Gaussian { mu: p.mu[j], sigma2: p.sigma2[j] }
            }
            hsmm_core::model::EmissionFamily::HarmonicGaussian => {
                hsmm_core::model::EmissionParamsG::Harmonic {
                    beta0: p.mu[j],
                    beta1: p.beta1.as_ref().map_or(0.0, |b| b[j]),
                    beta2: p.beta2.as_ref().map_or(0.0, |b| b[j]),
                    sigma2: p.sigma2[j],
                }
            }
        })
        .collect();
    let params = ParamVector {
        pi: p.pi.clone(),
        lambda: p.lambda.clone(),
        rho: p.rho.clone().unwrap_or(vec![None; k]),
        emissions,
    };
    params.validate(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((spec, params))
}

fn cmd_simulate(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let (spec, params) = sim_params(&run.config)?;
    let sim_cfg = run.config.simulate.as_ref().expect("validated in sim_params");
    let sim = match sim_cfg.generator.as_str() {
        "hsmm" => simulate_hsmm(
            &spec,
            &params,
            sim_cfg.t_len,
            sim_cfg.seed,
            &StartDistribution::EmbeddedStationaryOwner,
        )?,
        "embedded" => simulate_embedded(&spec, &params, sim_cfg.t_len, sim_cfg.seed)?,
        "hmm" => {
            // Geometric self-transitions from the mean dwell, exits via π.
            let k = spec.n_states;
            let mut gamma = vec![vec![0.0; k]; k];
            for j in 0..k {
                let stay = params.lambda[j] / (1.0 + params.lambda[j]);
                gamma[j][j] = stay;
                for l in 0..k {
                    if l != j {
                        gamma[j][l] = (1.0 - stay) * params.pi[j][l];
                    }
                }
            }
            simulate_hmm(&gamma, &params.emissions, spec.omega_hat, sim_cfg.t_len, sim_cfg.seed, None)?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown generator '{other}' (expected hsmm | embedded | hmm)"
            )))
        }
    };
    io::write_csv(
        &run.out.join("simulated.csv"),
        &["t", "y", "true_state"],
        sim.y
            .values()
            .iter()
            .zip(&sim.true_states)
            .enumerate()
            .map(|(i, (&v, &s))| vec![(i + 1) as f64, v, (s + 1) as f64]),
    )?;
    println!(
        "simulated {} observations ({} segments{}) into {}",
        sim.y.len(),
        sim.true_segments.len(),
        if sim.censored { ", last censored" } else { "" },
        run.out.join("simulated.csv").display()
    );
    Ok(())
}

fn cmd_benchmark(args: &CommonArgs) -> Result<(), CliError> {
    let run = setup(args)?;
    let (spec, params) = sim_params(&run.config)?;
    let bench = run.config.benchmark.clone().unwrap_or_default();
    let mut spec_fixed = spec.clone();
    spec_fixed.initial = hsmm_core::model::InitialDistribution::FixedUnitVector(0);
    let sim = simulate_hsmm(
        &spec_fixed,
        &params,
        bench.t_len,
        bench.seed,
        &StartDistribution::Fixed(0),
    )?;
    let median_time = |f: &dyn Fn() -> f64| -> (f64, f64) {
        let mut times = Vec::new();
        let mut v = 0.0;
        for _ in 0..bench.repeats.max(1) {
            let t0 = std::time::Instant::now();
            v = f();
            times.push(t0.elapsed().as_secs_f64());
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (times[times.len() / 2], v)
    };
    let mut initial = vec![0.0; spec.n_states];
    initial[0] = 1.0;
    let (sparse_t, sparse_v) = median_time(&|| {
        hsmm_core::likelihood::log_likelihood(&spec_fixed, &params, &sim.y)
            .unwrap()
            .log_likelihood
    });
    let (dense_t, dense_v) = median_time(&|| {
        hsmm_core::likelihood::log_likelihood_dense(&spec_fixed, &params, &sim.y)
            .unwrap()
            .log_likelihood
    });
    let (exact_t, exact_v) = median_time(&|| {
        hsmm_core::likelihood::exact_hsmm_loglik_with_dmax(
            &spec_fixed,
            &params,
            &sim.y,
            &initial,
            bench.t_len,
        )
        .unwrap()
        .log_likelihood
    });
    let mut report = String::new();
    report.push_str(&format!(
        "likelihood timing on T = {} simulated observations ({} repeats, median)\n\n",
        bench.t_len, bench.repeats
    ));
    report.push_str(&format!("{:<28} {:>12} {:>16}\n", "method", "time (s)", "log-likelihood"));
    report.push_str(&format!("{:<28} {:>12.4} {:>16.4}\n", "exact recursion (full)", exact_t, exact_v));
    report.push_str(&format!("{:<28} {:>12.4} {:>16.4}\n", "approximate (dense)", dense_t, dense_v));
    report.push_str(&format!("{:<28} {:>12.4} {:>16.4}\n", "approximate (sparse)", sparse_t, sparse_v));
    report.push_str(&format!(
        "\nsparse speedup over dense: {:.1}x; |sparse − dense| = {:.2e}\n",
        dense_t / sparse_t,
        (sparse_v - dense_v).abs()
    ));
    std::fs::write(run.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}
