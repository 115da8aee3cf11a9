//! Decoding, forecasting, goodness-of-fit residuals, posterior-predictive
//! simulation and the dwell-threshold diagnostic.

pub mod dwell_diag;
pub mod forecast;
pub mod residuals;
pub mod viterbi;

pub use dwell_diag::{
    dwell_threshold_diagnostic, posterior_predictive_simulate, suggest_thresholds,
    DwellDiagnosticConfig, DwellDiagnosticReport, DwellStateReport,
};
pub use forecast::{
    forecast_density_frequentist, forecast_logscore_bayes, forecast_logscore_bayes_multi,
    forecast_logscore_frequentist, ForecastDensity, ForecastMode,
};
pub use residuals::pseudo_residuals;
pub use viterbi::{viterbi, StatePath};
