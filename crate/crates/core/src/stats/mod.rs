//! Hypothesis tests on calibrated ensembles.

pub mod anomaly;
pub mod ks;
pub mod moments;
pub mod periodogram;
pub mod spectrum;

pub use anomaly::{anomaly_scan, marginal_interval, AnomalyReport, FlaggedCell};
pub use ks::{kolmogorov_sf, ks_compare, ks_one_sample, ks_two_sample, KsResult, KsSummary};
pub use moments::{empirical_moments, moment_distribution, sample_moment, Axis, EnsembleDistribution, Moment};
pub use periodogram::{ensemble_power_spectrum, periodogram, power_spectrum, Periodogram};
pub use spectrum::{
    correlation_matrix, correlation_spectrum, ensemble_spectrum, kde, linear_grid, mp_density, mp_edges,
    silverman_bandwidth, EnsembleSpectrum,
};
