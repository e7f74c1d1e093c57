//! Detrending, portfolio selection, Value-at-Risk and backtests.

pub mod backtest;
pub mod portfolio;
pub mod var;

pub use backtest::{backtest_suite, BacktestKind, BacktestReport, TestOutcome, Zone, ALL_TESTS};
pub use portfolio::{
    calibrate_and_detrend, detrend, evaluate_window, frontier_weights, markowitz_weights, mean_reversion_returns,
    out_of_sample_eval, realized_performance, Band, OosConfig, OosRow, PortfolioSolution, WindowOutcome,
};
pub use var::{circulant_embed, rolling_var, var_estimate, var_forecast, RollingVar, VarForecast, VarModel, VarModelSpec};
