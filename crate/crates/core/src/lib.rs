//! Maximum-entropy ensembles of time series.
//!
//! Data ingestion and margins live in [`data`]; the single-series models in
//! [`univariate`], the matrix ensemble in [`multivariate`], and the solvers in
//! [`calibration`]. [`stats`] and [`finance`] build the downstream pipelines.

pub mod calibration;
pub mod data;
pub mod error;
pub mod quadrature;
pub mod rng;
mod serde_ext;
pub mod special;
pub mod stats;
pub mod univariate;
pub mod finance;
pub mod multivariate;
pub mod synthetic;

pub use error::{Error, Result};
