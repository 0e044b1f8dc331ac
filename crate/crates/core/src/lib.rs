//! Hourly power-outage probability forecasting per census tract.
//!
//! The pipeline cleans station weather, outage snapshots and tract profiles
//! ([`ingest`]), assembles (tract, hour) samples ([`features`]), trains an
//! unconditional or a feature-modulated conditional MLP ([`nn`], [`loss`],
//! [`train`]) and scores it with thresholded MAE/RMSE ([`eval`]). [`synth`]
//! generates a complete synthetic world with a known outage process.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod loss;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Diagnostics, Error, Result};
