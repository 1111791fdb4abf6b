//! Experiment runner for the `dpmss` estimation library: TOML
//! configuration, CSV series ingestion, and CSV/JSON artifacts.

pub mod config;
pub mod error;
pub mod modes;
pub mod output;
pub mod timeseries;

pub use config::{ExperimentConfig, Mode};
pub use error::{CliError, CliResult};
pub use modes::run;
pub use timeseries::{load_timeseries, read_timeseries, write_timeseries};
