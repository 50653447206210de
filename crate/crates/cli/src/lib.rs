//! Batch driver for the sparse-grid Vlasov solver: configuration, `.skin`
//! snapshots, the `run`, `study` and `info` commands.

pub mod config;
pub mod driver;
pub mod error;
pub mod info;
pub mod snapshot;
pub mod study;

pub use config::{RunConfig, StudyConfig};
pub use driver::{run, RunSummary};
pub use error::{CliError, Result};
pub use study::study;
