//! Command-line surface of `dfconformer`: training, WAV enhancement,
//! evaluation, RTF benchmarks, parameter reports and attention dumps, with
//! the config, checkpoint and WAV formats they share.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod wav;

pub use config::RunConfig;
pub use error::{CliError, Result, EXIT_BAD_CONFIG, EXIT_DIVERGED, EXIT_FAILURE};
