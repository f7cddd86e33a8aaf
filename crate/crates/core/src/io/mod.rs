//! Configuration, record files and the pipeline commands.

pub mod commands;
pub mod config;
pub mod records;

pub use commands::{cmd_blb, cmd_decode, cmd_fit, cmd_pipeline, cmd_report, cmd_simulate, with_workers};
pub use config::RunConfig;
