//! Batch CLI for the fault-ride-through pipeline: grid generation, assessment,
//! case adaptation, dataset building, surrogate training, and plot data.

pub mod cli;
pub mod commands;
pub mod config;
pub mod fmt;
pub mod manifest;
pub mod rts96;

pub use cli::run;
pub use config::RunConfig;
