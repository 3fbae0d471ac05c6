//! Configuration, subcommand implementations and the desk benchmark behind
//! the `cycledm` binary.

pub mod benchmark;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
