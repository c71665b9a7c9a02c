//! Command-line front end for the `paramp` simulator: scenario files,
//! pipelines and sweeps.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod sweep;
