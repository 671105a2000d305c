//! Configuration-driven experiment runner.
//!
//! A run config names a problem, one or more methods and a list of seeds;
//! [`execute`] runs every (method, seed) cell — for the glucose problem
//! every (method, patient, seed) cell — in parallel, writes one record CSV
//! per cell and a `summary.json`, and [`report`] adds plot-ready columnar
//! files.

pub mod config;
pub mod execute;
pub mod report;

pub use config::{parse_config, parse_config_str, ConfigError, Method, ProblemConfig, Resolved, RunConfig};
pub use execute::{execute, CellSummary, ExecError, RunArtifacts, Summary};
pub use report::report;
