use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cost and constraint values at one query point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cost: f64,
    pub constraints: Vec<f64>,
}

impl Observation {
    pub fn new(cost: f64, constraints: Vec<f64>) -> Self {
        Observation { cost, constraints }
    }

    /// Whether every constraint value is `>= 0`.
    pub fn feasible(&self) -> bool {
        self.constraints.iter().all(|c| *c >= 0.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("query point {0:?} lies outside the domain")]
    OutOfDomain(Vec<f64>),
    #[error("oracle failed: {0}")]
    Failed(String),
}

/// The black-box system being optimized.
///
/// `query` may only mutate the oracle's own noise stream.
pub trait Oracle {
    fn dim(&self) -> usize;

    fn num_constraints(&self) -> usize;

    /// Noisy cost and constraint observations at `x`.
    fn query(&mut self, x: &[f64]) -> Result<Observation, OracleError>;

    /// Noiseless values, when the oracle exposes them for instrumentation.
    fn truth(&self, _x: &[f64]) -> Option<Observation> {
        None
    }
}
