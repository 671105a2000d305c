//! Safe Bayesian optimization with interior-point style log-barrier
//! acquisition functions.
//!
//! The cost and every constraint are modeled by independent exact Gaussian
//! processes ([`gp`]). At each iteration the loop in [`safe_loop`] minimizes a
//! base acquisition (LCB, EI or PI) augmented with `-tau * ln(LCB_i)` barrier
//! terms built from the lower confidence bounds of the constraint models
//! ([`acquisition`]), so every query lies strictly inside the partially
//! revealed safe set. The comparison baselines (probability of feasibility,
//! the Pourmohamad barrier acquisition and a SafeOpt-style uncertainty rule)
//! run through the same loop.
//!
//! [`problems`] provides synthetic benchmarks with exposed ground truth.

pub mod acquisition;
pub mod gp;
mod linalg;
pub mod problems;
pub mod safe_loop;

pub use acquisition::{AcquisitionSpec, BaseAcquisition, BetaSchedule, SafetyMode};
pub use gp::{GpError, GpModel, KernelSpec, Posterior};
pub use problems::SyntheticProblem;
pub use safe_loop::{
    Domain, ExperimentRecord, LoopConfig, Observation, Oracle, OracleError, SafeBoState,
    SafeSetReport,
};
