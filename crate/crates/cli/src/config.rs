//! Run configuration: a single strict JSON document.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use safebo::{BaseAcquisition, BetaSchedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LOG_ITERS: [usize; 3] = [2, 5, 25];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    /// Individual messages, for machine-readable error output.
    pub fn details(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Toy1d {},
    Toy2d {},
    Glucose {
        /// Draw a calibrated cohort of this size (default 10).
        #[serde(default)]
        cohort_size: Option<usize>,
        #[serde(default)]
        cohort_seed: u64,
        /// JSON file holding one patient or a list of patients; replaces
        /// the drawn cohort.
        #[serde(default)]
        patient_file: Option<PathBuf>,
    },
}

impl ProblemConfig {
    pub fn is_glucose(&self) -> bool {
        matches!(self, ProblemConfig::Glucose { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::Toy1d {} => "toy1d",
            ProblemConfig::Toy2d {} => "toy2d",
            ProblemConfig::Glucose { .. } => "glucose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Barrier,
    Pf,
    Pourmohamad,
    SafeoptRule,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Barrier => "barrier",
            Method::Pf => "pf",
            Method::Pourmohamad => "pourmohamad",
            Method::SafeoptRule => "safeopt_rule",
        })
    }
}

/// The document as written. `None` fields take problem-specific defaults in
/// [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub base_acquisition: Option<BaseAcquisition>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub tau_decay: Option<f64>,
    #[serde(default)]
    pub cost_beta: Option<BetaSchedule>,
    /// Applied to every constraint.
    #[serde(default)]
    pub constraint_beta: Option<BetaSchedule>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub refinement_iters: Option<usize>,
    /// Observation noise of every output (synthetic problems) or the CGM
    /// noise (glucose).
    #[serde(default)]
    pub noise_std: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub log_iters: Option<Vec<usize>>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Barrier]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub problem: ProblemConfig,
    pub methods: Vec<Method>,
    pub base_acquisition: BaseAcquisition,
    /// Barrier weight; present exactly when a barrier method runs.
    pub tau: Option<f64>,
    pub tau_decay: f64,
    pub cost_beta: BetaSchedule,
    pub constraint_beta: BetaSchedule,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub grid_points: Option<usize>,
    pub refinement_iters: Option<usize>,
    pub noise_std: Option<f64>,
    /// Not serialized: where a run is written does not change its results.
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub log_iters: Vec<usize>,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

impl RunConfig {
    /// Checks every invariant, reporting all violations at once, and fills
    /// in defaults.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut errs = Vec::new();
        let glucose = self.problem.is_glucose();

        if self.methods.is_empty() {
            errs.push("methods must not be empty".to_string());
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            errs.push("methods must not repeat".to_string());
        }
        if self.seeds.is_empty() {
            errs.push("at least one seed is required".to_string());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            errs.push("seeds must not repeat".to_string());
        }
        if self.budget == Some(0) {
            errs.push("budget must be at least 1".to_string());
        }

        let barrier = self.methods.contains(&Method::Barrier);
        if barrier {
            if let Some(tau) = self.tau {
                if !(tau.is_finite() && tau > 0.0) {
                    errs.push(format!("tau must be > 0, got {tau}"));
                }
            }
            if let Some(d) = self.tau_decay {
                if !(d > 0.0 && d <= 1.0) {
                    errs.push(format!("tau_decay must lie in (0, 1], got {d}"));
                }
            }
        } else {
            if self.tau.is_some() {
                errs.push("tau only applies to the barrier method".to_string());
            }
            if self.tau_decay.is_some() {
                errs.push("tau_decay only applies to the barrier method".to_string());
            }
        }

        for (name, beta) in [("cost_beta", &self.cost_beta), ("constraint_beta", &self.constraint_beta)] {
            if let Some(Err(e)) = beta.as_ref().map(BetaSchedule::validate) {
                errs.push(format!("{name}: {e}"));
            }
        }
        if let Some(g) = self.grid_points {
            if g < 2 {
                errs.push(format!("grid_points must be at least 2, got {g}"));
            }
        }
        if let Some(s) = self.noise_std {
            if !(s.is_finite() && s >= 0.0) {
                errs.push(format!("noise_std must be >= 0, got {s}"));
            }
        }
        if let Some(iters) = &self.log_iters {
            if iters.contains(&0) {
                errs.push("log_iters entries must be at least 1".to_string());
            }
        }
        if let ProblemConfig::Glucose {
            cohort_size,
            patient_file,
            ..
        } = &self.problem
        {
            if cohort_size.is_some() && patient_file.is_some() {
                errs.push("give either cohort_size or patient_file, not both".to_string());
            }
            if *cohort_size == Some(0) {
                errs.push("cohort_size must be at least 1".to_string());
            }
        }

        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }

        let (default_budget, default_tau) = if glucose { (15, 0.1) } else { (25, 1e-3) };
        Ok(Resolved {
            problem: self.problem.clone(),
            methods: self.methods.clone(),
            base_acquisition: self.base_acquisition.unwrap_or(BaseAcquisition::Lcb),
            tau: barrier.then(|| self.tau.unwrap_or(default_tau)),
            tau_decay: self.tau_decay.unwrap_or(1.0),
            cost_beta: self.cost_beta.unwrap_or_default(),
            constraint_beta: self.constraint_beta.unwrap_or_default(),
            budget: self.budget.unwrap_or(default_budget),
            seeds: self.seeds.clone(),
            grid_points: self.grid_points,
            refinement_iters: self.refinement_iters,
            noise_std: self.noise_std,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            log_iters: self.log_iters.clone().unwrap_or_else(|| DEFAULT_LOG_ITERS.to_vec()),
        })
    }
}
