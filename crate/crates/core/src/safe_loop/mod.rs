//! The sequential safe Bayesian optimization loop.
//!
//! Each step conditions the cost and constraint models on the history,
//! builds the configured acquisition, minimizes it over the domain grid
//! (plus nested refinement around the incumbent), queries the oracle and
//! appends the observation.

mod domain;
mod oracle;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    self, AcquisitionSpec, BaseAcquisition, BetaSchedule, SafetyMode,
};
use crate::gp::{GpError, GpModel, Posterior};

pub use domain::Domain;
pub(crate) use domain::linspace;
pub use oracle::{Observation, Oracle, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("initial point {0:?} lies outside the domain")]
    InitialOutOfDomain(Vec<f64>),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub domain: Domain,
    pub acquisition: AcquisitionSpec,
    /// Prior cost model (kernel, prior mean, noise); any data is discarded.
    pub cost_model: GpModel,
    pub constraint_models: Vec<GpModel>,
    pub x0: Vec<f64>,
    pub budget: usize,
    pub seed: u64,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        let mut errs = Vec::new();
        if let Err(e) = self.domain.validate() {
            errs.extend(e);
        }
        let m = self.constraint_models.len();
        if let Err(e) = self.acquisition.validate(m) {
            errs.extend(e);
        }
        let dim = self.domain.dim();
        if self.cost_model.dim() != dim {
            errs.push(format!(
                "cost model dimension {} differs from domain dimension {dim}",
                self.cost_model.dim()
            ));
        }
        for (i, g) in self.constraint_models.iter().enumerate() {
            if g.dim() != dim {
                errs.push(format!(
                    "constraint model {} dimension {} differs from domain dimension {dim}",
                    i + 1,
                    g.dim()
                ));
            }
        }
        if self.x0.len() != dim {
            errs.push(format!("x0 has {} coordinates, domain has {dim}", self.x0.len()));
        }
        let betas = self.acquisition.constraint_betas(m);
        for (i, (b, g)) in betas.iter().zip(&self.constraint_models).enumerate() {
            if b.needs_information_gain() && g.noise_std() <= 0.0 {
                errs.push(format!(
                    "constraint {} uses the theoretical beta but its model has zero noise",
                    i + 1
                ));
            }
        }
        if self.acquisition.cost_beta.needs_information_gain() && self.cost_model.noise_std() <= 0.0
        {
            errs.push("cost uses the theoretical beta but its model has zero noise".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(LoopError::Config(errs))
        }
    }
}

/// One row of the run log; one per oracle query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// 0 for the initial safe point.
    pub iteration: usize,
    pub x: Vec<f64>,
    pub observed: Observation,
    pub truth: Option<Observation>,
    /// Fraction of the domain grid inside the LCB safe set the proposal was
    /// drawn from; `None` for the initial point.
    pub safe_set_fraction: Option<f64>,
    /// Smallest constraint LCB at `x` under the proposal's betas.
    pub min_constraint_lcb: Option<f64>,
    pub tau: Option<f64>,
    pub fallback: bool,
    /// True constraint value below zero (needs an oracle exposing truth).
    pub violation: bool,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetReport {
    pub member_mask: Vec<bool>,
    pub fraction_safe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    /// Minimized score at `x` (`+inf` never appears unless `fallback`).
    pub score: f64,
    /// The safe set was empty and the safest grid point was returned instead.
    pub fallback: bool,
}

/// Per-iteration quantities shared by every grid evaluation.
#[derive(Debug, Clone)]
struct IterationContext {
    cost_beta: f64,
    constraint_betas: Vec<f64>,
    tau: Option<f64>,
    best: f64,
}

/// Full loop state.
#[derive(Debug, Clone)]
pub struct SafeBoState {
    cost_gp: GpModel,
    constraint_gps: Vec<GpModel>,
    domain: Domain,
    acq: AcquisitionSpec,
    n: usize,
    history: Vec<ExperimentRecord>,
    rng_seed: u64,
    warnings: Vec<String>,
    grid: Vec<Vec<f64>>,
}

impl SafeBoState {
    /// Queries the oracle once at `x0` and conditions every model on it.
    pub fn init<O: Oracle + ?Sized>(oracle: &mut O, config: &LoopConfig) -> Result<Self, LoopError> {
        config.validate()?;
        if !config.domain.contains(&config.x0) {
            return Err(LoopError::InitialOutOfDomain(config.x0.clone()));
        }
        check_oracle(oracle, config)?;
        let started = Instant::now();
        let observed = oracle.query(&config.x0)?;
        let truth = oracle.truth(&config.x0);
        let mut warnings = Vec::new();
        if let Some((i, c)) = observed
            .constraints
            .iter()
            .enumerate()
            .find(|(_, c)| **c <= 0.0)
        {
            warnings.push(format!(
                "initial point observed constraint {} = {c} <= 0; the safe starting point assumption looks violated",
                i + 1
            ));
        }
        let violation = truth.as_ref().is_some_and(|t| !t.feasible());
        let record = ExperimentRecord {
            iteration: 0,
            x: config.x0.clone(),
            observed,
            truth,
            safe_set_fraction: None,
            min_constraint_lcb: None,
            tau: None,
            fallback: false,
            violation,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        let mut state = Self::from_history(config, std::slice::from_ref(&record))?;
        state.warnings = warnings;
        Ok(state)
    }

    /// Rebuilds the state after the given records without querying anything.
    pub fn from_history(config: &LoopConfig, history: &[ExperimentRecord]) -> Result<Self, LoopError> {
        config.validate()?;
        let inputs: Vec<Vec<f64>> = history.iter().map(|r| r.x.clone()).collect();
        let cost_gp = config
            .cost_model
            .with_data(inputs.clone(), history.iter().map(|r| r.observed.cost).collect())?
            .condition()?;
        let constraint_gps = config
            .constraint_models
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let ys = history.iter().map(|r| r.observed.constraints[i]).collect();
                g.with_data(inputs.clone(), ys)?.condition()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SafeBoState {
            cost_gp,
            constraint_gps,
            domain: config.domain.clone(),
            acq: config.acquisition.clone(),
            n: history.len(),
            history: history.to_vec(),
            rng_seed: config.seed,
            warnings: Vec::new(),
            grid: config.domain.grid(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn history(&self) -> &[ExperimentRecord] {
        &self.history
    }

    pub fn into_history(self) -> Vec<ExperimentRecord> {
        self.history
    }

    pub fn cost_gp(&self) -> &GpModel {
        &self.cost_gp
    }

    pub fn constraint_gps(&self) -> &[GpModel] {
        &self.constraint_gps
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn acquisition(&self) -> &AcquisitionSpec {
        &self.acq
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Constraint betas for the next proposal (`beta_n` with `n` the current
    /// number of observations).
    pub fn constraint_betas(&self) -> Result<Vec<f64>, LoopError> {
        let schedules = self.acq.constraint_betas(self.constraint_gps.len());
        schedules
            .iter()
            .zip(&self.constraint_gps)
            .map(|(s, g)| beta_for(s, g, self.n))
            .collect()
    }

    pub fn cost_beta(&self) -> Result<f64, LoopError> {
        beta_for(&self.acq.cost_beta, &self.cost_gp, self.n)
    }

    /// Lowest observed cost among observations whose constraints were all
    /// nonnegative; falls back to the lowest cost overall.
    pub fn best_observed(&self) -> f64 {
        let feasible = self
            .history
            .iter()
            .filter(|r| r.observed.feasible())
            .map(|r| r.observed.cost)
            .fold(f64::INFINITY, f64::min);
        if feasible.is_finite() {
            feasible
        } else {
            self.history
                .iter()
                .map(|r| r.observed.cost)
                .fold(f64::INFINITY, f64::min)
        }
    }

    fn context(&self) -> Result<IterationContext, LoopError> {
        Ok(IterationContext {
            cost_beta: self.cost_beta()?,
            constraint_betas: self.constraint_betas()?,
            tau: self.acq.tau_at(self.n),
            best: self.best_observed(),
        })
    }

    pub fn cost_posterior(&self, x: &[f64]) -> Result<Posterior, LoopError> {
        Ok(self.cost_gp.posterior(x)?)
    }

    pub fn constraint_posteriors(&self, x: &[f64]) -> Result<Vec<Posterior>, LoopError> {
        self.constraint_gps
            .iter()
            .map(|g| g.posterior(x).map_err(LoopError::from))
            .collect()
    }

    /// Smallest constraint LCB at `x` under the given betas (`+inf` with no
    /// constraints).
    pub fn min_constraint_lcb(&self, x: &[f64], betas: &[f64]) -> Result<f64, LoopError> {
        let posts = self.constraint_posteriors(x)?;
        Ok(posts
            .iter()
            .zip(betas)
            .map(|(p, b)| acquisition::lcb(p, *b))
            .fold(f64::INFINITY, f64::min))
    }

    /// Grid points where every constraint LCB is strictly positive.
    pub fn safe_set(&self) -> Result<SafeSetReport, LoopError> {
        let betas = self.constraint_betas()?;
        let member_mask = self
            .grid
            .iter()
            .map(|x| self.min_constraint_lcb(x, &betas).map(|l| l > 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        let count = member_mask.iter().filter(|m| **m).count();
        let fraction_safe = if member_mask.is_empty() {
            0.0
        } else {
            count as f64 / member_mask.len() as f64
        };
        Ok(SafeSetReport {
            member_mask,
            fraction_safe,
        })
    }

    /// The configured acquisition at `x`, as a value to minimize.
    /// `+inf` marks points the mode excludes.
    pub fn acquisition_value(&self, x: &[f64]) -> Result<f64, LoopError> {
        let ctx = self.context()?;
        self.score(x, &ctx)
    }

    fn base_value(&self, cost: &Posterior, ctx: &IterationContext) -> f64 {
        match self.acq.base {
            BaseAcquisition::Lcb => acquisition::lcb(cost, ctx.cost_beta),
            BaseAcquisition::Ei => -acquisition::expected_improvement(cost, ctx.best),
            BaseAcquisition::Pi => -acquisition::probability_of_improvement(cost, ctx.best),
        }
    }

    fn score(&self, x: &[f64], ctx: &IterationContext) -> Result<f64, LoopError> {
        let cost = self.cost_gp.posterior(x)?;
        let value = match &self.acq.safety {
            SafetyMode::None => self.base_value(&cost, ctx),
            SafetyMode::Barrier { .. } => {
                let terms = self
                    .constraint_posteriors(x)?
                    .iter()
                    .zip(&ctx.constraint_betas)
                    .map(|(p, b)| acquisition::barrier_term(p, *b))
                    .collect::<Vec<_>>();
                let tau = ctx.tau.expect("barrier mode always has tau");
                acquisition::barrier_acquisition(self.base_value(&cost, ctx), &terms, tau)
            }
            SafetyMode::Pf => {
                let improvement = match self.acq.base {
                    BaseAcquisition::Pi => acquisition::probability_of_improvement(&cost, ctx.best),
                    _ => acquisition::expected_improvement(&cost, ctx.best),
                };
                -acquisition::pf_acquisition(improvement, &self.constraint_posteriors(x)?)
            }
            SafetyMode::Pourmohamad => {
                acquisition::pourmohamad_acquisition(&cost, &self.constraint_posteriors(x)?)
            }
            SafetyMode::SafeOptRule { .. } => {
                let cons = self.constraint_posteriors(x)?;
                let safe = cons
                    .iter()
                    .zip(&ctx.constraint_betas)
                    .all(|(p, b)| acquisition::lcb(p, *b) > 0.0);
                if safe {
                    let mut posts = Vec::with_capacity(cons.len() + 1);
                    posts.push(cost);
                    posts.extend(cons);
                    let mut betas = Vec::with_capacity(posts.len());
                    betas.push(ctx.cost_beta);
                    betas.extend(&ctx.constraint_betas);
                    -acquisition::safeopt_rule_score(&posts, &betas)
                } else {
                    f64::INFINITY
                }
            }
        };
        Ok(if value.is_nan() { f64::INFINITY } else { value })
    }

    /// Minimizes the acquisition: grid argmin (lowest index on ties), then
    /// `refinement_iters` rounds of re-gridding a box shrunk tenfold per
    /// round around the incumbent. When no grid point has a finite score the
    /// point maximizing the smallest constraint LCB is returned and flagged.
    pub fn propose(&self) -> Result<Proposal, LoopError> {
        let ctx = self.context()?;
        let (idx, value) = argmin(&self.grid, |x| self.score(x, &ctx))?;
        if !value.is_finite() {
            let (idx, neg_lcb) = argmin(&self.grid, |x| {
                self.min_constraint_lcb(x, &ctx.constraint_betas).map(|l| -l)
            })?;
            return Ok(Proposal {
                x: self.grid[idx].clone(),
                score: -neg_lcb,
                fallback: true,
            });
        }
        let mut best_x = self.grid[idx].clone();
        let mut best_value = value;
        for round in 1..=self.domain.refinement_iters {
            let shrink = 10f64.powi(round as i32);
            let bounds: Vec<(f64, f64)> = self
                .domain
                .bounds
                .iter()
                .zip(&best_x)
                .map(|((lo, hi), c)| {
                    let half = 0.5 * (hi - lo) / shrink;
                    ((c - half).max(*lo), (c + half).min(*hi))
                })
                .collect();
            let local = domain::box_grid(&bounds, self.domain.grid_points_per_dim);
            let (i, v) = argmin(&local, |x| self.score(x, &ctx))?;
            if v < best_value {
                best_value = v;
                best_x = local[i].clone();
            }
        }
        Ok(Proposal {
            x: best_x,
            score: best_value,
            fallback: false,
        })
    }

    /// One propose, query, append, recondition cycle.
    pub fn step<O: Oracle + ?Sized>(&mut self, oracle: &mut O) -> Result<ExperimentRecord, LoopError> {
        let started = Instant::now();
        let safe = self.safe_set()?;
        let betas = self.constraint_betas()?;
        let proposal = self.propose()?;
        let min_lcb = if self.constraint_gps.is_empty() {
            None
        } else {
            Some(self.min_constraint_lcb(&proposal.x, &betas)?)
        };
        let tau = self.acq.tau_at(self.n);
        if proposal.fallback {
            self.warnings.push(format!(
                "iteration {}: no point passed the acquisition's safety screen; queried the point with the largest constraint LCB ({})",
                self.n, proposal.score
            ));
        }
        let observed = oracle.query(&proposal.x)?;
        let truth = oracle.truth(&proposal.x);
        let violation = truth.as_ref().is_some_and(|t| !t.feasible());

        let cost_gp = self
            .cost_gp
            .with_observation(&proposal.x, observed.cost)?
            .condition()?;
        let constraint_gps = self
            .constraint_gps
            .iter()
            .zip(&observed.constraints)
            .map(|(g, y)| g.with_observation(&proposal.x, *y)?.condition())
            .collect::<Result<Vec<_>, _>>()?;

        let record = ExperimentRecord {
            iteration: self.n,
            x: proposal.x,
            observed,
            truth,
            safe_set_fraction: Some(safe.fraction_safe),
            min_constraint_lcb: min_lcb,
            tau,
            fallback: proposal.fallback,
            violation,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.cost_gp = cost_gp;
        self.constraint_gps = constraint_gps;
        self.history.push(record.clone());
        self.n += 1;
        Ok(record)
    }
}

/// Result of [`run`]: the records collected and, if the loop stopped early,
/// why.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<ExperimentRecord>,
    pub warnings: Vec<String>,
    pub error: Option<LoopError>,
}

/// Initializes at `config.x0` and takes `config.budget` steps.
///
/// Errors during initialization are returned; errors during a step end the
/// run and are reported in the outcome next to the records gathered so far.
pub fn run<O: Oracle + ?Sized>(oracle: &mut O, config: &LoopConfig) -> Result<RunOutcome, LoopError> {
    let mut state = SafeBoState::init(oracle, config)?;
    let mut error = None;
    for _ in 0..config.budget {
        if let Err(e) = state.step(oracle) {
            error = Some(e);
            break;
        }
    }
    let warnings = state.warnings.clone();
    Ok(RunOutcome {
        records: state.into_history(),
        warnings,
        error,
    })
}

fn check_oracle<O: Oracle + ?Sized>(oracle: &O, config: &LoopConfig) -> Result<(), LoopError> {
    let mut errs = Vec::new();
    if oracle.dim() != config.domain.dim() {
        errs.push(format!(
            "oracle dimension {} differs from domain dimension {}",
            oracle.dim(),
            config.domain.dim()
        ));
    }
    if oracle.num_constraints() != config.constraint_models.len() {
        errs.push(format!(
            "oracle has {} constraints but {} constraint models were given",
            oracle.num_constraints(),
            config.constraint_models.len()
        ));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(LoopError::Config(errs))
    }
}

fn beta_for(schedule: &BetaSchedule, gp: &GpModel, n: usize) -> Result<f64, LoopError> {
    let gamma = if schedule.needs_information_gain() {
        gp.information_gain()?
    } else {
        0.0
    };
    Ok(schedule.value(n, gamma))
}

/// Index and value of the smallest score; the first index wins ties and NaN
/// counts as `+inf`.
fn argmin<F>(points: &[Vec<f64>], mut f: F) -> Result<(usize, f64), LoopError>
where
    F: FnMut(&[f64]) -> Result<f64, LoopError>,
{
    let mut best = (0, f64::INFINITY);
    for (i, x) in points.iter().enumerate() {
        let v = f(x)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests;
