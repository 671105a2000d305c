//! Synthetic benchmarks with exposed ground truth.
//!
//! Every problem verifies at construction that its starting point is
//! strictly feasible and locates the safe optimum by dense-grid brute force
//! over the feasible connected component containing the starting point.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::acquisition::AcquisitionSpec;
use crate::gp::{GpError, GpModel, KernelSpec};
use crate::safe_loop::{
    Domain, ExperimentRecord, LoopConfig, Observation, Oracle, OracleError,
};

pub type ScalarFn = fn(&[f64]) -> f64;

/// Optimum of the cost over the safe component reachable from `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// `max - min` of the cost over the same component.
    pub cost_range: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub name: String,
    pub dim: usize,
    pub cost_fn: ScalarFn,
    pub constraint_fns: Vec<ScalarFn>,
    /// Noise standard deviation for the cost followed by each constraint.
    pub noise_std: Vec<f64>,
    pub domain: Domain,
    pub x0: Vec<f64>,
    pub safe_optimum: SafeOptimum,
    /// Fixed hyperparameters for the models of this problem.
    pub cost_kernel: KernelSpec,
    pub constraint_kernel: KernelSpec,
    pub model_noise_std: f64,
}

fn toy1_cost(x: &[f64]) -> f64 {
    let x = x[0];
    0.1 * x * x
        - 4.0 * (-(x - 1.2).powi(2) / 0.5).exp()
        - 2.5 * (-(x + 1.2).powi(2) / 0.5).exp()
        - 6.0 * (-(x - 4.4).powi(2) / 0.3).exp()
}

fn toy1_c1(x: &[f64]) -> f64 {
    3.0 + 4.0 * x[0].cos()
}

fn toy1_c2(x: &[f64]) -> f64 {
    2.5 + 1.5 * x[0] + 0.6 * (3.0 * x[0]).sin()
}

fn toy2_cost(x: &[f64]) -> f64 {
    0.5 * ((x[0] - 1.5).powi(2) + (x[1] - 1.0).powi(2)) + 0.5 * (2.0 * x[0]).sin()
}

fn toy2_c1(x: &[f64]) -> f64 {
    4.0 - x[0] * x[0] - 0.5 * x[1] * x[1] + 0.5 * (2.0 * x[1]).cos()
}

fn toy2_c2(x: &[f64]) -> f64 {
    2.0 + x[0] - x[1]
}

/// One-dimensional problem on `[-5, 5]` with two constraints.
///
/// ```text
/// cost(x) = 0.1 x^2 - 4 exp(-(x-1.2)^2/0.5) - 2.5 exp(-(x+1.2)^2/0.5)
///           - 6 exp(-(x-4.4)^2/0.3)
/// c1(x)   = 3 + 4 cos x
/// c2(x)   = 2.5 + 1.5 x + 0.6 sin 3x
/// ```
///
/// The feasible set is `[-1.893, 2.419] U [3.864, 5]`. The component
/// holding `x0 = 0` has its optimum near `x = 1.185`; the lower cost near
/// `x = 4.4` sits in the unreachable component. Models use RBF kernels with
/// lengthscale 0.5 and variance 80 and a zero prior mean.
pub fn toy_1d() -> SyntheticProblem {
    SyntheticProblem::new(
        "toy1d",
        toy1_cost,
        vec![toy1_c1, toy1_c2],
        vec![0.1; 3],
        Domain::new(vec![(-5.0, 5.0)]),
        vec![0.0],
        &[100_001],
        KernelSpec::rbf(0.5, 80.0),
        KernelSpec::rbf(0.5, 80.0),
        0.1,
    )
}

/// Two-dimensional problem on `[-3, 3]^2`: an elliptic constraint with a
/// ripple and a half-plane constraint.
///
/// ```text
/// cost(x, y) = 0.5 ((x-1.5)^2 + (y-1)^2) + 0.5 sin 2x
/// c1(x, y)   = 4 - x^2 - 0.5 y^2 + 0.5 cos 2y
/// c2(x, y)   = 2 + x - y
/// ```
pub fn toy_2d() -> SyntheticProblem {
    SyntheticProblem::new(
        "toy2d",
        toy2_cost,
        vec![toy2_c1, toy2_c2],
        vec![0.05; 3],
        Domain::new(vec![(-3.0, 3.0), (-3.0, 3.0)]).with_grid(61),
        vec![0.0, 0.0],
        &[401, 401],
        KernelSpec::rbf(1.0, 20.0),
        KernelSpec::rbf(1.0, 20.0),
        0.05,
    )
}

impl SyntheticProblem {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        cost_fn: ScalarFn,
        constraint_fns: Vec<ScalarFn>,
        noise_std: Vec<f64>,
        domain: Domain,
        x0: Vec<f64>,
        resolution: &[usize],
        cost_kernel: KernelSpec,
        constraint_kernel: KernelSpec,
        model_noise_std: f64,
    ) -> Self {
        let dim = domain.dim();
        assert!(
            constraint_fns.iter().all(|c| c(&x0) > 0.0),
            "{name}: starting point must be strictly feasible"
        );
        let safe_optimum =
            brute_force_safe_optimum(cost_fn, &constraint_fns, &domain, &x0, resolution);
        SyntheticProblem {
            name: name.to_string(),
            dim,
            cost_fn,
            constraint_fns,
            noise_std,
            domain,
            x0,
            safe_optimum,
            cost_kernel,
            constraint_kernel,
            model_noise_std,
        }
    }

    /// Same problem with every output's noise set to `std`.
    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = vec![std; self.noise_std.len()];
        self
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint_fns.len()
    }

    pub fn truth(&self, x: &[f64]) -> Observation {
        Observation::new(
            (self.cost_fn)(x),
            self.constraint_fns.iter().map(|c| c(x)).collect(),
        )
    }

    /// Truth plus independent Gaussian noise per output.
    pub fn query<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Observation, OracleError> {
        if !self.domain.contains(x) {
            return Err(OracleError::OutOfDomain(x.to_vec()));
        }
        let truth = self.truth(x);
        let mut noise = self.noise_std.iter().map(|s| {
            let z: f64 = rng.sample(StandardNormal);
            s * z
        });
        let cost = truth.cost + noise.next().unwrap_or(0.0);
        let constraints = truth
            .constraints
            .iter()
            .map(|c| c + noise.next().unwrap_or(0.0))
            .collect();
        Ok(Observation::new(cost, constraints))
    }

    /// Prior models with this problem's fixed hyperparameters and a zero
    /// prior mean.
    pub fn default_models(&self) -> Result<(GpModel, Vec<GpModel>), GpError> {
        let cost = GpModel::new(self.cost_kernel.clone(), self.dim, 0.0, self.model_noise_std)?;
        let cons = (0..self.num_constraints())
            .map(|_| GpModel::new(self.constraint_kernel.clone(), self.dim, 0.0, self.model_noise_std))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((cost, cons))
    }

    /// Loop configuration starting at this problem's `x0` with its default
    /// models.
    pub fn loop_config(
        &self,
        acquisition: AcquisitionSpec,
        budget: usize,
        seed: u64,
    ) -> Result<LoopConfig, GpError> {
        let (cost_model, constraint_models) = self.default_models()?;
        Ok(LoopConfig {
            domain: self.domain.clone(),
            acquisition,
            cost_model,
            constraint_models,
            x0: self.x0.clone(),
            budget,
            seed,
        })
    }

    pub fn oracle(&self, seed: u64) -> ProblemOracle {
        ProblemOracle {
            problem: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// A problem bound to its own noise stream.
#[derive(Debug, Clone)]
pub struct ProblemOracle {
    problem: SyntheticProblem,
    rng: ChaCha8Rng,
}

impl ProblemOracle {
    pub fn problem(&self) -> &SyntheticProblem {
        &self.problem
    }
}

impl Oracle for ProblemOracle {
    fn dim(&self) -> usize {
        self.problem.dim
    }

    fn num_constraints(&self) -> usize {
        self.problem.num_constraints()
    }

    fn query(&mut self, x: &[f64]) -> Result<Observation, OracleError> {
        self.problem.query(x, &mut self.rng)
    }

    fn truth(&self, x: &[f64]) -> Option<Observation> {
        Some(self.problem.truth(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretMetrics {
    /// Best true cost among truly feasible queries minus the safe optimum;
    /// `+inf` when no query was feasible.
    pub simple_regret: f64,
    /// Queries with any true constraint below zero.
    pub violations: usize,
}

pub fn regret_metrics(history: &[ExperimentRecord], problem: &SyntheticProblem) -> RegretMetrics {
    let mut best = f64::INFINITY;
    let mut violations = 0;
    for r in history {
        let t = problem.truth(&r.x);
        if t.constraints.iter().any(|c| *c < 0.0) {
            violations += 1;
        } else {
            best = best.min(t.cost);
        }
    }
    RegretMetrics {
        simple_regret: best - problem.safe_optimum.value,
        violations,
    }
}

/// Dense grid search restricted to the strictly feasible connected
/// component (axis neighbours) that contains the grid point nearest `x0`.
fn brute_force_safe_optimum(
    cost: ScalarFn,
    constraints: &[ScalarFn],
    domain: &Domain,
    x0: &[f64],
    resolution: &[usize],
) -> SafeOptimum {
    let dim = domain.dim();
    assert_eq!(resolution.len(), dim);
    let axes: Vec<Vec<f64>> = domain
        .bounds
        .iter()
        .zip(resolution)
        .map(|((lo, hi), n)| crate::safe_loop::linspace(*lo, *hi, *n))
        .collect();
    let total: usize = resolution.iter().product();
    let point = |flat: usize| -> Vec<f64> {
        let mut rem = flat;
        let mut p = vec![0.0; dim];
        for d in (0..dim).rev() {
            p[d] = axes[d][rem % resolution[d]];
            rem /= resolution[d];
        }
        p
    };
    let feasible = |p: &[f64]| constraints.iter().all(|c| c(p) > 0.0);

    let start: usize = (0..dim).fold(0, |acc, d| {
        let (lo, hi) = domain.bounds[d];
        let step = (hi - lo) / (resolution[d] - 1) as f64;
        let i = (((x0[d] - lo) / step).round() as usize).min(resolution[d] - 1);
        acc * resolution[d] + i
    });
    assert!(feasible(&point(start)), "grid point nearest x0 is infeasible");

    let mut seen = vec![false; total];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let (mut best_x, mut best_v) = (point(start), f64::INFINITY);
    let mut worst_v = f64::NEG_INFINITY;
    while let Some(flat) = queue.pop_front() {
        let p = point(flat);
        let v = cost(&p);
        if v < best_v || (v == best_v && p < best_x) {
            best_v = v;
            best_x = p.clone();
        }
        worst_v = worst_v.max(v);
        let mut stride = 1;
        for d in (0..dim).rev() {
            let coord = (flat / stride) % resolution[d];
            let mut neighbours = Vec::with_capacity(2);
            if coord > 0 {
                neighbours.push(flat - stride);
            }
            if coord + 1 < resolution[d] {
                neighbours.push(flat + stride);
            }
            for nb in neighbours {
                if !seen[nb] && feasible(&point(nb)) {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
            stride *= resolution[d];
        }
    }
    SafeOptimum {
        x: best_x,
        value: best_v,
        cost_range: worst_v - best_v,
    }
}
