use super::*;
use crate::gp::KernelSpec;
use crate::problems;

/// Deterministic oracle built from closures; counts its queries.
struct FnOracle {
    dim: usize,
    cost: fn(&[f64]) -> f64,
    constraints: Vec<fn(&[f64]) -> f64>,
    queries: usize,
}

impl Oracle for FnOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn query(&mut self, x: &[f64]) -> Result<Observation, OracleError> {
        self.queries += 1;
        Ok(self.truth(x).unwrap())
    }

    fn truth(&self, x: &[f64]) -> Option<Observation> {
        Some(Observation::new(
            (self.cost)(x),
            self.constraints.iter().map(|c| c(x)).collect(),
        ))
    }
}

fn record(x: Vec<f64>, cost: f64, constraints: Vec<f64>) -> ExperimentRecord {
    ExperimentRecord {
        iteration: 0,
        x,
        observed: Observation::new(cost, constraints),
        truth: None,
        safe_set_fraction: None,
        min_constraint_lcb: None,
        tau: None,
        fallback: false,
        violation: false,
        wall_time_ms: 0.0,
    }
}

fn barrier(tau: f64, beta: f64, m: usize) -> AcquisitionSpec {
    AcquisitionSpec {
        base: BaseAcquisition::Lcb,
        cost_beta: BetaSchedule::Fixed { beta: 4.0 },
        safety: SafetyMode::Barrier {
            tau,
            tau_decay: 1.0,
            betas: vec![BetaSchedule::Fixed { beta }; m],
        },
    }
}

fn config_1d(
    bounds: (f64, f64),
    grid: usize,
    acquisition: AcquisitionSpec,
    cost_model: GpModel,
    constraint_models: Vec<GpModel>,
) -> LoopConfig {
    LoopConfig {
        domain: Domain::new(vec![bounds]).with_grid(grid).with_refinement(0),
        acquisition,
        cost_model,
        constraint_models,
        x0: vec![0.5 * (bounds.0 + bounds.1)],
        budget: 0,
        seed: 0,
    }
}

fn rbf_model(noise: f64) -> GpModel {
    GpModel::new(KernelSpec::rbf(1.0, 1.0), 1, 0.0, noise).unwrap()
}

fn toy_barrier_config(budget: usize, seed: u64) -> (problems::SyntheticProblem, LoopConfig) {
    let problem = problems::toy_1d();
    let cfg = problem.loop_config(barrier(1e-3, 4.0, 2), budget, seed).unwrap();
    (problem, cfg)
}

#[test]
fn empty_history_has_empty_safe_set() {
    let cfg = config_1d((-1.0, 1.0), 101, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![rbf_model(0.1)]);
    let state = SafeBoState::from_history(&cfg, &[]).unwrap();
    let safe = state.safe_set().unwrap();
    assert_eq!(safe.fraction_safe, 0.0);
    assert!(safe.member_mask.iter().all(|m| !m));
}

#[test]
fn linear_constraint_with_tiny_beta_splits_grid_in_half() {
    let linear = GpModel::new(KernelSpec::linear(1.0, 0.0), 1, 0.0, 0.0).unwrap();
    let cfg = config_1d((-1.0, 1.0), 1000, barrier(0.1, 1e-12, 1), rbf_model(0.1), vec![linear]);
    let state = SafeBoState::from_history(&cfg, &[record(vec![0.5], 0.0, vec![0.5])]).unwrap();
    let safe = state.safe_set().unwrap();
    assert_eq!(safe.fraction_safe, 0.5);
    for (x, m) in state.grid().iter().zip(&safe.member_mask) {
        assert_eq!(*m, x[0] > 0.0, "at {}", x[0]);
    }
}

#[test]
fn noiselessly_observed_safe_point_is_in_safe_set() {
    let cons = GpModel::new(KernelSpec::rbf(0.1, 1.0), 1, 0.0, 0.0).unwrap();
    let cfg = config_1d((0.0, 1.0), 11, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![cons]);
    let probe = cfg.domain.grid()[3].clone();
    let state = SafeBoState::from_history(&cfg, &[record(probe, 0.0, vec![2.0])]).unwrap();
    let safe = state.safe_set().unwrap();
    assert!(safe.member_mask[3]);
    // Zero prior mean with unit prior variance: nothing far away is safe.
    assert!(!safe.member_mask[0] && !safe.member_mask[10]);
}

/// Cost `-x` wants the right edge; the constraint `9 - x^2` stops it at 3.
fn quadratic_barrier_state(tau: f64, safety: Option<SafetyMode>) -> SafeBoState {
    let xs: Vec<f64> = linspace(0.0, 5.0, 26);
    let history: Vec<_> = xs
        .iter()
        .map(|&x| record(vec![x], -x, vec![9.0 - x * x]))
        .collect();
    let cost = GpModel::new(KernelSpec::linear(1.0, 0.0), 1, 0.0, 0.0).unwrap();
    let cons = GpModel::new(KernelSpec::rbf(1.5, 100.0), 1, 0.0, 0.0).unwrap();
    let mut acq = barrier(tau, 1e-6, 1);
    acq.cost_beta = BetaSchedule::Fixed { beta: 1e-6 };
    if let Some(s) = safety {
        acq.safety = s;
    }
    let cfg = config_1d((0.0, 5.0), 501, acq, cost, vec![cons]);
    SafeBoState::from_history(&cfg, &history).unwrap()
}

#[test]
fn barrier_proposal_stops_at_constraint_boundary() {
    let state = quadratic_barrier_state(1e-3, None);
    let p = state.propose().unwrap();
    assert!(!p.fallback);
    assert!(p.x[0] > 2.0 && p.x[0] <= 3.0, "proposal {}", p.x[0]);
}

#[test]
fn vanishing_tau_recovers_unconstrained_proposal_inside_safe_set() {
    // With every grid point deep inside the safe set the barrier is a
    // negligible perturbation.
    let xs: Vec<f64> = linspace(-1.0, 1.0, 11);
    let history: Vec<_> = xs
        .iter()
        .map(|&x| record(vec![x], (x - 0.37).powi(2), vec![50.0 - x * x]))
        .collect();
    let cons = GpModel::new(KernelSpec::rbf(1.0, 100.0), 1, 0.0, 0.01).unwrap();
    let proposal = |safety: SafetyMode| {
        let mut acq = barrier(1e-12, 4.0, 1);
        acq.safety = safety;
        let mut cfg = config_1d((-1.0, 1.0), 201, acq, rbf_model(0.01), vec![cons.clone()]);
        cfg.domain = cfg.domain.with_refinement(2);
        SafeBoState::from_history(&cfg, &history).unwrap().propose().unwrap()
    };
    let with_barrier = proposal(SafetyMode::Barrier {
        tau: 1e-12,
        tau_decay: 1.0,
        betas: vec![BetaSchedule::Fixed { beta: 4.0 }],
    });
    let without = proposal(SafetyMode::None);
    assert_eq!(with_barrier.x, without.x);
    assert!((with_barrier.score - without.score).abs() < 1e-9);
}

#[test]
fn probability_of_feasibility_selects_the_only_feasible_point() {
    // Two exactly known linear constraints, x - a >= 0 and a - x >= 0.
    let domain = Domain::new(vec![(-1.0, 1.0)]).with_grid(21).with_refinement(0);
    let a = domain.grid()[13][0];
    let up = GpModel::new(KernelSpec::linear(1.0, a), 1, 0.0, 0.0).unwrap();
    let down = up.clone();
    let acq = AcquisitionSpec {
        base: BaseAcquisition::Ei,
        cost_beta: BetaSchedule::default(),
        safety: SafetyMode::Pf,
    };
    let mut cfg = config_1d((-1.0, 1.0), 21, acq, rbf_model(0.1), vec![up, down]);
    cfg.domain = domain;
    let state =
        SafeBoState::from_history(&cfg, &[record(vec![a + 0.5], 0.0, vec![0.5, -0.5])]).unwrap();
    let p = state.propose().unwrap();
    assert_eq!(p.x, vec![a]);
    assert!(p.score < 0.0);
    for x in state.grid() {
        if x[0] != a {
            assert_eq!(state.acquisition_value(x).unwrap(), 0.0, "at {}", x[0]);
        }
    }
}

#[test]
fn grid_proposal_matches_exhaustive_argmin() {
    let (problem, mut cfg) = toy_barrier_config(6, 3);
    cfg.domain = cfg.domain.with_grid(401).with_refinement(0);
    let mut oracle = problem.oracle(3);
    let mut state = SafeBoState::init(&mut oracle, &cfg).unwrap();
    for _ in 0..6 {
        let p = state.propose().unwrap();
        let values: Vec<f64> = state
            .grid()
            .iter()
            .map(|x| state.acquisition_value(x).unwrap())
            .collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = values.iter().position(|v| *v == min).unwrap();
        assert_eq!(p.x, state.grid()[first]);
        assert_eq!(p.score, min);
        state.step(&mut oracle).unwrap();
    }
}

#[test]
fn refinement_never_worsens_the_grid_score() {
    let (problem, cfg) = toy_barrier_config(4, 11);
    let coarse = LoopConfig {
        domain: cfg.domain.clone().with_refinement(0),
        ..cfg.clone()
    };
    let outcome = run(&mut problem.oracle(11), &cfg).unwrap();
    for k in 1..outcome.records.len() {
        let fine = SafeBoState::from_history(&cfg, &outcome.records[..k]).unwrap();
        let grid = SafeBoState::from_history(&coarse, &outcome.records[..k]).unwrap();
        assert!(fine.propose().unwrap().score <= grid.propose().unwrap().score);
    }
}

#[test]
fn runs_are_deterministic_for_a_seed() {
    let (problem, cfg) = toy_barrier_config(10, 42);
    let strip = |mut rs: Vec<ExperimentRecord>| {
        rs.iter_mut().for_each(|r| r.wall_time_ms = 0.0);
        rs
    };
    let a = strip(run(&mut problem.oracle(42), &cfg).unwrap().records);
    let b = strip(run(&mut problem.oracle(42), &cfg).unwrap().records);
    assert_eq!(a, b);
    let c = strip(run(&mut problem.oracle(43), &cfg).unwrap().records);
    assert_ne!(a, c);
}

#[test]
fn budget_counts_steps_after_the_initial_point() {
    let (problem, cfg) = toy_barrier_config(25, 1);
    let outcome = run(&mut problem.oracle(1), &cfg).unwrap();
    assert!(outcome.error.is_none());
    assert_eq!(outcome.records.len(), 26);
    for (i, r) in outcome.records.iter().enumerate() {
        assert_eq!(r.iteration, i);
    }
    assert_eq!(outcome.records[0].x, problem.x0);
    assert!(outcome.records[0].safe_set_fraction.is_none());
    assert!(outcome.records[1..].iter().all(|r| r.safe_set_fraction.is_some()));
}

#[test]
fn zero_budget_queries_only_the_initial_point() {
    let (problem, cfg) = toy_barrier_config(0, 1);
    let outcome = run(&mut problem.oracle(1), &cfg).unwrap();
    assert_eq!(outcome.records.len(), 1);
}

#[test]
fn initial_point_outside_domain_fails_before_querying() {
    let mut oracle = FnOracle {
        dim: 1,
        cost: |x| x[0],
        constraints: vec![|_| 1.0],
        queries: 0,
    };
    let mut cfg = config_1d((-1.0, 1.0), 11, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![rbf_model(0.1)]);
    cfg.x0 = vec![1.5];
    let err = run(&mut oracle, &cfg).unwrap_err();
    assert_eq!(err, LoopError::InitialOutOfDomain(vec![1.5]));
    assert_eq!(oracle.queries, 0);
}

#[test]
fn mismatched_oracle_is_a_config_error() {
    let mut oracle = FnOracle {
        dim: 1,
        cost: |x| x[0],
        constraints: vec![],
        queries: 0,
    };
    let cfg = config_1d((-1.0, 1.0), 11, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![rbf_model(0.1)]);
    assert!(matches!(run(&mut oracle, &cfg), Err(LoopError::Config(_))));
    assert_eq!(oracle.queries, 0);
}

#[test]
fn unsafe_start_warns() {
    let mut oracle = FnOracle {
        dim: 1,
        cost: |x| x[0],
        constraints: vec![|_| -1.0],
        queries: 0,
    };
    let cfg = config_1d((-1.0, 1.0), 11, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![rbf_model(0.1)]);
    let state = SafeBoState::init(&mut oracle, &cfg).unwrap();
    assert!(state.warnings()[0].contains("constraint 1"));
    assert!(state.history()[0].violation);
}

#[test]
fn empty_safe_set_falls_back_and_warns() {
    // A barely positive constraint under a very uncertain model: no LCB is
    // positive anywhere.
    let mut oracle = FnOracle {
        dim: 1,
        cost: |x| x[0] * x[0],
        constraints: vec![|_| 0.01],
        queries: 0,
    };
    let cons = GpModel::new(KernelSpec::rbf(0.5, 1.0), 1, 0.0, 1.0).unwrap();
    let mut cfg = config_1d((-1.0, 1.0), 21, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![cons]);
    cfg.budget = 2;
    let outcome = run(&mut oracle, &cfg).unwrap();
    assert_eq!(outcome.records.len(), 3);
    for r in &outcome.records[1..] {
        assert!(r.fallback);
        assert_eq!(r.safe_set_fraction, Some(0.0));
        assert!(r.min_constraint_lcb.unwrap() <= 0.0);
    }
    assert_eq!(outcome.warnings.len(), 2);
    assert!(outcome.warnings.iter().all(|w| w.contains("largest constraint LCB")));
}

#[test]
fn safe_modes_only_query_points_with_positive_lcb() {
    let problem = problems::toy_1d();
    let safeopt = AcquisitionSpec {
        base: BaseAcquisition::Lcb,
        cost_beta: BetaSchedule::default(),
        safety: SafetyMode::SafeOptRule {
            betas: vec![BetaSchedule::default(); 2],
        },
    };
    for acq in [barrier(1e-3, 4.0, 2), safeopt] {
        let cfg = problem.loop_config(acq, 12, 5).unwrap();
        let outcome = run(&mut problem.oracle(5), &cfg).unwrap();
        for r in &outcome.records[1..] {
            assert!(!r.fallback);
            assert!(r.min_constraint_lcb.unwrap() > 0.0, "{r:?}");
            assert!(!r.violation);
        }
    }
}

#[test]
fn tau_decays_with_observation_count() {
    let (problem, mut cfg) = toy_barrier_config(3, 2);
    cfg.acquisition = AcquisitionSpec {
        safety: SafetyMode::Barrier {
            tau: 0.5,
            tau_decay: 0.5,
            betas: vec![BetaSchedule::default(); 2],
        },
        ..cfg.acquisition
    };
    let outcome = run(&mut problem.oracle(2), &cfg).unwrap();
    let taus: Vec<_> = outcome.records.iter().map(|r| r.tau).collect();
    assert_eq!(taus, vec![None, Some(0.5), Some(0.25), Some(0.125)]);
}

#[test]
fn best_observed_prefers_feasible_records() {
    let cfg = config_1d((-1.0, 1.0), 11, barrier(0.1, 4.0, 1), rbf_model(0.1), vec![rbf_model(0.1)]);
    let history = [
        record(vec![0.0], 3.0, vec![1.0]),
        record(vec![0.5], -7.0, vec![-1.0]),
        record(vec![-0.5], 2.0, vec![0.0]),
    ];
    let state = SafeBoState::from_history(&cfg, &history).unwrap();
    assert_eq!(state.best_observed(), 2.0);
    let infeasible = SafeBoState::from_history(&cfg, &history[1..2]).unwrap();
    assert_eq!(infeasible.best_observed(), -7.0);
}
