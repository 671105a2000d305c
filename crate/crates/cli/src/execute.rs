//! Runs every (method, seed[, patient]) cell and persists the results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use safebo::problems::{self, regret_metrics, SyntheticProblem};
use safebo::safe_loop::run;
use safebo::{
    AcquisitionSpec, BaseAcquisition, ExperimentRecord, LoopConfig, SafetyMode,
};
use safebo_glucose::guidance::GuidanceSettings;
use safebo_glucose::{calibrate, cohort, tir_metrics, CalibratedPatient, CgmTrace, DoseOracle, PatientModel, TimeInRange};
use serde::Serialize;
use thiserror::Error;

use crate::config::{Method, ProblemConfig, Resolved};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot set up problem: {0}")]
    Setup(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExecError + '_ {
    move |source| ExecError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One independent run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    pub patient: Option<usize>,
}

impl Cell {
    pub fn id(&self) -> String {
        match self.patient {
            Some(p) => format!("{}_p{p:02}_s{}", self.method, self.seed),
            None => format!("{}_s{}", self.method, self.seed),
        }
    }

    /// Seed of the oracle's noise stream. Methods share streams so they are
    /// compared on common random numbers; patients do not.
    fn oracle_seed(&self) -> u64 {
        match self.patient {
            Some(p) => self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (p as u64 + 1),
            None => self.seed,
        }
    }
}

/// The problem instance shared by every cell.
#[derive(Debug, Clone)]
pub enum Instance {
    Synthetic(SyntheticProblem),
    Glucose {
        patients: Vec<CalibratedPatient>,
        settings: GuidanceSettings,
    },
}

impl Instance {
    pub fn build(cfg: &Resolved) -> Result<Self, ExecError> {
        match &cfg.problem {
            ProblemConfig::Toy1d {} | ProblemConfig::Toy2d {} => {
                let mut p = if matches!(cfg.problem, ProblemConfig::Toy1d {}) {
                    problems::toy_1d()
                } else {
                    problems::toy_2d()
                };
                if let Some(s) = cfg.noise_std {
                    p = p.with_noise(s);
                }
                if let Some(g) = cfg.grid_points {
                    p.domain = p.domain.clone().with_grid(g);
                }
                if let Some(r) = cfg.refinement_iters {
                    p.domain = p.domain.clone().with_refinement(r);
                }
                Ok(Instance::Synthetic(p))
            }
            ProblemConfig::Glucose {
                cohort_size,
                cohort_seed,
                patient_file,
            } => {
                let mut patients = match patient_file {
                    Some(path) => load_patients(path)?,
                    None => {
                        let mut rng = ChaCha8Rng::seed_from_u64(*cohort_seed);
                        cohort(cohort_size.unwrap_or(10), &mut rng)
                            .map_err(|e| ExecError::Setup(e.to_string()))?
                    }
                };
                if let Some(s) = cfg.noise_std {
                    for c in &mut patients {
                        c.patient.cgm_noise_std = s;
                    }
                }
                let mut settings = GuidanceSettings {
                    budget: cfg.budget,
                    tau_decay: cfg.tau_decay,
                    ..GuidanceSettings::default()
                };
                if let Some(tau) = cfg.tau {
                    settings.tau = tau;
                }
                settings.cost_beta = cfg.cost_beta;
                settings.constraint_beta = cfg.constraint_beta;
                if let Some(g) = cfg.grid_points {
                    settings.grid_points = g;
                }
                Ok(Instance::Glucose { patients, settings })
            }
        }
    }

    pub fn num_constraints(&self) -> usize {
        match self {
            Instance::Synthetic(p) => p.num_constraints(),
            Instance::Glucose { .. } => 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Instance::Synthetic(p) => p.dim,
            Instance::Glucose { .. } => 1,
        }
    }

    fn cells(&self, cfg: &Resolved) -> Vec<Cell> {
        let patients: Vec<Option<usize>> = match self {
            Instance::Synthetic(_) => vec![None],
            Instance::Glucose { patients, .. } => (0..patients.len()).map(Some).collect(),
        };
        let mut cells = Vec::new();
        for &method in &cfg.methods {
            for &patient in &patients {
                for &seed in &cfg.seeds {
                    cells.push(Cell { method, seed, patient });
                }
            }
        }
        cells
    }

    /// Loop configuration of one cell.
    pub fn loop_config(&self, cfg: &Resolved, cell: &Cell) -> Result<LoopConfig, ExecError> {
        let acq = acquisition(cfg, cell.method, self.num_constraints());
        let setup = |e: safebo::GpError| ExecError::Setup(e.to_string());
        match self {
            Instance::Synthetic(p) => p.loop_config(acq, cfg.budget, cell.seed).map_err(setup),
            Instance::Glucose { settings, .. } => {
                let mut lc = settings.loop_config(acq, cell.seed).map_err(setup)?;
                if let Some(r) = cfg.refinement_iters {
                    lc.domain = lc.domain.with_refinement(r);
                }
                Ok(lc)
            }
        }
    }
}

fn load_patients(path: &Path) -> Result<Vec<CalibratedPatient>, ExecError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parsed: Vec<PatientModel> = match serde_json::from_str::<PatientModel>(&text) {
        Ok(p) => vec![p],
        Err(_) => serde_json::from_str(&text)
            .map_err(|e| ExecError::Setup(format!("{}: {e}", path.display())))?,
    };
    parsed
        .iter()
        .enumerate()
        .map(|(i, p)| calibrate(p).map_err(|e| ExecError::Setup(format!("patient {i}: {e}"))))
        .collect()
}

/// The acquisition each method runs with.
///
/// PF needs a nonnegative improvement, so it uses PI when asked for and EI
/// otherwise. Pourmohamad's acquisition has no base term to choose.
pub fn acquisition(cfg: &Resolved, method: Method, m: usize) -> AcquisitionSpec {
    let betas = vec![cfg.constraint_beta; m];
    let (base, safety) = match method {
        Method::Barrier => (
            cfg.base_acquisition,
            SafetyMode::Barrier {
                tau: cfg.tau.expect("barrier runs resolve tau"),
                tau_decay: cfg.tau_decay,
                betas,
            },
        ),
        Method::Pf => (
            if cfg.base_acquisition == BaseAcquisition::Pi {
                BaseAcquisition::Pi
            } else {
                BaseAcquisition::Ei
            },
            SafetyMode::Pf,
        ),
        Method::Pourmohamad => (cfg.base_acquisition, SafetyMode::Pourmohamad),
        Method::SafeoptRule => (cfg.base_acquisition, SafetyMode::SafeOptRule { betas }),
    };
    AcquisitionSpec {
        base,
        cost_beta: cfg.cost_beta,
        safety,
    }
}

/// Everything one cell produced.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub loop_config: Option<LoopConfig>,
    pub records: Vec<ExperimentRecord>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    /// CGM traces of every meal (glucose only).
    pub traces: Vec<CgmTrace>,
}

fn run_cell(instance: &Instance, cfg: &Resolved, cell: Cell) -> CellOutcome {
    let mut outcome = CellOutcome {
        cell,
        loop_config: None,
        records: Vec::new(),
        warnings: Vec::new(),
        error: None,
        traces: Vec::new(),
    };
    let lc = match instance.loop_config(cfg, &cell) {
        Ok(lc) => lc,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    let result = match instance {
        Instance::Synthetic(p) => run(&mut p.oracle(cell.oracle_seed()), &lc),
        Instance::Glucose { patients, .. } => {
            let patient = &patients[cell.patient.expect("glucose cells carry a patient")];
            match DoseOracle::new(patient.patient.clone(), cell.oracle_seed()) {
                Ok(mut oracle) => {
                    let r = run(&mut oracle, &lc);
                    outcome.traces = oracle.traces().to_vec();
                    r
                }
                Err(e) => {
                    outcome.error = Some(e.to_string());
                    return outcome;
                }
            }
        }
    };
    match result {
        Ok(run) => {
            outcome.records = run.records;
            outcome.warnings = run.warnings;
            outcome.error = run.error.map(|e| e.to_string());
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome.loop_config = Some(lc);
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub id: String,
    pub method: Method,
    pub seed: u64,
    pub patient: Option<usize>,
    pub records_file: String,
    pub n_records: usize,
    pub violations: usize,
    pub fallbacks: usize,
    pub final_x: Option<Vec<f64>>,
    /// Synthetic problems: best true cost among truly feasible queries minus
    /// the safe optimum.
    pub simple_regret: Option<f64>,
    /// `simple_regret` divided by the cost range over the safe component.
    pub regret_fraction: Option<f64>,
    /// Glucose: the patient's brute-force optimal dose, U.
    pub optimal_dose: Option<f64>,
    /// Glucose: final dose divided by the optimal dose.
    pub final_dose_ratio: Option<f64>,
    /// Glucose: first meal whose dose was within 15% of the optimum,
    /// counting from 1 (meal 1 is the initial dose).
    pub first_meal_within_15pct: Option<usize>,
    /// Glucose: noiseless glucose samples at or below 70 mg/dl over all meals.
    pub true_hypo_samples: Option<usize>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub cells: usize,
    pub failed_cells: usize,
    pub queries: usize,
    pub violations: usize,
    pub fallbacks: usize,
    pub median_simple_regret: Option<f64>,
    pub median_regret_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientSummary {
    pub index: usize,
    pub optimal_dose: f64,
    pub parameters: PatientModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub problem: String,
    pub config: Resolved,
    pub methods: Vec<MethodSummary>,
    pub cells: Vec<CellSummary>,
    pub patients: Vec<PatientSummary>,
}

/// Results held in memory after [`execute`], used for reporting.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: Resolved,
    pub instance: Instance,
    pub outcomes: Vec<CellOutcome>,
    pub summary: Summary,
    pub out_dir: PathBuf,
}

/// Runs every cell in parallel, writes one record CSV per cell, a timing
/// CSV and `summary.json` under `out_dir`.
pub fn execute(cfg: &Resolved, out_dir: &Path) -> Result<RunArtifacts, ExecError> {
    let instance = Instance::build(cfg)?;
    let cells = instance.cells(cfg);
    let records_dir = out_dir.join("records");
    fs::create_dir_all(&records_dir).map_err(io_err(&records_dir))?;

    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|cell| run_cell(&instance, cfg, *cell))
        .collect();

    let mut cell_summaries = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let file = format!("records/{}.csv", o.cell.id());
        let path = out_dir.join(&file);
        fs::write(&path, records_csv(&o.cell, &o.records, instance.dim(), instance.num_constraints()))
            .map_err(io_err(&path))?;
        cell_summaries.push(summarize_cell(&instance, o, file));
    }
    write_timings(out_dir, &outcomes)?;

    let methods = cfg
        .methods
        .iter()
        .map(|m| summarize_method(*m, &cell_summaries))
        .collect();
    let patients = match &instance {
        Instance::Glucose { patients, .. } => patients
            .iter()
            .enumerate()
            .map(|(index, c)| PatientSummary {
                index,
                optimal_dose: c.optimal_dose,
                parameters: c.patient.clone(),
            })
            .collect(),
        Instance::Synthetic(_) => Vec::new(),
    };
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        problem: cfg.problem.name().to_string(),
        config: cfg.clone(),
        methods,
        cells: cell_summaries,
        patients,
    };
    let path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;

    Ok(RunArtifacts {
        config: cfg.clone(),
        instance,
        outcomes,
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}

fn summarize_cell(instance: &Instance, o: &CellOutcome, records_file: String) -> CellSummary {
    let mut s = CellSummary {
        id: o.cell.id(),
        method: o.cell.method,
        seed: o.cell.seed,
        patient: o.cell.patient,
        records_file,
        n_records: o.records.len(),
        violations: o.records.iter().filter(|r| r.violation).count(),
        fallbacks: o.records.iter().filter(|r| r.fallback).count(),
        final_x: o.records.last().map(|r| r.x.clone()),
        simple_regret: None,
        regret_fraction: None,
        optimal_dose: None,
        final_dose_ratio: None,
        first_meal_within_15pct: None,
        true_hypo_samples: None,
        warnings: o.warnings.clone(),
        error: o.error.clone(),
    };
    match instance {
        Instance::Synthetic(p) if !o.records.is_empty() => {
            let m = regret_metrics(&o.records, p);
            s.simple_regret = Some(m.simple_regret);
            s.regret_fraction = Some(m.simple_regret / p.safe_optimum.cost_range);
        }
        Instance::Glucose { patients, .. } if !o.records.is_empty() => {
            let opt = patients[o.cell.patient.expect("glucose cell")].optimal_dose;
            s.optimal_dose = Some(opt);
            s.final_dose_ratio = o.records.last().map(|r| r.x[0] / opt);
            s.first_meal_within_15pct = o
                .records
                .iter()
                .position(|r| (r.x[0] / opt - 1.0).abs() <= 0.15)
                .map(|i| i + 1);
            s.true_hypo_samples = Some(
                o.traces
                    .iter()
                    .map(|t| t.true_bg.iter().filter(|g| **g <= 70.0).count())
                    .sum(),
            );
        }
        _ => {}
    }
    s
}

fn summarize_method(method: Method, cells: &[CellSummary]) -> MethodSummary {
    let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.method == method).collect();
    let regrets: Vec<f64> = mine.iter().filter_map(|c| c.simple_regret).collect();
    let fractions: Vec<f64> = mine.iter().filter_map(|c| c.regret_fraction).collect();
    MethodSummary {
        method,
        cells: mine.len(),
        failed_cells: mine.iter().filter(|c| c.error.is_some()).count(),
        queries: mine.iter().map(|c| c.n_records).sum(),
        violations: mine.iter().map(|c| c.violations).sum(),
        fallbacks: mine.iter().map(|c| c.fallbacks).sum(),
        median_simple_regret: median(&regrets),
        median_regret_fraction: median(&fractions),
    }
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Floats with 17 significant digits, so that every value round-trips.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Column order, fixed: `schema_version, cell, method, seed, patient,
/// iteration, x_1..x_d, y_cost, y_c1..y_cm, true_cost, true_c1..true_cm,
/// safe_set_fraction, min_constraint_lcb, tau, fallback, violation`.
pub fn records_header(dim: usize, m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["schema_version", "cell", "method", "seed", "patient", "iteration"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=dim).map(|i| format!("x_{i}")));
    h.push("y_cost".into());
    h.extend((1..=m).map(|i| format!("y_c{i}")));
    h.push("true_cost".into());
    h.extend((1..=m).map(|i| format!("true_c{i}")));
    h.extend(
        ["safe_set_fraction", "min_constraint_lcb", "tau", "fallback", "violation"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

pub fn records_csv(cell: &Cell, records: &[ExperimentRecord], dim: usize, m: usize) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(records_header(dim, m)).expect("in-memory write");
    for r in records {
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            cell.id(),
            cell.method.to_string(),
            cell.seed.to_string(),
            cell.patient.map(|p| p.to_string()).unwrap_or_default(),
            r.iteration.to_string(),
        ];
        row.extend(r.x.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(r.observed.cost));
        row.extend(r.observed.constraints.iter().map(|v| fmt_f64(*v)));
        match &r.truth {
            Some(t) => {
                row.push(fmt_f64(t.cost));
                row.extend(t.constraints.iter().map(|v| fmt_f64(*v)));
            }
            None => row.extend(std::iter::repeat_n(String::new(), m + 1)),
        }
        row.push(opt_f64(r.safe_set_fraction));
        row.push(opt_f64(r.min_constraint_lcb));
        row.push(opt_f64(r.tau));
        row.push(r.fallback.to_string());
        row.push(r.violation.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn write_timings(out_dir: &Path, outcomes: &[CellOutcome]) -> Result<(), ExecError> {
    let path = out_dir.join("timings.csv");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    writeln!(f, "cell,iteration,wall_time_ms").map_err(io_err(&path))?;
    for o in outcomes {
        for r in &o.records {
            writeln!(f, "{},{},{}", o.cell.id(), r.iteration, r.wall_time_ms).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// Time in range of every meal of a glucose cell, from the CGM readings.
pub fn meal_tir(traces: &[CgmTrace]) -> Vec<TimeInRange> {
    traces.iter().map(|t| tir_metrics(&t.cgm)).collect()
}
