//! The meal-bolus problem: choose the insulin dose for a fixed meal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use safebo::{Observation, Oracle, OracleError};
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{gpi, hypo_constraint};
use crate::patient::{simulate, simulate_noiseless, CgmTrace, MealScenario, PatientModel, SimError};

/// Carbohydrates in the standardized meal, g.
pub const MEAL_CARBS_G: f64 = 80.0;
/// Dose range, U.
pub const MAX_BOLUS_U: f64 = 20.0;
/// The dose every guidance run starts from, U.
pub const INITIAL_BOLUS_U: f64 = 0.5;
/// Resolution of the reference dose sweep, U.
pub const SWEEP_STEP_U: f64 = 0.05;

/// Oracle for one patient: each query is one meal with the proposed bolus.
/// The cost is the GPI and the constraint the post-peak hypoglycemia margin,
/// both computed from the noisy CGM trace.
#[derive(Debug, Clone)]
pub struct DoseOracle {
    patient: PatientModel,
    rng: ChaCha8Rng,
    traces: Vec<CgmTrace>,
}

impl DoseOracle {
    pub fn new(patient: PatientModel, seed: u64) -> Result<Self, SimError> {
        patient.validate()?;
        Ok(DoseOracle {
            patient,
            rng: ChaCha8Rng::seed_from_u64(seed),
            traces: Vec::new(),
        })
    }

    pub fn patient(&self) -> &PatientModel {
        &self.patient
    }

    /// Traces of every meal queried so far, in order.
    pub fn traces(&self) -> &[CgmTrace] {
        &self.traces
    }

    fn check(x: &[f64]) -> Result<f64, OracleError> {
        match x {
            [d] if (0.0..=MAX_BOLUS_U).contains(d) => Ok(*d),
            _ => Err(OracleError::OutOfDomain(x.to_vec())),
        }
    }
}

fn observe(trace: &[f64]) -> Observation {
    Observation::new(gpi(trace), vec![hypo_constraint(trace)])
}

impl Oracle for DoseOracle {
    fn dim(&self) -> usize {
        1
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn query(&mut self, x: &[f64]) -> Result<Observation, OracleError> {
        let dose = Self::check(x)?;
        let trace = simulate(&self.patient, &MealScenario::new(MEAL_CARBS_G, dose), &mut self.rng)
            .map_err(|e| OracleError::Failed(e.to_string()))?;
        let obs = observe(&trace.cgm);
        self.traces.push(trace);
        Ok(obs)
    }

    fn truth(&self, x: &[f64]) -> Option<Observation> {
        let dose = Self::check(x).ok()?;
        let trace = simulate_noiseless(&self.patient, &MealScenario::new(MEAL_CARBS_G, dose)).ok()?;
        Some(observe(&trace.true_bg))
    }
}

/// Noiseless GPI and hypo margin on a dense dose grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoseSweep {
    pub doses: Vec<f64>,
    pub gpi: Vec<f64>,
    pub hypo: Vec<f64>,
}

impl DoseSweep {
    /// Sweeps `[0, MAX_BOLUS_U]` in steps of [`SWEEP_STEP_U`].
    pub fn run(patient: &PatientModel) -> Result<Self, SimError> {
        let n = (MAX_BOLUS_U / SWEEP_STEP_U).round() as usize;
        let mut sweep = DoseSweep {
            doses: Vec::with_capacity(n + 1),
            gpi: Vec::with_capacity(n + 1),
            hypo: Vec::with_capacity(n + 1),
        };
        for k in 0..=n {
            let dose = k as f64 * SWEEP_STEP_U;
            let trace = simulate_noiseless(patient, &MealScenario::new(MEAL_CARBS_G, dose))?;
            sweep.doses.push(dose);
            sweep.gpi.push(gpi(&trace.true_bg));
            sweep.hypo.push(hypo_constraint(&trace.true_bg));
        }
        Ok(sweep)
    }

    /// Index of the lowest GPI among doses with a nonnegative hypo margin.
    pub fn optimum_index(&self) -> Option<usize> {
        (0..self.doses.len())
            .filter(|&k| self.hypo[k] >= 0.0)
            .min_by(|&a, &b| self.gpi[a].total_cmp(&self.gpi[b]))
    }

    pub fn optimal_dose(&self) -> Option<f64> {
        self.optimum_index().map(|k| self.doses[k])
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("starting dose {INITIAL_BOLUS_U} U is not safe (hypo margin {0:.2})")]
    UnsafeStart(f64),
    #[error("maximum dose {MAX_BOLUS_U} U does not cause hypoglycemia (margin {0:.2})")]
    SafeOverdose(f64),
    #[error("optimal dose {0} U is not strictly inside ({INITIAL_BOLUS_U}, {MAX_BOLUS_U})")]
    OptimumOutside(f64),
    #[error("optimal dose is not unique (GPI {0:.4} reached at several doses)")]
    OptimumNotUnique(f64),
    #[error("no safe dose found")]
    NoSafeDose,
}

/// A patient that passed calibration, with its reference sweep.
#[derive(Debug, Clone)]
pub struct CalibratedPatient {
    pub patient: PatientModel,
    pub sweep: DoseSweep,
    pub optimal_dose: f64,
}

/// Checks that the starting dose is safe, the maximum dose is not, and the
/// constrained GPI optimum is unique and strictly inside the dose range.
pub fn calibrate(patient: &PatientModel) -> Result<CalibratedPatient, CalibrationError> {
    let sweep = DoseSweep::run(patient)?;
    let start = sweep.doses.iter().position(|d| (d - INITIAL_BOLUS_U).abs() < 1e-9).expect("0.5 on grid");
    if sweep.hypo[start] <= 0.0 {
        return Err(CalibrationError::UnsafeStart(sweep.hypo[start]));
    }
    let last = *sweep.hypo.last().expect("nonempty sweep");
    if last >= 0.0 {
        return Err(CalibrationError::SafeOverdose(last));
    }
    let k = sweep.optimum_index().ok_or(CalibrationError::NoSafeDose)?;
    let dose = sweep.doses[k];
    if dose <= INITIAL_BOLUS_U || dose >= MAX_BOLUS_U {
        return Err(CalibrationError::OptimumOutside(dose));
    }
    let ties = (0..sweep.doses.len())
        .filter(|&j| sweep.hypo[j] >= 0.0 && sweep.gpi[j] == sweep.gpi[k])
        .count();
    if ties > 1 {
        return Err(CalibrationError::OptimumNotUnique(sweep.gpi[k]));
    }
    Ok(CalibratedPatient {
        patient: patient.clone(),
        sweep,
        optimal_dose: dose,
    })
}

/// Log-normal spread (standard deviation of the log) applied around the
/// default patient when drawing a cohort.
pub const COHORT_SPREAD: [(&str, f64); 6] = [
    ("insulin_sensitivity", 0.25),
    ("carb_absorption_time", 0.2),
    ("insulin_absorption_time", 0.15),
    ("body_weight", 0.15),
    ("glucose_effectiveness", 0.2),
    ("insulin_action_decay", 0.15),
];

/// Attempts per cohort slot before giving up.
pub const MAX_COHORT_ATTEMPTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("cohort size must be at least 1")]
    Empty,
    #[error("patient {slot}: no calibrated draw in {MAX_COHORT_ATTEMPTS} attempts (last: {last})")]
    Exhausted { slot: usize, last: CalibrationError },
}

/// Draws `n` calibrated patients around [`PatientModel::default`]. Draws
/// failing calibration are rejected and redrawn.
pub fn cohort<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<CalibratedPatient>, CohortError> {
    if n == 0 {
        return Err(CohortError::Empty);
    }
    let base = PatientModel::default();
    let mut out = Vec::with_capacity(n);
    for slot in 0..n {
        let mut last = None;
        for _ in 0..MAX_COHORT_ATTEMPTS {
            let candidate = perturb(&base, rng);
            match calibrate(&candidate) {
                Ok(c) => {
                    out.push(c);
                    last = None;
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        if let Some(last) = last {
            return Err(CohortError::Exhausted { slot, last });
        }
    }
    Ok(out)
}

fn perturb<R: Rng + ?Sized>(base: &PatientModel, rng: &mut R) -> PatientModel {
    let mut p = base.clone();
    for (name, sd) in COHORT_SPREAD {
        let factor = LogNormal::new(0.0, sd).expect("positive spread").sample(rng);
        let field = match name {
            "insulin_sensitivity" => &mut p.insulin_sensitivity,
            "carb_absorption_time" => &mut p.carb_absorption_time,
            "insulin_absorption_time" => &mut p.insulin_absorption_time,
            "body_weight" => &mut p.body_weight,
            "glucose_effectiveness" => &mut p.glucose_effectiveness,
            "insulin_action_decay" => &mut p.insulin_action_decay,
            _ => unreachable!("unknown cohort parameter {name}"),
        };
        *field *= factor;
    }
    p
}
