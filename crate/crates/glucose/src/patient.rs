//! Surrogate patient: a Bergman-style minimal model with two-compartment
//! carbohydrate absorption and two-compartment subcutaneous insulin
//! absorption.
//!
//! State (all per patient, time in minutes):
//!
//! ```text
//! Q1' = -Q1 / tau_m                         gut carbohydrate, mg
//! Q2' = (Q1 - Q2) / tau_m
//! S1' = u_b - S1 / tau_i                    subcutaneous insulin, U
//! S2' = (S1 - S2) / tau_i
//! I'  = S2 / tau_i - k_e I                  plasma insulin, U
//! X'  = -p2 X + p2 S_I (I - I_b)            remote insulin action, 1/min
//! G'  = -(S_G + X) G + S_G G_b + Ra         plasma glucose, mg/dl
//! Ra  = f Q2 / (tau_m V_G BW)
//! ```
//!
//! with `I_b = u_b / k_e`. The basal state `S1 = S2 = u_b tau_i`, `I = I_b`,
//! `X = 0`, `G = G_b` is an exact equilibrium. A bolus is added to `S1` at
//! the meal time; the meal's carbohydrates start in `Q1`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid patient: {}", .0.join("; "))]
    InvalidPatient(Vec<String>),
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error("state became non-finite at integration step {step} (t = {time_min} min)")]
    NonFinite { step: usize, time_min: f64 },
}

/// Parameters of one virtual patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientModel {
    /// Fasting glucose `G_b`, mg/dl.
    pub basal_glucose: f64,
    /// Insulin-independent glucose uptake `S_G`, 1/min.
    pub glucose_effectiveness: f64,
    /// Insulin sensitivity `S_I`, 1/(U min).
    pub insulin_sensitivity: f64,
    /// Decay rate `p2` of remote insulin action, 1/min.
    pub insulin_action_decay: f64,
    /// Gut absorption time constant `tau_m`, min.
    pub carb_absorption_time: f64,
    /// Fraction `f` of ingested carbohydrate reaching the plasma.
    pub carb_bioavailability: f64,
    /// Glucose distribution volume `V_G`, dl/kg.
    pub glucose_volume: f64,
    /// Body weight `BW`, kg.
    pub body_weight: f64,
    /// Subcutaneous absorption time constant `tau_i`, min.
    pub insulin_absorption_time: f64,
    /// Plasma insulin clearance `k_e`, 1/min.
    pub insulin_clearance: f64,
    /// Basal infusion `u_b`, U/min.
    pub basal_insulin_rate: f64,
    /// RK4 step, min. Must divide the CGM sample period.
    #[serde(default = "default_step")]
    pub integrator_step: f64,
    #[serde(default = "default_cgm_noise")]
    pub cgm_noise_std: f64,
    #[serde(default = "default_sample_period")]
    pub cgm_sample_period: f64,
}

fn default_step() -> f64 {
    1.0
}

fn default_cgm_noise() -> f64 {
    5.0
}

fn default_sample_period() -> f64 {
    5.0
}

impl Default for PatientModel {
    fn default() -> Self {
        PatientModel {
            basal_glucose: 120.0,
            glucose_effectiveness: 0.003,
            insulin_sensitivity: 0.085,
            insulin_action_decay: 0.025,
            carb_absorption_time: 45.0,
            carb_bioavailability: 0.8,
            glucose_volume: 1.9,
            body_weight: 70.0,
            insulin_absorption_time: 50.0,
            insulin_clearance: 0.138,
            basal_insulin_rate: 1.0 / 60.0,
            integrator_step: default_step(),
            cgm_noise_std: default_cgm_noise(),
            cgm_sample_period: default_sample_period(),
        }
    }
}

impl PatientModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        let positive = [
            ("glucose_effectiveness", self.glucose_effectiveness),
            ("insulin_sensitivity", self.insulin_sensitivity),
            ("insulin_action_decay", self.insulin_action_decay),
            ("carb_absorption_time", self.carb_absorption_time),
            ("carb_bioavailability", self.carb_bioavailability),
            ("glucose_volume", self.glucose_volume),
            ("body_weight", self.body_weight),
            ("insulin_absorption_time", self.insulin_absorption_time),
            ("insulin_clearance", self.insulin_clearance),
            ("basal_insulin_rate", self.basal_insulin_rate),
            ("integrator_step", self.integrator_step),
            ("cgm_sample_period", self.cgm_sample_period),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(90.0..=160.0).contains(&self.basal_glucose) {
            errs.push(format!(
                "basal_glucose must lie in [90, 160] mg/dl, got {}",
                self.basal_glucose
            ));
        }
        if !(self.cgm_noise_std.is_finite() && self.cgm_noise_std >= 0.0) {
            errs.push(format!("cgm_noise_std must be >= 0, got {}", self.cgm_noise_std));
        }
        if errs.is_empty() && self.steps_per_sample().is_none() {
            errs.push(format!(
                "integrator_step {} must divide cgm_sample_period {}",
                self.integrator_step, self.cgm_sample_period
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidPatient(errs))
        }
    }

    /// Basal plasma insulin `u_b / k_e`, U.
    pub fn basal_insulin(&self) -> f64 {
        self.basal_insulin_rate / self.insulin_clearance
    }

    pub fn with_integrator_step(mut self, step: f64) -> Self {
        self.integrator_step = step;
        self
    }

    pub fn with_cgm_noise(mut self, std: f64) -> Self {
        self.cgm_noise_std = std;
        self
    }

    fn steps_per_sample(&self) -> Option<usize> {
        let ratio = self.cgm_sample_period / self.integrator_step;
        let k = ratio.round();
        ((ratio - k).abs() < 1e-9 && k >= 1.0).then_some(k as usize)
    }

    fn basal_state(&self) -> State {
        let s = self.basal_insulin_rate * self.insulin_absorption_time;
        [0.0, 0.0, s, s, self.basal_insulin(), 0.0, self.basal_glucose]
    }

    fn rhs(&self, s: &State) -> State {
        let [q1, q2, s1, s2, i, x, g] = *s;
        let tau_m = self.carb_absorption_time;
        let tau_i = self.insulin_absorption_time;
        let p2 = self.insulin_action_decay;
        let ra = self.carb_bioavailability * q2
            / (tau_m * self.glucose_volume * self.body_weight);
        [
            -q1 / tau_m,
            (q1 - q2) / tau_m,
            self.basal_insulin_rate - s1 / tau_i,
            (s1 - s2) / tau_i,
            s2 / tau_i - self.insulin_clearance * i,
            -p2 * x + p2 * self.insulin_sensitivity * (i - self.basal_insulin()),
            -(self.glucose_effectiveness + x) * g
                + self.glucose_effectiveness * self.basal_glucose
                + ra,
        ]
    }
}

type State = [f64; 7];

/// One meal with a bolus given at the same time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MealScenario {
    pub carbs_g: f64,
    pub bolus_u: f64,
    #[serde(default = "default_horizon")]
    pub horizon_h: f64,
}

fn default_horizon() -> f64 {
    6.0
}

impl MealScenario {
    pub fn new(carbs_g: f64, bolus_u: f64) -> Self {
        MealScenario {
            carbs_g,
            bolus_u,
            horizon_h: default_horizon(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        if !(self.carbs_g.is_finite() && self.carbs_g >= 0.0) {
            errs.push(format!("carbs must be >= 0 g, got {}", self.carbs_g));
        }
        if !(self.bolus_u.is_finite() && self.bolus_u >= 0.0) {
            errs.push(format!("bolus must be >= 0 U, got {}", self.bolus_u));
        }
        if !(self.horizon_h.is_finite() && self.horizon_h > 0.0) {
            errs.push(format!("horizon must be > 0 h, got {}", self.horizon_h));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidScenario(errs))
        }
    }
}

/// CGM readings at a fixed period, with the noiseless glucose alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgmTrace {
    pub times_min: Vec<f64>,
    pub cgm: Vec<f64>,
    pub true_bg: Vec<f64>,
}

impl CgmTrace {
    pub fn len(&self) -> usize {
        self.cgm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cgm.is_empty()
    }
}

/// Integrates the patient over the scenario horizon with fixed-step RK4 and
/// samples CGM every `cgm_sample_period` minutes, adding i.i.d. Gaussian
/// noise. Sample `k` is taken at `t = k * period`, `t = 0` included.
pub fn simulate<R: Rng + ?Sized>(
    patient: &PatientModel,
    scenario: &MealScenario,
    rng: &mut R,
) -> Result<CgmTrace, SimError> {
    let mut trace = simulate_noiseless(patient, scenario)?;
    if patient.cgm_noise_std > 0.0 {
        let noise = Normal::new(0.0, patient.cgm_noise_std).expect("validated std");
        for c in &mut trace.cgm {
            *c += noise.sample(rng);
        }
    }
    Ok(trace)
}

/// Noise-free simulation; `cgm` equals `true_bg`.
pub fn simulate_noiseless(patient: &PatientModel, scenario: &MealScenario) -> Result<CgmTrace, SimError> {
    patient.validate()?;
    scenario.validate()?;
    let dt = patient.integrator_step;
    let every = patient.steps_per_sample().expect("validated");
    let steps = (scenario.horizon_h * 60.0 / dt).round() as usize;

    let mut s = patient.basal_state();
    s[0] += scenario.carbs_g * 1000.0;
    s[2] += scenario.bolus_u;

    let mut times = vec![0.0];
    let mut true_bg = vec![s[6]];
    for step in 1..=steps {
        s = rk4(patient, &s, dt);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                step,
                time_min: step as f64 * dt,
            });
        }
        if step % every == 0 {
            times.push(step as f64 * dt);
            true_bg.push(s[6]);
        }
    }
    Ok(CgmTrace {
        times_min: times,
        cgm: true_bg.clone(),
        true_bg,
    })
}

fn rk4(p: &PatientModel, s: &State, dt: f64) -> State {
    let add = |a: &State, b: &State, h: f64| -> State {
        std::array::from_fn(|i| a[i] + h * b[i])
    };
    let k1 = p.rhs(s);
    let k2 = p.rhs(&add(s, &k1, dt / 2.0));
    let k3 = p.rhs(&add(s, &k2, dt / 2.0));
    let k4 = p.rhs(&add(s, &k3, dt));
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}
