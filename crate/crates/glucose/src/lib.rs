//! A virtual type-1-diabetes patient and the meal-bolus dose problem.
//!
//! The patient is an ODE surrogate ([`patient`]) observed through a noisy
//! CGM. [`DoseOracle`] turns one meal into one safe-BO query: the cost is
//! the glycemic penalty index of the CGM trace and the constraint the margin
//! of its post-peak minimum above 70 mg/dl.

pub mod dose;
pub mod guidance;
pub mod metrics;
pub mod patient;

pub use dose::{calibrate, cohort, CalibratedPatient, CalibrationError, CohortError, DoseOracle, DoseSweep};
pub use metrics::{gpi, hypo_constraint, penalty, tir_metrics, TimeInRange};
pub use patient::{simulate, simulate_noiseless, CgmTrace, MealScenario, PatientModel, SimError};
