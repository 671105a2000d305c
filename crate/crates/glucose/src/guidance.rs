//! Loop settings for personalized bolus guidance.

use safebo::{
    AcquisitionSpec, BaseAcquisition, BetaSchedule, Domain, GpError, GpModel, KernelSpec,
    LoopConfig, SafetyMode,
};
use serde::{Deserialize, Serialize};

use crate::dose::{INITIAL_BOLUS_U, MAX_BOLUS_U};

/// Fixed GP hyperparameters and acquisition settings for dose guidance.
///
/// The defaults were chosen on synthetic cohorts. The cost kernel is short
/// (2 U) because GPI is sharply curved around the optimum and a long
/// lengthscale extrapolates it upward past the data, stalling the search at
/// low doses. The constraint model adds a linear trend to a 4 U RBF so the
/// nadir margin keeps falling with dose where no data exist yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSettings {
    pub cost_kernel: KernelSpec,
    pub cost_noise: f64,
    pub constraint_kernel: KernelSpec,
    pub constraint_noise: f64,
    pub cost_beta: BetaSchedule,
    pub constraint_beta: BetaSchedule,
    pub tau: f64,
    pub tau_decay: f64,
    pub budget: usize,
    pub grid_points: usize,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        GuidanceSettings {
            cost_kernel: KernelSpec::rbf(2.0, 2000.0 * 2000.0),
            cost_noise: 20.0,
            constraint_kernel: KernelSpec::sum(vec![
                KernelSpec::rbf(4.0, 100.0 * 100.0),
                KernelSpec::linear(9.0, 0.0),
            ]),
            constraint_noise: 3.0,
            cost_beta: BetaSchedule::Fixed { beta: 4.0 },
            constraint_beta: BetaSchedule::Fixed { beta: 4.0 },
            tau: 0.1,
            tau_decay: 1.0,
            budget: 15,
            grid_points: 1001,
        }
    }
}

impl GuidanceSettings {
    pub fn acquisition(&self) -> AcquisitionSpec {
        AcquisitionSpec {
            base: BaseAcquisition::Lcb,
            cost_beta: self.cost_beta,
            safety: SafetyMode::Barrier {
                tau: self.tau,
                tau_decay: self.tau_decay,
                betas: vec![self.constraint_beta],
            },
        }
    }

    /// Barrier loop over `[0, MAX_BOLUS_U]` starting at the initial dose.
    pub fn loop_config(&self, acquisition: AcquisitionSpec, seed: u64) -> Result<LoopConfig, GpError> {
        Ok(LoopConfig {
            domain: Domain::new(vec![(0.0, MAX_BOLUS_U)]).with_grid(self.grid_points),
            acquisition,
            cost_model: GpModel::new(self.cost_kernel.clone(), 1, 0.0, self.cost_noise)?,
            constraint_models: vec![GpModel::new(
                self.constraint_kernel.clone(),
                1,
                0.0,
                self.constraint_noise,
            )?],
            x0: vec![INITIAL_BOLUS_U],
            budget: self.budget,
            seed,
        })
    }
}
