//! Acquisition functions.
//!
//! All scores here follow the sign convention of their literature form:
//! LCB and the barrier-augmented acquisition are minimized, EI, PI, the
//! probability-of-feasibility product and the SafeOpt-rule width are
//! maximized. [`crate::safe_loop`] maps every mode onto a single
//! minimization.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::gp::Posterior;

/// Confidence scaling `beta` (the square of the band multiplier).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Fixed {
        beta: f64,
    },
    /// `sqrt(beta_n) = B + v sqrt(2 (gamma_{n-1} + 1 + ln(1/delta)))`
    Theoretical {
        rkhs_bound: f64,
        noise: f64,
        delta: f64,
    },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Fixed { beta: 4.0 }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            BetaSchedule::Fixed { beta } if beta.is_finite() && beta > 0.0 => Ok(()),
            BetaSchedule::Fixed { beta } => Err(format!("fixed beta must be > 0, got {beta}")),
            BetaSchedule::Theoretical {
                rkhs_bound,
                noise,
                delta,
            } => {
                let mut errs = Vec::new();
                if !(rkhs_bound.is_finite() && rkhs_bound > 0.0) {
                    errs.push(format!("rkhs_bound must be > 0, got {rkhs_bound}"));
                }
                if !(noise.is_finite() && noise > 0.0) {
                    errs.push(format!("noise must be > 0, got {noise}"));
                }
                if !(delta > 0.0 && delta < 1.0) {
                    errs.push(format!("delta must lie in (0, 1), got {delta}"));
                }
                if errs.is_empty() {
                    Ok(())
                } else {
                    Err(errs.join("; "))
                }
            }
        }
    }

    pub fn needs_information_gain(&self) -> bool {
        matches!(self, BetaSchedule::Theoretical { .. })
    }

    /// `beta_n` for iteration `n` given the information gain `gamma_{n-1}`.
    /// The fixed mode ignores both arguments; the theoretical mode depends on
    /// `n` only through `gamma`.
    pub fn value(&self, _n: usize, gamma: f64) -> f64 {
        match *self {
            BetaSchedule::Fixed { beta } => beta,
            BetaSchedule::Theoretical {
                rkhs_bound,
                noise,
                delta,
            } => {
                let root =
                    rkhs_bound + noise * (2.0 * (gamma + 1.0 + (1.0 / delta).ln())).sqrt();
                root * root
            }
        }
    }
}

/// Unconstrained base acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseAcquisition {
    /// GP lower confidence bound (minimized).
    Lcb,
    /// Expected improvement over the best feasible observation (maximized).
    Ei,
    /// Probability of improvement over the best feasible observation (maximized).
    Pi,
}

/// How the constraint models enter the acquisition.
#[derive(Debug, Clone, PartialEq)]
pub enum SafetyMode {
    /// Constraints ignored.
    None,
    /// Base acquisition minus `tau * sum ln LCB_i`.
    Barrier {
        tau: f64,
        tau_decay: f64,
        betas: Vec<BetaSchedule>,
    },
    /// Maximize base improvement times the probability of feasibility.
    Pf,
    /// Barrier acquisition on the posterior means.
    Pourmohamad,
    /// Widest confidence interval inside the LCB safe set.
    SafeOptRule { betas: Vec<BetaSchedule> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    pub base: BaseAcquisition,
    /// Schedule for the cost LCB (also used as the cost width in the
    /// SafeOpt rule).
    pub cost_beta: BetaSchedule,
    pub safety: SafetyMode,
}

impl AcquisitionSpec {
    pub fn validate(&self, num_constraints: usize) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if let Err(e) = self.cost_beta.validate() {
            errs.push(format!("cost beta: {e}"));
        }
        let check_betas = |betas: &[BetaSchedule], errs: &mut Vec<String>| {
            if betas.len() != num_constraints {
                errs.push(format!(
                    "{} constraint beta schedules for {} constraints",
                    betas.len(),
                    num_constraints
                ));
            }
            for (i, b) in betas.iter().enumerate() {
                if let Err(e) = b.validate() {
                    errs.push(format!("constraint {} beta: {e}", i + 1));
                }
            }
        };
        match &self.safety {
            SafetyMode::Barrier {
                tau,
                tau_decay,
                betas,
            } => {
                if !(tau.is_finite() && *tau > 0.0) {
                    errs.push(format!("tau must be > 0, got {tau}"));
                }
                if !(*tau_decay > 0.0 && *tau_decay <= 1.0) {
                    errs.push(format!("tau_decay must lie in (0, 1], got {tau_decay}"));
                }
                check_betas(betas, &mut errs);
            }
            SafetyMode::SafeOptRule { betas } => check_betas(betas, &mut errs),
            SafetyMode::Pf => {
                if self.base == BaseAcquisition::Lcb {
                    errs.push("probability of feasibility needs a nonnegative base (ei or pi)".into());
                }
            }
            SafetyMode::None | SafetyMode::Pourmohamad => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Constraint confidence schedules: those of the safety mode, or the
    /// default `beta = 4` for modes that do not carry their own (used for
    /// safe-set reporting only).
    pub fn constraint_betas(&self, m: usize) -> Vec<BetaSchedule> {
        match &self.safety {
            SafetyMode::Barrier { betas, .. } | SafetyMode::SafeOptRule { betas } => betas.clone(),
            _ => vec![BetaSchedule::default(); m],
        }
    }

    /// Barrier weight at iteration `n >= 1`: `tau * tau_decay^(n-1)`.
    pub fn tau_at(&self, n: usize) -> Option<f64> {
        match &self.safety {
            SafetyMode::Barrier { tau, tau_decay, .. } => {
                Some(tau * tau_decay.powi(n.saturating_sub(1) as i32))
            }
            _ => None,
        }
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `mu - sqrt(beta) sigma`.
pub fn lcb(post: &Posterior, beta: f64) -> f64 {
    post.mean - beta.sqrt() * post.std()
}

/// Expected improvement below `best` (minimization form).
pub fn expected_improvement(post: &Posterior, best: f64) -> f64 {
    let sigma = post.std();
    let gap = best - post.mean;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Probability that the cost lies below `best`.
pub fn probability_of_improvement(post: &Posterior, best: f64) -> f64 {
    let sigma = post.std();
    if sigma <= 0.0 {
        return if post.mean < best { 1.0 } else { 0.0 };
    }
    normal_cdf((best - post.mean) / sigma)
}

/// `ln(LCB)` of a constraint, or `-inf` when the LCB is not strictly positive.
pub fn barrier_term(post: &Posterior, beta: f64) -> f64 {
    let bound = lcb(post, beta);
    if bound > 0.0 {
        bound.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `base - tau * sum(terms)`; any `-inf` term yields `+inf`.
pub fn barrier_acquisition(base_value: f64, barrier_terms: &[f64], tau: f64) -> f64 {
    if barrier_terms.contains(&f64::NEG_INFINITY) {
        return f64::INFINITY;
    }
    base_value - tau * barrier_terms.iter().sum::<f64>()
}

/// `P(f(x) >= 0) = Phi(mu / sigma)`, with the degenerate `sigma = 0` case
/// resolved by the sign of the mean.
pub fn probability_feasible(post: &Posterior) -> f64 {
    let sigma = post.std();
    if sigma <= 0.0 {
        return if post.mean >= 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf(post.mean / sigma)
}

/// Base improvement scaled by the joint probability of feasibility (maximized).
pub fn pf_acquisition(base_ei: f64, constraint_posteriors: &[Posterior]) -> f64 {
    if base_ei == 0.0 {
        return 0.0;
    }
    base_ei
        * constraint_posteriors
            .iter()
            .map(probability_feasible)
            .product::<f64>()
}

/// `mu0 - sigma0^2 * sum_i (ln mu_i - sigma_i^2 / (2 mu_i^2))`, `+inf` when
/// any constraint mean is nonpositive.
pub fn pourmohamad_acquisition(cost: &Posterior, constraints: &[Posterior]) -> f64 {
    let mut total = 0.0;
    for c in constraints {
        if c.mean <= 0.0 {
            return f64::INFINITY;
        }
        total += c.mean.ln() - c.variance / (2.0 * c.mean * c.mean);
    }
    cost.mean - cost.variance * total
}

/// Widest confidence interval `max_j 2 sqrt(beta_j) sigma_j`.
pub fn safeopt_rule_score(posteriors: &[Posterior], betas: &[f64]) -> f64 {
    posteriors
        .iter()
        .zip(betas)
        .map(|(p, b)| 2.0 * b.sqrt() * p.std())
        .fold(0.0, f64::max)
}
