//! Exact Gaussian process regression with fixed hyperparameters.
//!
//! A [`GpModel`] holds a kernel, a constant prior mean, the observation noise
//! standard deviation and the observed data. Conditioning caches the Cholesky
//! factor of `K + v^2 I + jitter I` together with the weight vector
//! `(K + v^2 I)^-1 (y - m)`; predictions use triangular solves only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Jitter starts at this fraction of the mean diagonal of `K + v^2 I`.
const JITTER_START: f64 = 1e-10;
/// Last relative jitter level tried before giving up.
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("noise standard deviation must be finite and nonnegative, got {0}")]
    InvalidNoise(f64),
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("non-finite observation {0}")]
    NonFinite(f64),
    #[error("covariance matrix is singular even with jitter {jitter:e}")]
    SingularCovariance { jitter: f64 },
    #[error("model has observations but has not been conditioned")]
    NotConditioned,
    #[error("information gain is undefined for zero observation noise")]
    ZeroNoise,
}

/// Covariance function with fixed hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `variance * exp(-|x - x'|^2 / (2 lengthscale^2))`
    Rbf { lengthscale: f64, variance: f64 },
    /// `variance * sum_d (x_d - offset) (x'_d - offset)`
    Linear {
        variance: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Sum of at least two kernels.
    Sum { terms: Vec<KernelSpec> },
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, variance: f64) -> Self {
        KernelSpec::Rbf {
            lengthscale,
            variance,
        }
    }

    pub fn linear(variance: f64, offset: f64) -> Self {
        KernelSpec::Linear { variance, offset }
    }

    pub fn sum(terms: Vec<KernelSpec>) -> Self {
        KernelSpec::Sum { terms }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(GpError::InvalidKernel(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        match self {
            KernelSpec::Rbf {
                lengthscale,
                variance,
            } => {
                positive("lengthscale", *lengthscale)?;
                positive("variance", *variance)
            }
            KernelSpec::Linear { variance, offset } => {
                positive("variance", *variance)?;
                if offset.is_finite() {
                    Ok(())
                } else {
                    Err(GpError::InvalidKernel(format!("offset {offset} is not finite")))
                }
            }
            KernelSpec::Sum { terms } => {
                if terms.len() < 2 {
                    return Err(GpError::InvalidKernel(format!(
                        "sum needs at least two terms, got {}",
                        terms.len()
                    )));
                }
                terms.iter().try_for_each(KernelSpec::validate)
            }
        }
    }

    /// Evaluates `k(x, x')`, checking that both points have the same dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, GpError> {
        if x.len() != y.len() {
            return Err(GpError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Rbf {
                lengthscale,
                variance,
            } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                variance * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelSpec::Linear { variance, offset } => {
                variance
                    * x.iter()
                        .zip(y)
                        .map(|(a, b)| (a - offset) * (b - offset))
                        .sum::<f64>()
            }
            KernelSpec::Sum { terms } => terms.iter().map(|k| k.eval_unchecked(x, y)).sum(),
        }
    }

    /// Gram matrix over `points`, row-major.
    pub fn gram(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|a| points.iter().map(|b| self.eval_unchecked(a, b)).collect())
            .collect()
    }
}

/// Posterior marginal at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn new(mean: f64, variance: f64) -> Self {
        Posterior { mean, variance }
    }

    pub fn std(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Vec<f64>,
    weights: Vec<f64>,
    jitter: f64,
}

/// One Gaussian process over `R^dim`.
///
/// The model is a value: adding data returns a new unconditioned model and
/// [`GpModel::condition`] returns the conditioned one.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    dim: usize,
    prior_mean: f64,
    noise_std: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    factor: Option<Factor>,
}

impl GpModel {
    pub fn new(
        kernel: KernelSpec,
        dim: usize,
        prior_mean: f64,
        noise_std: f64,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(GpError::InvalidNoise(noise_std));
        }
        if !prior_mean.is_finite() {
            return Err(GpError::NonFinite(prior_mean));
        }
        Ok(GpModel {
            kernel,
            dim,
            prior_mean,
            noise_std,
            inputs: Vec::new(),
            targets: Vec::new(),
            factor: None,
        })
    }

    /// Replaces the data set. The returned model is unconditioned.
    pub fn with_data(&self, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::LengthMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        for x in &inputs {
            self.check_dim(x)?;
        }
        if let Some(&bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(GpError::NonFinite(bad));
        }
        Ok(GpModel {
            inputs,
            targets,
            factor: None,
            ..self.clone()
        })
    }

    /// Appends one observation. The returned model is unconditioned.
    pub fn with_observation(&self, x: &[f64], y: f64) -> Result<Self, GpError> {
        let mut inputs = self.inputs.clone();
        let mut targets = self.targets.clone();
        inputs.push(x.to_vec());
        targets.push(y);
        self.with_data(inputs, targets)
    }

    /// Factorizes `K + v^2 I + jitter I`, escalating the jitter tenfold from
    /// `1e-10` to `1e-4` times the mean diagonal before failing.
    pub fn condition(mut self) -> Result<Self, GpError> {
        let n = self.inputs.len();
        if n == 0 {
            self.factor = None;
            return Ok(self);
        }
        let noise_var = self.noise_std * self.noise_std;
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = self.kernel.eval_unchecked(&self.inputs[i], &self.inputs[j]);
                base[i * n + j] = k;
                base[j * n + i] = k;
            }
            base[i * n + i] += noise_var;
        }
        let mean_diag = (0..n).map(|i| base[i * n + i]).sum::<f64>() / n as f64;
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };

        let mut rel = JITTER_START;
        let mut last_jitter = rel * scale;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            last_jitter = jitter;
            let mut a = base.clone();
            for i in 0..n {
                a[i * n + i] += jitter;
            }
            if let Some(chol) = linalg::cholesky(a, n) {
                let centered: Vec<f64> = self.targets.iter().map(|y| y - self.prior_mean).collect();
                let weights =
                    linalg::backward_solve(&chol, n, &linalg::forward_solve(&chol, n, &centered));
                self.factor = Some(Factor {
                    chol,
                    weights,
                    jitter,
                });
                return Ok(self);
            }
            rel *= 10.0;
        }
        Err(GpError::SingularCovariance {
            jitter: last_jitter,
        })
    }

    pub fn is_conditioned(&self) -> bool {
        self.inputs.is_empty() || self.factor.is_some()
    }

    /// Posterior mean and variance at `x`.
    ///
    /// The variance is clamped to `[0, k(x, x)]`.
    pub fn posterior(&self, x: &[f64]) -> Result<Posterior, GpError> {
        self.check_dim(x)?;
        let prior_var = self.kernel.eval_unchecked(x, x);
        if self.inputs.is_empty() {
            return Ok(Posterior::new(self.prior_mean, prior_var));
        }
        let factor = self.factor.as_ref().ok_or(GpError::NotConditioned)?;
        let n = self.inputs.len();
        let kx: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| self.kernel.eval_unchecked(x, xi))
            .collect();
        let mean = self.prior_mean + kx.iter().zip(&factor.weights).map(|(a, b)| a * b).sum::<f64>();
        let v = linalg::forward_solve(&factor.chol, n, &kx);
        let reduction: f64 = v.iter().map(|a| a * a).sum();
        let variance = (prior_var - reduction).clamp(0.0, prior_var.max(0.0));
        Ok(Posterior::new(mean, variance))
    }

    /// `1/2 ln |I + v^-2 K|` over the observed inputs.
    pub fn information_gain(&self) -> Result<f64, GpError> {
        if self.noise_std <= 0.0 {
            return Err(GpError::ZeroNoise);
        }
        let n = self.inputs.len();
        if n == 0 {
            return Ok(0.0);
        }
        let inv_var = 1.0 / (self.noise_std * self.noise_std);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = inv_var * self.kernel.eval_unchecked(&self.inputs[i], &self.inputs[j]);
                a[i * n + j] = k;
                a[j * n + i] = k;
            }
            a[i * n + i] += 1.0;
        }
        // I + K/v^2 has all eigenvalues >= 1, so the factorization only
        // fails if the kernel itself is broken.
        let chol = linalg::cholesky(a, n).ok_or(GpError::SingularCovariance { jitter: 0.0 })?;
        Ok((0..n).map(|i| chol[i * n + i].ln()).sum())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GpError> {
        if x.len() != self.dim {
            return Err(GpError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Jitter added to the diagonal by the last successful factorization.
    pub fn jitter(&self) -> Option<f64> {
        self.factor.as_ref().map(|f| f.jitter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rbf_at_zero_distance_is_variance() {
        let k = KernelSpec::rbf(0.5, 80.0);
        assert_eq!(k.eval(&[1.3], &[1.3]).unwrap(), 80.0);
    }

    #[test]
    fn rbf_half_unit_apart() {
        let k = KernelSpec::rbf(0.5, 80.0);
        let v = k.eval(&[0.0], &[0.5]).unwrap();
        assert_abs_diff_eq!(v, 80.0 * (-0.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 48.522, epsilon = 1e-3);
    }

    #[test]
    fn sum_with_linear_at_origin() {
        let k = KernelSpec::sum(vec![KernelSpec::rbf(1.0, 1.0), KernelSpec::linear(1.0, 0.0)]);
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let k = KernelSpec::rbf(1.0, 1.0);
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_validation() {
        assert!(KernelSpec::rbf(0.0, 1.0).validate().is_err());
        assert!(KernelSpec::rbf(1.0, -1.0).validate().is_err());
        assert!(KernelSpec::linear(0.0, 0.0).validate().is_err());
        assert!(KernelSpec::sum(vec![KernelSpec::rbf(1.0, 1.0)]).validate().is_err());
        assert!(
            KernelSpec::sum(vec![KernelSpec::rbf(1.0, 1.0), KernelSpec::rbf(0.0, 1.0)])
                .validate()
                .is_err()
        );
        assert!(GpModel::new(KernelSpec::rbf(1.0, 1.0), 1, 0.0, -0.1).is_err());
    }

    #[test]
    fn kernel_json_shape() {
        let k: KernelSpec = serde_json::from_str(
            r#"{"type":"sum","terms":[{"type":"rbf","lengthscale":2.0,"variance":3.0},{"type":"linear","variance":0.5}]}"#,
        )
        .unwrap();
        assert_eq!(
            k,
            KernelSpec::sum(vec![KernelSpec::rbf(2.0, 3.0), KernelSpec::linear(0.5, 0.0)])
        );
        assert!(serde_json::from_str::<KernelSpec>(
            r#"{"type":"rbf","lengthscale":2.0,"variance":3.0,"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn empty_model_is_prior() {
        let gp = GpModel::new(KernelSpec::rbf(0.5, 80.0), 1, 0.0, 0.1)
            .unwrap()
            .condition()
            .unwrap();
        let p = gp.posterior(&[2.0]).unwrap();
        assert_eq!(p, Posterior::new(0.0, 80.0));

        let gp = GpModel::new(KernelSpec::rbf(0.5, 80.0), 1, 3.5, 0.1).unwrap();
        assert_eq!(gp.posterior(&[-1.0]).unwrap(), Posterior::new(3.5, 80.0));
    }

    #[test]
    fn noiseless_interpolation() {
        let gp = GpModel::new(KernelSpec::rbf(0.5, 80.0), 1, 0.0, 0.0)
            .unwrap()
            .with_observation(&[0.3], 4.2)
            .unwrap()
            .condition()
            .unwrap();
        let p = gp.posterior(&[0.3]).unwrap();
        assert_abs_diff_eq!(p.mean, 4.2, epsilon = 1e-8);
        assert!(p.variance <= 1e-8 * 80.0);
    }

    #[test]
    fn unconditioned_model_errors() {
        let gp = GpModel::new(KernelSpec::rbf(0.5, 80.0), 1, 0.0, 0.1)
            .unwrap()
            .with_observation(&[0.3], 4.2)
            .unwrap();
        assert_eq!(gp.posterior(&[0.0]), Err(GpError::NotConditioned));
    }

    #[test]
    fn repeated_inputs_need_jitter() {
        // Identical noiseless inputs make K exactly rank one.
        let gp = GpModel::new(KernelSpec::rbf(1.0, 1.0), 1, 0.0, 0.0)
            .unwrap()
            .with_data(vec![vec![1.0]; 3], vec![2.0; 3])
            .unwrap()
            .condition()
            .unwrap();
        assert!(gp.jitter().unwrap() > 0.0);
        assert_abs_diff_eq!(gp.posterior(&[1.0]).unwrap().mean, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn singular_covariance_reports_jitter() {
        // Overflowing kernel values cannot be rescued by any jitter level.
        let err = GpModel::new(KernelSpec::linear(1e300, 0.0), 1, 0.0, 0.0)
            .unwrap()
            .with_data(vec![vec![1e10], vec![2e10]], vec![0.0, 1.0])
            .unwrap()
            .condition()
            .unwrap_err();
        assert!(matches!(err, GpError::SingularCovariance { .. }), "{err:?}");
        assert!(err.to_string().contains("jitter"));
    }

    #[test]
    fn information_gain_zero_data_and_zero_noise() {
        let gp = GpModel::new(KernelSpec::rbf(1.0, 1.0), 1, 0.0, 1.0).unwrap();
        assert_eq!(gp.information_gain().unwrap(), 0.0);
        let gp = GpModel::new(KernelSpec::rbf(1.0, 1.0), 1, 0.0, 0.0).unwrap();
        assert_eq!(gp.information_gain(), Err(GpError::ZeroNoise));
    }

    #[test]
    fn information_gain_diagonal_closed_form() {
        // Inputs 100 lengthscales apart give K = I up to exp(-5000).
        let xs = (0..4).map(|i| vec![100.0 * i as f64]).collect();
        let gp = GpModel::new(KernelSpec::rbf(1.0, 1.0), 1, 0.0, 1.0)
            .unwrap()
            .with_data(xs, vec![0.0; 4])
            .unwrap();
        let g = gp.information_gain().unwrap();
        assert_abs_diff_eq!(g, 4.0 * 0.5 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g, 1.3863, epsilon = 1e-4);
    }
}
