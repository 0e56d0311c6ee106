//! Adaptation state: the recursive inverse-Fisher square root, the
//! empirical-covariance recursion used by AdaMALA, the stochastic
//! approximation of the Fisher matrix itself, and the step-size controller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Cholesky, LinalgError, Matrix, SqrtPreconditioner};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptError {
    #[error("covariance is undefined until two samples have been seen (have {0})")]
    NotReady(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub const DEFAULT_DAMPING: f64 = 10.0;
pub const DEFAULT_ADAPTATION_RATE: f64 = 0.015;
pub const TARGET_ACCEPTANCE: f64 = 0.574;
pub const MIN_STEP_SIZE: f64 = 1e-8;

/// Rao-Blackwellized score increment `√α (s(y) − s(x))`.
pub fn fisher_signal(alpha: f64, score_x: &[f64], score_y: &[f64]) -> Vec<f64> {
    let w = alpha.clamp(0.0, 1.0).sqrt();
    score_y
        .iter()
        .zip(score_x)
        .map(|(sy, sx)| w * (sy - sx))
        .collect()
}

/// Tracks `R` with `R Rᵀ = (λI + Σᵢ sᵢsᵢᵀ)⁻¹` over the signals seen so far.
///
/// Before the first signal `R = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherAdapter {
    sqrt: SqrtPreconditioner,
    updates: usize,
    lambda: f64,
}

impl FisherAdapter {
    pub fn new(dim: usize, lambda: f64) -> Result<Self, AdaptError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LinalgError::InvalidArgument(format!(
                "damping must be positive, got {lambda}"
            ))
            .into());
        }
        Ok(FisherAdapter {
            sqrt: SqrtPreconditioner::identity(dim),
            updates: 0,
            lambda,
        })
    }

    pub fn step(&mut self, signal: &[f64]) -> Result<(), AdaptError> {
        if self.updates == 0 {
            self.sqrt = SqrtPreconditioner::init(signal, self.lambda)?;
        } else {
            self.sqrt.update(signal);
        }
        self.updates += 1;
        Ok(())
    }

    pub fn sqrt(&self) -> &SqrtPreconditioner {
        &self.sqrt
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Running mean and damped covariance of the visited states.
#[derive(Debug, Clone)]
pub struct CovarianceAdapter {
    mean: Vec<f64>,
    covariance: Option<Matrix>,
    factor: Option<Cholesky>,
    count: usize,
    lambda: f64,
}

impl CovarianceAdapter {
    pub fn new(dim: usize, lambda: f64) -> Result<Self, AdaptError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LinalgError::InvalidArgument(format!(
                "damping must be positive, got {lambda}"
            ))
            .into());
        }
        Ok(CovarianceAdapter {
            mean: vec![0.0; dim],
            covariance: None,
            factor: None,
            count: 0,
            lambda,
        })
    }

    pub fn step(&mut self, x: &[f64]) -> Result<(), AdaptError> {
        self.count += 1;
        let n = self.count as f64;
        match self.count {
            1 => self.mean.copy_from_slice(x),
            _ => {
                let dev: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
                match (&mut self.covariance, &mut self.factor) {
                    (Some(cov), Some(factor)) => {
                        let keep = (n - 2.0) / (n - 1.0);
                        cov.scale_mut(keep);
                        cov.rank_one_mut(1.0 / n, &dev, &dev);
                        cov.symmetrize();
                        factor.scale_mut(keep.sqrt());
                        let w: Vec<f64> = dev.iter().map(|v| v / n.sqrt()).collect();
                        factor.rank_one_update(&w);
                    }
                    _ => {
                        let mut cov = Matrix::outer(&dev, &dev).scale(0.5);
                        cov.add_diag(self.lambda);
                        self.factor = Some(Cholesky::factor(&cov)?);
                        self.covariance = Some(cov);
                    }
                }
                for (m, xi) in self.mean.iter_mut().zip(x) {
                    *m = (n - 1.0) / n * *m + xi / n;
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> Result<&Matrix, AdaptError> {
        self.covariance
            .as_ref()
            .ok_or(AdaptError::NotReady(self.count))
    }

    /// Lower Cholesky factor of the current covariance.
    pub fn factor(&self) -> Result<&Cholesky, AdaptError> {
        self.factor.as_ref().ok_or(AdaptError::NotReady(self.count))
    }
}

/// Learning-rate schedule `γₙ` for the stochastic Fisher recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearningRate {
    /// `γₙ = 1/n`
    Harmonic,
    /// `γₙ = n^(−κ)`
    Power { kappa: f64 },
    /// `γₙ = γ`
    Constant { gamma: f64 },
}

impl LearningRate {
    pub fn at(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            LearningRate::Harmonic => 1.0 / n,
            LearningRate::Power { kappa } => n.powf(-kappa),
            LearningRate::Constant { gamma } => gamma,
        }
    }
}

/// `𝓘̂ₙ = (1 − γₙ) 𝓘̂ₙ₋₁ + γₙ sₙsₙᵀ`, started at `𝓘̂₁ = s₁s₁ᵀ + λI`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticFisherEstimate {
    estimate: Option<Matrix>,
    count: usize,
    lambda: f64,
    schedule: LearningRate,
}

impl StochasticFisherEstimate {
    pub fn new(lambda: f64, schedule: LearningRate) -> Self {
        StochasticFisherEstimate {
            estimate: None,
            count: 0,
            lambda,
            schedule,
        }
    }

    /// Continues the recursion from an arbitrary current estimate.
    pub fn resume(estimate: Matrix, count: usize, lambda: f64, schedule: LearningRate) -> Self {
        StochasticFisherEstimate {
            estimate: Some(estimate),
            count,
            lambda,
            schedule,
        }
    }

    pub fn step(&mut self, s: &[f64]) {
        self.count += 1;
        match &mut self.estimate {
            None => {
                let mut m = Matrix::outer(s, s);
                m.add_diag(self.lambda);
                self.estimate = Some(m);
            }
            Some(m) => {
                let gamma = self.schedule.at(self.count);
                m.scale_mut(1.0 - gamma);
                m.rank_one_mut(gamma, s, s);
            }
        }
    }

    pub fn estimate(&self) -> Option<&Matrix> {
        self.estimate.as_ref()
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Multiplicative Robbins–Monro controller for the scalar step size σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeController {
    sigma2: f64,
    rho: f64,
    alpha_star: f64,
    frozen: bool,
}

impl StepSizeController {
    pub fn new(sigma2: f64, rho: f64, alpha_star: f64) -> Result<Self, AdaptError> {
        if !(sigma2 > 0.0) || !(rho > 0.0) || !(0.0..1.0).contains(&alpha_star) {
            return Err(LinalgError::InvalidArgument(format!(
                "need σ² > 0, ρ > 0 and α* in [0, 1); got {sigma2}, {rho}, {alpha_star}"
            ))
            .into());
        }
        if rho * alpha_star >= 1.0 {
            return Err(LinalgError::InvalidArgument(format!(
                "ρ·α* must stay below 1 to keep σ² positive, got {}",
                rho * alpha_star
            ))
            .into());
        }
        Ok(StepSizeController {
            sigma2,
            rho,
            alpha_star,
            frozen: false,
        })
    }

    /// `σ² ← max(σ²[1 + ρ(α − α*)], 1e-8)`; no-op when frozen.
    pub fn update(&mut self, alpha: f64) {
        if self.frozen {
            return;
        }
        let alpha = alpha.clamp(0.0, 1.0);
        self.sigma2 =
            (self.sigma2 * (1.0 + self.rho * (alpha - self.alpha_star))).max(MIN_STEP_SIZE);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn thaw(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    /// `σ² / ((1/d) tr M)` for a preconditioner with the given trace.
    pub fn normalized_for_trace(&self, trace: f64, dim: usize) -> Result<f64, AdaptError> {
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(LinalgError::InvalidArgument(format!(
                "preconditioner trace must be positive, got {trace}"
            ))
            .into());
        }
        Ok(self.sigma2 / (trace / dim as f64))
    }

    /// `σ_R² = σ² / ((1/d) tr(R Rᵀ))`
    pub fn normalized_step(&self, r: &SqrtPreconditioner) -> Result<f64, AdaptError> {
        self.normalized_for_trace(r.trace(), r.dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_signal_examples() {
        assert_eq!(
            fisher_signal(0.0, &[1.0, 2.0], &[5.0, -1.0]),
            vec![0.0, 0.0]
        );
        assert_eq!(fisher_signal(1.0, &[1.0, 2.0], &[3.0, 2.0]), vec![2.0, 0.0]);
        assert_eq!(
            fisher_signal(0.25, &[0.0, 0.0], &[4.0, -8.0]),
            vec![2.0, -4.0]
        );
    }

    #[test]
    fn fisher_adapter_zero_signals_keep_damping() {
        let mut a = FisherAdapter::new(3, 10.0).unwrap();
        for _ in 0..7 {
            a.step(&[0.0; 3]).unwrap();
        }
        let m = a.sqrt().covariance();
        assert!(m.sub(&Matrix::identity(3).scale(0.1)).frobenius_norm() < 1e-15);
        assert_eq!(a.updates(), 7);
    }

    #[test]
    fn fisher_adapter_two_axes() {
        let mut a = FisherAdapter::new(2, 1.0).unwrap();
        a.step(&[1.0, 0.0]).unwrap();
        a.step(&[0.0, 1.0]).unwrap();
        let m = a.sqrt().covariance();
        assert!(m.sub(&Matrix::from_diag(&[0.5, 0.5])).frobenius_norm() < 1e-15);
    }

    #[test]
    fn covariance_adapter_examples() {
        let mut c = CovarianceAdapter::new(2, 3.0).unwrap();
        assert!(matches!(c.covariance(), Err(AdaptError::NotReady(0))));
        c.step(&[1.0, -1.0]).unwrap();
        assert!(matches!(c.covariance(), Err(AdaptError::NotReady(1))));
        c.step(&[1.0, -1.0]).unwrap();
        assert_eq!(c.mean(), &[1.0, -1.0]);
        assert_eq!(c.covariance().unwrap(), &Matrix::identity(2).scale(3.0));

        let mut c = CovarianceAdapter::new(1, 1.0).unwrap();
        c.step(&[0.0]).unwrap();
        c.step(&[2.0]).unwrap();
        assert_eq!(c.mean(), &[1.0]);
        assert_eq!(c.covariance().unwrap()[(0, 0)], 3.0);
    }

    #[test]
    fn stochastic_fisher_examples() {
        let s0 = [1.0, 2.0];
        let s = [0.5, -1.0];
        let mut est = StochasticFisherEstimate::new(2.0, LearningRate::Constant { gamma: 1.0 });
        est.step(&s0);
        est.step(&s);
        assert_eq!(est.estimate().unwrap(), &Matrix::outer(&s, &s));

        let mut est = StochasticFisherEstimate::new(2.0, LearningRate::Harmonic);
        est.step(&s0);
        est.step(&s);
        est.step(&s);
        let prev = est.estimate().unwrap().clone();
        est.step(&[0.0, 0.0]);
        let expected = prev.scale(1.0 - 1.0 / 4.0);
        assert!(est.estimate().unwrap().sub(&expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn step_size_examples() {
        let mut c = StepSizeController::new(0.3, 0.015, TARGET_ACCEPTANCE).unwrap();
        c.update(TARGET_ACCEPTANCE);
        assert_eq!(c.sigma2(), 0.3);

        let mut c = StepSizeController::new(1.0, 0.015, 0.574).unwrap();
        c.update(1.0);
        assert!((c.sigma2() - 1.00639).abs() < 1e-12);

        let mut c = StepSizeController::new(1.0, 0.015, 0.574).unwrap();
        c.update(0.0);
        assert!((c.sigma2() - 0.99139).abs() < 1e-12);

        c.freeze();
        c.update(1.0);
        assert!((c.sigma2() - 0.99139).abs() < 1e-12);
    }

    #[test]
    fn step_size_rejects_bad_parameters() {
        assert!(StepSizeController::new(0.0, 0.015, 0.574).is_err());
        assert!(StepSizeController::new(1.0, -0.1, 0.574).is_err());
        assert!(StepSizeController::new(1.0, 2.0, 0.574).is_err());
    }

    #[test]
    fn normalized_step_examples() {
        let c = StepSizeController::new(0.8, 0.015, 0.574).unwrap();
        let r = SqrtPreconditioner::identity(4);
        assert_eq!(c.normalized_step(&r).unwrap(), 0.8);
        let r = SqrtPreconditioner::from_factor(Matrix::identity(3).scale(2f64.sqrt())).unwrap();
        assert!((c.normalized_step(&r).unwrap() - 0.4).abs() < 1e-15);
        let r = SqrtPreconditioner::from_factor(Matrix::from_diag(&[1.0, 3f64.sqrt()])).unwrap();
        assert!((c.normalized_step(&r).unwrap() - 0.4).abs() < 1e-15);
        assert!(c.normalized_for_trace(0.0, 2).is_err());
    }
}
