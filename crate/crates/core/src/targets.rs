//! Log-posterior assembly for Bayesian inversion.
//!
//! Targets are products of a Gaussian reference prior `N(m, C)` and a
//! likelihood `exp(−Φ(x))`. Log densities are tracked up to an additive
//! constant since only differences enter acceptance ratios.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{ForwardError, ForwardModel};
use crate::linalg::{self, all_finite, dot, Cholesky, LinalgError, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

pub type Result<T> = std::result::Result<T, TargetError>;

fn check(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(TargetError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// A point bundled with its log-density and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEval {
    pub x: Vec<f64>,
    pub log_density: f64,
    pub score: Vec<f64>,
}

impl TargetEval {
    /// Evaluation at a point outside the target's support.
    pub fn outside_support(x: Vec<f64>) -> Self {
        let d = x.len();
        TargetEval {
            x,
            log_density: f64::NEG_INFINITY,
            score: vec![0.0; d],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite() && all_finite(&self.score) && all_finite(&self.x)
    }
}

/// Everything a sampler needs from a target.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density (unnormalized) and score at `x`.
    fn evaluate(&self, x: &[f64]) -> Result<TargetEval>;

    /// Gaussian reference measure: initial draws and pCN proposals.
    fn prior(&self) -> &GaussianPrior;

    /// `−log π(x) + log π₀(x)` up to a constant, π₀ = [`Target::prior`].
    fn potential(&self, x: &[f64]) -> Result<f64>;

    /// Hard support constraints checked on initial draws.
    fn is_admissible(&self, _x: &[f64]) -> bool {
        true
    }
}

/// `N(mean, covariance)` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    covariance: Matrix,
    chol: Cholesky,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        check("prior mean", covariance.rows(), mean.len())?;
        let chol = Cholesky::factor(&covariance)?;
        Ok(GaussianPrior {
            mean,
            covariance,
            chol,
        })
    }

    /// `N(0, variance · I)`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(LinalgError::InvalidArgument(format!(
                "prior variance must be positive, got {variance}"
            ))
            .into());
        }
        Self::new(vec![0.0; dim], Matrix::identity(dim).scale(variance))
    }

    /// Zero-mean prior with `c(x₁, x₂) = γ exp(−½((x₁ − x₂)/l)²)` on `grid`,
    /// plus `1e-10·γ` on the diagonal.
    pub fn squared_exponential(grid: &[f64], gamma: f64, length: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(length > 0.0) {
            return Err(LinalgError::InvalidArgument(format!(
                "kernel parameters must be positive, got gamma = {gamma}, length = {length}"
            ))
            .into());
        }
        let n = grid.len();
        let mut c = Matrix::from_fn(n, n, |i, j| {
            let r = (grid[i] - grid[j]) / length;
            gamma * (-0.5 * r * r).exp()
        });
        c.add_diag(1e-10 * gamma);
        Self::new(vec![0.0; n], c)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn factor(&self) -> &Cholesky {
        &self.chol
    }

    /// `C⁻¹ (x − m)`
    pub fn precision_apply(&self, x: &[f64]) -> Vec<f64> {
        self.chol.solve(&linalg::sub(x, &self.mean))
    }

    /// `−½ (x − m)ᵀ C⁻¹ (x − m)`
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let z = self.chol.solve_lower(&linalg::sub(x, &self.mean));
        -0.5 * dot(&z, &z)
    }

    /// `m + L η`, η ~ N(0, I).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eta = rng::standard_normal_vec(rng, self.dim());
        let mut x = self.chol.mul_lower(&eta);
        x.iter_mut().zip(&self.mean).for_each(|(xi, m)| *xi += m);
        x
    }

    /// `L η` for a given standard normal vector.
    pub fn colour(&self, eta: &[f64]) -> Vec<f64> {
        self.chol.mul_lower(eta)
    }
}

#[derive(Debug, Clone)]
enum NoiseCovariance {
    Isotropic(f64),
    Dense(Matrix, Cholesky),
}

/// Additive observation noise `N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianNoiseModel {
    dim: usize,
    cov: NoiseCovariance,
}

impl GaussianNoiseModel {
    /// `Σ = ε² I`.
    pub fn isotropic(dim: usize, noise_level: f64) -> Result<Self> {
        if !(noise_level > 0.0) || !noise_level.is_finite() {
            return Err(LinalgError::InvalidArgument(format!(
                "noise level must be positive, got {noise_level}"
            ))
            .into());
        }
        Ok(GaussianNoiseModel {
            dim,
            cov: NoiseCovariance::Isotropic(noise_level * noise_level),
        })
    }

    pub fn new(covariance: Matrix) -> Result<Self> {
        let chol = Cholesky::factor(&covariance)?;
        Ok(GaussianNoiseModel {
            dim: covariance.rows(),
            cov: NoiseCovariance::Dense(covariance, chol),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Σ⁻¹ r`
    pub fn whiten_apply(&self, r: &[f64]) -> Vec<f64> {
        match &self.cov {
            NoiseCovariance::Isotropic(var) => r.iter().map(|v| v / var).collect(),
            NoiseCovariance::Dense(_, chol) => chol.solve(r),
        }
    }

    pub fn covariance(&self) -> Matrix {
        match &self.cov {
            NoiseCovariance::Isotropic(var) => Matrix::identity(self.dim).scale(*var),
            NoiseCovariance::Dense(c, _) => c.clone(),
        }
    }

    pub fn precision(&self) -> Matrix {
        match &self.cov {
            NoiseCovariance::Isotropic(var) => Matrix::identity(self.dim).scale(1.0 / var),
            NoiseCovariance::Dense(_, chol) => chol.inverse(),
        }
    }
}

/// `π(x | y) ∝ exp(−Φ(x)) N(x; m, C)` for `y = F(x) + η`, `η ~ N(0, Σ)`.
#[derive(Clone)]
pub struct Posterior {
    prior: GaussianPrior,
    noise: GaussianNoiseModel,
    forward: Arc<dyn ForwardModel>,
    data: Vec<f64>,
}

impl std::fmt::Debug for Posterior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Posterior")
            .field("dim", &self.prior.dim())
            .field("observations", &self.data.len())
            .finish()
    }
}

impl Posterior {
    pub fn new(
        prior: GaussianPrior,
        noise: GaussianNoiseModel,
        forward: Arc<dyn ForwardModel>,
        data: Vec<f64>,
    ) -> Result<Self> {
        check("forward input", prior.dim(), forward.input_dim())?;
        check("forward output", forward.output_dim(), data.len())?;
        check("noise covariance", data.len(), noise.dim())?;
        Ok(Posterior {
            prior,
            noise,
            forward,
            data,
        })
    }

    pub fn forward(&self) -> &Arc<dyn ForwardModel> {
        &self.forward
    }

    pub fn noise(&self) -> &GaussianNoiseModel {
        &self.noise
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn misfit(&self, residual: &[f64]) -> f64 {
        0.5 * dot(residual, &self.noise.whiten_apply(residual))
    }

    /// Data-fidelity term `Φ(x) = ½ (F(x) − y)ᵀ Σ⁻¹ (F(x) − y)`.
    pub fn data_misfit(&self, x: &[f64]) -> Result<f64> {
        check("state", self.prior.dim(), x.len())?;
        let fx = self.forward.evaluate(x)?;
        Ok(self.misfit(&linalg::sub(&fx, &self.data)))
    }

    /// `∇Φ(x) = J(x)ᵀ Σ⁻¹ (F(x) − y)`
    pub fn misfit_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (residual, jt_w) = match self.forward.constant_jacobian() {
            Some(jac) => {
                let r = linalg::sub(&self.forward.evaluate(x)?, &self.data);
                let w = self.noise.whiten_apply(&r);
                (r, jac.matvec_t(&w))
            }
            None => {
                let (fx, jac) = self.forward.evaluate_with_jacobian(x)?;
                let r = linalg::sub(&fx, &self.data);
                let w = self.noise.whiten_apply(&r);
                (r, jac.matvec_t(&w))
            }
        };
        Ok((self.misfit(&residual), jt_w))
    }

    /// Log-posterior and score; domain errors in the forward map give `−∞`.
    pub fn log_posterior_eval(&self, x: &[f64]) -> Result<TargetEval> {
        check("state", self.prior.dim(), x.len())?;
        if !self.forward.is_admissible(x) {
            return Ok(TargetEval::outside_support(x.to_vec()));
        }
        let (phi, grad_phi) = match self.misfit_gradient(x) {
            Ok(v) => v,
            Err(TargetError::Forward(e)) if is_domain(&e) => {
                return Ok(TargetEval::outside_support(x.to_vec()))
            }
            Err(e) => return Err(e),
        };
        let prec = self.prior.precision_apply(x);
        let centred = linalg::sub(x, self.prior.mean());
        let log_density = -phi - 0.5 * dot(&centred, &prec);
        let score = prec.iter().zip(&grad_phi).map(|(p, g)| -p - g).collect();
        Ok(TargetEval {
            x: x.to_vec(),
            log_density,
            score,
        })
    }
}

fn is_domain(e: &ForwardError) -> bool {
    match e {
        ForwardError::Domain(_) => true,
        ForwardError::Jacobian { source, .. } => is_domain(source),
        _ => false,
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<TargetEval> {
        self.log_posterior_eval(x)
    }

    fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        if !self.forward.is_admissible(x) {
            return Ok(f64::INFINITY);
        }
        match self.data_misfit(x) {
            Err(TargetError::Forward(e)) if is_domain(&e) => Ok(f64::INFINITY),
            other => other,
        }
    }

    fn is_admissible(&self, x: &[f64]) -> bool {
        self.forward.is_admissible(x)
    }
}

/// Closed-form posterior `N(μ_post, C_post)` of a linear-Gaussian model.
#[derive(Debug, Clone)]
pub struct LinearGaussianPosterior {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    chol: Cholesky,
}

impl LinearGaussianPosterior {
    /// `−½ (x − μ)ᵀ C_post⁻¹ (x − μ)`
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let z = self.chol.solve_lower(&linalg::sub(x, &self.mean));
        -0.5 * dot(&z, &z)
    }
}

/// `C_post = (C⁻¹ + FᵀΣ⁻¹F)⁻¹`, `μ_post = C_post (FᵀΣ⁻¹y + C⁻¹m)`.
pub fn linear_posterior_moments(
    forward: &Matrix,
    prior: &GaussianPrior,
    noise: &GaussianNoiseModel,
    y: &[f64],
) -> Result<LinearGaussianPosterior> {
    check("operator columns", prior.dim(), forward.cols())?;
    check("operator rows", y.len(), forward.rows())?;
    check("noise", y.len(), noise.dim())?;
    let d = prior.dim();
    let mut precision = prior.factor().inverse();
    let noise_prec = noise.precision();
    let weighted = noise_prec.matmul(forward);
    precision = precision.add(&forward.transpose().matmul(&weighted));
    precision.symmetrize();
    let prec_chol = Cholesky::factor(&precision)?;
    let covariance = prec_chol.inverse();
    let mut rhs = forward.matvec_t(&noise.whiten_apply(y));
    let prior_term = prior.precision_apply(&vec![0.0; d]);
    // precision_apply(0) = −C⁻¹m
    rhs.iter_mut().zip(&prior_term).for_each(|(r, p)| *r -= p);
    let mean = prec_chol.solve(&rhs);
    let chol = Cholesky::factor(&covariance)?;
    Ok(LinearGaussianPosterior {
        mean,
        covariance,
        chol,
    })
}

/// Synthetic `N(mean, Σ)` target with exact sampling.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    covariance: Matrix,
    chol: Cholesky,
    reference: GaussianPrior,
}

/// `N(mean, covariance)` with the isotropic reference `N(0, max Σᵢᵢ · I)`.
pub fn gaussian_score_target(mean: Vec<f64>, covariance: Matrix) -> Result<GaussianTarget> {
    check("target mean", covariance.rows(), mean.len())?;
    let chol = Cholesky::factor(&covariance)?;
    let scale = covariance.diag().into_iter().fold(0.0, f64::max);
    let reference = GaussianPrior::isotropic(mean.len(), scale)?;
    Ok(GaussianTarget {
        mean,
        covariance,
        chol,
        reference,
    })
}

impl GaussianTarget {
    pub fn with_reference(mut self, reference: GaussianPrior) -> Result<Self> {
        check("reference prior", self.mean.len(), reference.dim())?;
        self.reference = reference;
        Ok(self)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Fisher information `E[s sᵀ] = Σ⁻¹`.
    pub fn fisher(&self) -> Matrix {
        self.chol.inverse()
    }

    /// `s(x) = −Σ⁻¹ (x − m)`
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&linalg::sub(x, &self.mean))
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let z = self.chol.solve_lower(&linalg::sub(x, &self.mean));
        -0.5 * dot(&z, &z)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eta = rng::standard_normal_vec(rng, self.mean.len());
        let mut x = self.chol.mul_lower(&eta);
        x.iter_mut().zip(&self.mean).for_each(|(xi, m)| *xi += m);
        x
    }

    /// Score of an exact draw, `−Lᵀ⁻¹ η`, for the Fisher-rate experiment.
    pub fn sample_score<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eta = rng::standard_normal_vec(rng, self.mean.len());
        self.chol
            .solve_lower_t(&eta)
            .into_iter()
            .map(|v| -v)
            .collect()
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<TargetEval> {
        check("state", self.mean.len(), x.len())?;
        Ok(TargetEval {
            x: x.to_vec(),
            log_density: self.log_density(x),
            score: self.score(x),
        })
    }

    fn prior(&self) -> &GaussianPrior {
        &self.reference
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        check("state", self.mean.len(), x.len())?;
        Ok(-self.log_density(x) + self.reference.log_density(x))
    }
}
