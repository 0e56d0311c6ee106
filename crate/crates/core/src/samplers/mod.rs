//! MCMC kernels and the chain driver.
//!
//! The preconditioned Langevin proposal is
//! `y = x + (σ²/2) R Rᵀ ∇log π(x) + σ R η` with `η ~ N(0, I)`; the four
//! samplers differ only in where `R` comes from (identity, the recursive
//! inverse-Fisher factor, or the Cholesky factor of the empirical covariance)
//! and pCN replaces the Langevin move by a prior-reversible autoregression.

mod chain;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Cholesky, SqrtPreconditioner};
use crate::rng;
use crate::targets::{GaussianPrior, Target, TargetError, TargetEval};

pub use chain::{
    run_chain, ChainConfig, ChainError, ChainRecord, ChainState, ChainTiming, Phase, PhaseMarks,
    PrecondSnapshot, SamplerRun,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Langevin proposal preconditioned by the adaptive inverse-Fisher estimate.
    FisherMala,
    /// Langevin proposal preconditioned by the adaptive empirical covariance.
    AdaMala,
    /// Langevin proposal with `M = I`.
    Mala,
    /// Preconditioned Crank–Nicolson.
    Pcn,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::FisherMala,
        SamplerKind::AdaMala,
        SamplerKind::Mala,
        SamplerKind::Pcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::FisherMala => "fishermala",
            SamplerKind::AdaMala => "adamala",
            SamplerKind::Mala => "mala",
            SamplerKind::Pcn => "pcn",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SamplerKind::FisherMala => 0,
            SamplerKind::AdaMala => 1,
            SamplerKind::Mala => 2,
            SamplerKind::Pcn => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                format!("unknown sampler `{s}` (expected fishermala, adamala, mala or pcn)")
            })
    }
}

/// A square-root factor `R` of a proposal preconditioner `M = R Rᵀ`.
pub trait ProposalFactor {
    fn dim(&self) -> usize;

    /// `R v`
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// `Rᵀ v`
    fn apply_t(&self, v: &[f64]) -> Vec<f64>;

    /// `M v`
    fn precondition(&self, v: &[f64]) -> Vec<f64> {
        self.apply(&self.apply_t(v))
    }

    /// `tr(R Rᵀ)`
    fn trace(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityFactor(pub usize);

impl ProposalFactor for IdentityFactor {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    fn trace(&self) -> f64 {
        self.0 as f64
    }
}

impl ProposalFactor for SqrtPreconditioner {
    fn dim(&self) -> usize {
        SqrtPreconditioner::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        SqrtPreconditioner::apply(self, v)
    }

    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        SqrtPreconditioner::apply_t(self, v)
    }

    fn trace(&self) -> f64 {
        SqrtPreconditioner::trace(self)
    }
}

impl ProposalFactor for Cholesky {
    fn dim(&self) -> usize {
        Cholesky::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.mul_lower(v)
    }

    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        self.mul_lower_t(v)
    }

    fn trace(&self) -> f64 {
        let l = self.lower().as_slice();
        dot(l, l)
    }
}

/// Preconditioner factor plus the (already normalized) step size `σ_R²`.
#[derive(Clone, Copy)]
pub struct ProposalParams<'a> {
    pub factor: &'a dyn ProposalFactor,
    pub sigma2: f64,
}

/// `y = x + (σ²/2) R (Rᵀ s) + σ R η` for a given standard normal `η`.
pub fn mala_propose(x: &[f64], score: &[f64], params: ProposalParams<'_>, eta: &[f64]) -> Vec<f64> {
    let drift = params.factor.precondition(score);
    let noise = params.factor.apply(eta);
    let sigma = params.sigma2.sqrt();
    x.iter()
        .zip(drift.iter().zip(&noise))
        .map(|(xi, (di, ni))| xi + 0.5 * params.sigma2 * di + sigma * ni)
        .collect()
}

/// Same proposal with `η` drawn from `rng`.
pub fn mala_propose_with<R: Rng + ?Sized>(
    state: &ChainState,
    params: ProposalParams<'_>,
    rng: &mut R,
) -> Vec<f64> {
    let eta = rng::standard_normal_vec(rng, state.eval.x.len());
    mala_propose(&state.eval.x, &state.eval.score, params, &eta)
}

/// `h(u, v) = ½ (u − v − (σ²/4) M ∇log π(v))ᵀ ∇log π(v)`, given `M ∇log π(v)`.
pub fn mala_h(u: &[f64], v: &[f64], score_v: &[f64], m_score_v: &[f64], sigma2: f64) -> f64 {
    0.5 * u
        .iter()
        .zip(v)
        .zip(score_v.iter().zip(m_score_v))
        .map(|((ui, vi), (si, msi))| (ui - vi - 0.25 * sigma2 * msi) * si)
        .sum::<f64>()
}

/// `log π(y) + h(x, y) − log π(x) − h(y, x)`.
pub fn mala_log_ratio(
    current: &TargetEval,
    proposal: &TargetEval,
    params: ProposalParams<'_>,
) -> f64 {
    let m_sx = params.factor.precondition(&current.score);
    let m_sy = params.factor.precondition(&proposal.score);
    let h_xy = mala_h(
        &current.x,
        &proposal.x,
        &proposal.score,
        &m_sy,
        params.sigma2,
    );
    let h_yx = mala_h(
        &proposal.x,
        &current.x,
        &current.score,
        &m_sx,
        params.sigma2,
    );
    proposal.log_density + h_xy - current.log_density - h_yx
}

/// Metropolis acceptance probability; anything non-finite counts as zero.
pub fn mala_accept_prob(
    current: &TargetEval,
    proposal: &TargetEval,
    params: ProposalParams<'_>,
) -> f64 {
    if !proposal.is_finite() {
        return 0.0;
    }
    accept_from_log_ratio(mala_log_ratio(current, proposal, params))
}

pub(crate) fn accept_from_log_ratio(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

#[derive(Debug, Clone)]
pub struct PcnParams {
    pub beta: f64,
    pub prior: GaussianPrior,
}

impl PcnParams {
    pub fn new(beta: f64, prior: GaussianPrior) -> Result<Self, String> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(format!("pCN step β must lie in (0, 1), got {beta}"));
        }
        Ok(PcnParams { beta, prior })
    }
}

/// `m + √(1 − β²)(x − m) + β L η` with `L Lᵀ = C`.
pub fn pcn_propose(x: &[f64], beta: f64, prior: &GaussianPrior, eta: &[f64]) -> Vec<f64> {
    let keep = (1.0 - beta * beta).sqrt();
    let kick = prior.colour(eta);
    x.iter()
        .zip(prior.mean())
        .zip(&kick)
        .map(|((xi, m), k)| m + keep * (xi - m) + beta * k)
        .collect()
}

/// `min(1, exp(Φ(x) − Φ(y)))`.
pub fn pcn_accept_prob(potential_x: f64, potential_y: f64) -> f64 {
    if potential_y == f64::INFINITY {
        return 0.0;
    }
    accept_from_log_ratio(potential_x - potential_y)
}

/// Current pCN position and its potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PcnState {
    pub x: Vec<f64>,
    pub potential: f64,
}

/// One pCN transition. Returns `(accepted, acceptance probability)`.
pub fn pcn_step<R: Rng + ?Sized>(
    state: &mut PcnState,
    params: &PcnParams,
    potential: &dyn Fn(&[f64]) -> Result<f64, TargetError>,
    rng: &mut R,
) -> Result<(bool, f64), TargetError> {
    let eta = rng::standard_normal_vec(rng, state.x.len());
    let y = pcn_propose(&state.x, params.beta, &params.prior, &eta);
    let phi_y = potential(&y)?;
    let alpha = pcn_accept_prob(state.potential, phi_y);
    let accepted = rng::uniform(rng) < alpha;
    if accepted {
        state.x = y;
        state.potential = phi_y;
    }
    Ok((accepted, alpha))
}

/// Convenience wrapper using a [`Target`]'s own potential.
pub fn pcn_step_target<R: Rng + ?Sized>(
    state: &mut PcnState,
    params: &PcnParams,
    target: &dyn Target,
    rng: &mut R,
) -> Result<(bool, f64), TargetError> {
    pcn_step(state, params, &|x| target.potential(x), rng)
}
