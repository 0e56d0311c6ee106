//! Fisher-adaptive Langevin MCMC for Bayesian inverse problems.
//!
//! The sampler adapts a square-root factor `R` of the inverse empirical
//! Fisher information from accepted-weighted score differences, using
//! `O(d²)` rank-one updates, and preconditions a Metropolis-adjusted Langevin
//! proposal with `R Rᵀ`. AdaMALA (empirical-covariance preconditioning),
//! plain MALA and pCN are provided as baselines, together with the heat-source
//! and Neumann coefficient-identification forward models and the usual chain
//! diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod experiments;
pub mod forward;
pub mod linalg;
pub mod persist;
pub mod rng;
pub mod samplers;
pub mod targets;
