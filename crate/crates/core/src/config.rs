//! TOML experiment configuration.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapt::LearningRate;
use crate::forward::TimeScheme;
use crate::samplers::{ChainConfig, SamplerKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_owned(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    HeatSource,
    NeumannId,
    GaussianRate,
    GaussianSanity,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::HeatSource => "heat-source",
            ExperimentId::NeumannId => "neumann-id",
            ExperimentId::GaussianRate => "gaussian-rate",
            ExperimentId::GaussianSanity => "gaussian-sanity",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// `N(0, variance · I)`
    Isotropic { variance: f64 },
    /// `N(0, C)` with `C_ij = γ exp(−(xᵢ − xⱼ)² / (2l²))`.
    SquaredExponential { gamma: f64, length: f64 },
}

impl PriorSpec {
    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        match *self {
            PriorSpec::Isotropic { variance } if !(variance > 0.0) => Err(invalid(
                &format!("{field}.variance"),
                format!("must be positive, got {variance}"),
            )),
            PriorSpec::SquaredExponential { gamma, length } if !(gamma > 0.0 && length > 0.0) => {
                Err(invalid(
                    field,
                    format!("γ and l must be positive, got {gamma} and {length}"),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatConfig {
    /// Interior nodes of the inversion grid (the parameter dimension).
    pub nodes: usize,
    pub time_steps: usize,
    pub final_time: f64,
    pub noise: f64,
    /// Data grid has this many times as many cells as the inversion grid.
    pub data_refinement: usize,
    pub scheme: TimeScheme,
    /// Prior used by pCN.
    pub pcn_prior: PriorSpec,
    /// Prior used by the Langevin samplers.
    pub langevin_prior: PriorSpec,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            nodes: 100,
            time_steps: 100,
            final_time: 1.0,
            noise: 0.01,
            data_refinement: 2,
            scheme: TimeScheme::Bdf2,
            pcn_prior: PriorSpec::SquaredExponential {
                gamma: 0.2,
                length: 0.03,
            },
            langevin_prior: PriorSpec::Isotropic { variance: 1.5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeumannConfig {
    pub intervals: usize,
    pub noise: f64,
    pub theta_true: Vec<f64>,
    pub data_refinement: usize,
    pub prior: PriorSpec,
    /// Relative perturbation for the finite-difference Jacobian.
    pub fd_step: f64,
}

impl Default for NeumannConfig {
    fn default() -> Self {
        NeumannConfig {
            intervals: 100,
            noise: 0.01,
            theta_true: vec![2.0, 1.0, 1.0],
            data_refinement: 2,
            prior: PriorSpec::Isotropic { variance: 0.1 },
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianConfig {
    pub dim: usize,
    /// Explicit marginal variances; overrides `condition`.
    pub variances: Option<Vec<f64>>,
    /// Variances log-spaced from 1 to this value.
    pub condition: f64,
    /// Correlation `c^|i−j|` between coordinates.
    pub correlation: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            dim: 10,
            variances: None,
            condition: 10.0,
            correlation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub n_max: usize,
    pub lambda: f64,
    pub schedule: LearningRate,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            n_max: 10_000,
            lambda: 10.0,
            schedule: LearningRate::Harmonic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub lag: usize,
    /// Points on the ESS-versus-time curve.
    pub ess_time_points: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            lag: 500,
            ess_time_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    /// Concurrent chains (0 = one per core).
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub heat: HeatConfig,
    #[serde(default)]
    pub neumann: NeumannConfig,
    #[serde(default)]
    pub gaussian: GaussianConfig,
    #[serde(default)]
    pub rate: RateConfig,
}

fn default_samplers() -> Vec<SamplerKind> {
    vec![
        SamplerKind::Pcn,
        SamplerKind::AdaMala,
        SamplerKind::FisherMala,
    ]
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        ExperimentConfig {
            experiment,
            samplers: default_samplers(),
            seed: 0,
            replicates: 1,
            workers: 0,
            chain: ChainConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            heat: HeatConfig::default(),
            neumann: NeumannConfig::default(),
            gaussian: GaussianConfig::default(),
            rate: RateConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Seed of replicate `replicate` of `sampler`.
    pub fn chain_seed(&self, sampler: SamplerKind, replicate: usize) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add(1000 * replicate as u64 + 1 + sampler.code() as u64)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        let langevin = matches!(self.experiment, ExperimentId::GaussianRate);
        if !langevin && self.samplers.is_empty() {
            return Err(invalid("samplers", "list at least one sampler"));
        }
        if self.experiment != ExperimentId::GaussianRate {
            for &kind in &self.samplers {
                self.chain
                    .validate(kind)
                    .map_err(|e| invalid("chain", e.to_string()))?;
            }
            if self.diagnostics.lag == 0 {
                return Err(invalid("diagnostics.lag", "must be at least 1"));
            }
            if self.diagnostics.lag >= self.chain.collection {
                return Err(invalid(
                    "diagnostics.lag",
                    format!(
                        "must be shorter than the collection phase ({})",
                        self.chain.collection
                    ),
                ));
            }
        }
        if self.chain.initial_sigma2.is_some_and(|s| s < 1e-7) {
            eprintln!("warning: initial σ² below 1e-7 tends to stall the chain");
        }
        match self.experiment {
            ExperimentId::HeatSource => {
                let h = &self.heat;
                if h.nodes < 2 || h.time_steps < 2 {
                    return Err(invalid("heat", "nodes and time_steps must be at least 2"));
                }
                if !(h.final_time > 0.0) {
                    return Err(invalid("heat.final_time", "must be positive"));
                }
                if !(h.noise > 0.0) {
                    return Err(invalid("heat.noise", "must be positive"));
                }
                if h.data_refinement < 2 {
                    return Err(invalid(
                        "heat.data_refinement",
                        "data must come from a strictly finer grid than the inversion grid",
                    ));
                }
                h.pcn_prior.validate("heat.pcn_prior")?;
                h.langevin_prior.validate("heat.langevin_prior")?;
            }
            ExperimentId::NeumannId => {
                let n = &self.neumann;
                if n.intervals < 4 {
                    return Err(invalid("neumann.intervals", "must be at least 4"));
                }
                if !(n.noise > 0.0) {
                    return Err(invalid("neumann.noise", "must be positive"));
                }
                if n.data_refinement < 2 {
                    return Err(invalid(
                        "neumann.data_refinement",
                        "data must come from a strictly finer grid than the inversion grid",
                    ));
                }
                if n.theta_true.is_empty() || n.theta_true.len().is_multiple_of(2) {
                    return Err(invalid(
                        "neumann.theta_true",
                        "needs a constant term plus sine/cosine pairs (odd length)",
                    ));
                }
                if !(n.fd_step > 0.0) {
                    return Err(invalid("neumann.fd_step", "must be positive"));
                }
                n.prior.validate("neumann.prior")?;
                if matches!(n.prior, PriorSpec::SquaredExponential { .. }) {
                    return Err(invalid(
                        "neumann.prior",
                        "only isotropic priors apply to coefficients",
                    ));
                }
            }
            ExperimentId::GaussianRate | ExperimentId::GaussianSanity => {
                let g = &self.gaussian;
                if g.dim == 0 {
                    return Err(invalid("gaussian.dim", "must be positive"));
                }
                if let Some(v) = &g.variances {
                    if v.len() != g.dim || v.iter().any(|x| !(*x > 0.0)) {
                        return Err(invalid("gaussian.variances", "need `dim` positive entries"));
                    }
                }
                if !(g.condition >= 1.0) {
                    return Err(invalid("gaussian.condition", "must be at least 1"));
                }
                if !(g.correlation > -1.0 && g.correlation < 1.0) {
                    return Err(invalid("gaussian.correlation", "must lie in (−1, 1)"));
                }
                if self.experiment == ExperimentId::GaussianRate {
                    if self.replicates < 50 {
                        return Err(invalid(
                            "replicates",
                            "the rate experiment needs at least 50",
                        ));
                    }
                    if self.rate.n_max < 2 {
                        return Err(invalid("rate.n_max", "must be at least 2"));
                    }
                    if !(self.rate.lambda >= 0.0) {
                        return Err(invalid("rate.lambda", "must be non-negative"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml_str("experiment = \"heat-source\"\n").unwrap();
        assert_eq!(c.heat.nodes, 100);
        assert_eq!(c.samplers.len(), 3);
        assert_eq!(c.chain.lambda, 10.0);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("experiment = \"heat-source\"\nbogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
        let err = ExperimentConfig::from_toml_str(
            "experiment = \"heat-source\"\n[heat]\ndata_refinement = 1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("heat.data_refinement"), "{err}");
    }

    #[test]
    fn round_trip_and_hash_are_stable() {
        let mut c = ExperimentConfig::new(ExperimentId::NeumannId);
        c.chain.pcn_beta = 0.055;
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.seed = 1;
        assert_ne!(back.hash(), c.hash());
    }

    #[test]
    fn chain_seeds_are_distinct() {
        let c = ExperimentConfig::new(ExperimentId::HeatSource);
        let mut seen = std::collections::HashSet::new();
        for r in 0..10 {
            for k in SamplerKind::ALL {
                assert!(seen.insert(c.chain_seed(k, r)));
            }
        }
    }
}
