//! Problem assembly and experiment execution.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ExperimentId, GaussianConfig, PriorSpec};
use crate::diagnostics::{
    self, ConvergencePoint, DiagnosticsError, EssReport, Interval, RateCurve,
};
use crate::forward::{
    heat_synthesize, neumann_synthesize, ForwardError, ForwardModel, HeatSolver,
    HeatSourceOperator, NeumannBvpModel, SyntheticDataset,
};
use crate::linalg::Matrix;
use crate::persist::{self, PersistError, Versioned};
use crate::samplers::{run_chain, ChainError, SamplerKind, SamplerRun};
use crate::targets::{
    gaussian_score_target, linear_posterior_moments, GaussianNoiseModel, GaussianPrior,
    GaussianTarget, Posterior, Target, TargetError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("forward model: {0}")]
    Forward(#[from] ForwardError),
    #[error("target: {0}")]
    Target(#[from] TargetError),
    #[error("{sampler} replicate {replicate}: {source}")]
    Chain {
        sampler: SamplerKind,
        replicate: usize,
        #[source]
        source: ChainError,
    },
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{0}")]
    Other(String),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// The true heat source `2π² sin(πx)`.
pub fn heat_truth(x: f64) -> f64 {
    2.0 * PI * PI * (PI * x).sin()
}

/// `N(0, Σ)` with `Σ = D^{1/2} K D^{1/2}`, `K_ij = c^|i−j|`.
pub fn gaussian_covariance(cfg: &GaussianConfig) -> Matrix {
    let d = cfg.dim;
    let variances = cfg.variances.clone().unwrap_or_else(|| {
        (0..d)
            .map(|i| {
                if d == 1 {
                    1.0
                } else {
                    cfg.condition.powf(i as f64 / (d - 1) as f64)
                }
            })
            .collect()
    });
    Matrix::from_fn(d, d, |i, j| {
        let k = if i == j {
            1.0
        } else {
            cfg.correlation.powi((i as i32 - j as i32).abs())
        };
        k * (variances[i] * variances[j]).sqrt()
    })
}

fn build_prior(spec: &PriorSpec, grid: &[f64]) -> Result<GaussianPrior, TargetError> {
    match *spec {
        PriorSpec::Isotropic { variance } => GaussianPrior::isotropic(grid.len(), variance),
        PriorSpec::SquaredExponential { gamma, length } => {
            GaussianPrior::squared_exponential(grid, gamma, length)
        }
    }
}

/// A fully assembled experiment: data, per-sampler targets and references.
pub struct Problem {
    pub id: ExperimentId,
    pub dataset: Option<SyntheticDataset>,
    /// Parameter the reconstruction error is measured against.
    pub truth: Option<Vec<f64>>,
    /// Reference covariance for preconditioner convergence (`C_post` or `Σ`).
    pub reference_covariance: Option<Matrix>,
    /// Exact target mean when known in closed form.
    pub reference_mean: Option<Vec<f64>>,
    targets: BTreeMap<SamplerKind, Arc<dyn Target>>,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        match cfg.experiment {
            ExperimentId::HeatSource => Self::heat(cfg),
            ExperimentId::NeumannId => Self::neumann(cfg),
            ExperimentId::GaussianSanity | ExperimentId::GaussianRate => Self::gaussian(cfg),
        }
    }

    pub fn target(&self, kind: SamplerKind) -> Arc<dyn Target> {
        self.targets[&kind].clone()
    }

    fn heat(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let h = &cfg.heat;
        let solver = HeatSolver::new(h.nodes, h.time_steps, h.final_time, h.scheme)?;
        let fine_nodes = h.data_refinement * (h.nodes + 1) - 1;
        let fine = HeatSolver::new(fine_nodes, h.time_steps, h.final_time, h.scheme)?;
        let dataset = heat_synthesize(&fine, h.nodes, &heat_truth, h.noise, cfg.seed)?;
        let op = Arc::new(HeatSourceOperator::assemble_with(solver)?);
        let grid = op.grid();
        let noise = GaussianNoiseModel::isotropic(h.nodes, h.noise)?;
        let pcn_prior = build_prior(&h.pcn_prior, &grid)?;
        let langevin_prior = build_prior(&h.langevin_prior, &grid)?;
        let forward: Arc<dyn ForwardModel> = op.clone();
        let mut targets: BTreeMap<SamplerKind, Arc<dyn Target>> = BTreeMap::new();
        for kind in SamplerKind::ALL {
            let prior = if kind == SamplerKind::Pcn {
                &pcn_prior
            } else {
                &langevin_prior
            };
            let post = Posterior::new(
                prior.clone(),
                noise.clone(),
                forward.clone(),
                dataset.y.clone(),
            )?;
            targets.insert(kind, Arc::new(post));
        }
        // y − g is linear in the source
        let shifted: Vec<f64> = dataset
            .y
            .iter()
            .zip(op.init_contrib())
            .map(|(y, g)| y - g)
            .collect();
        let post = linear_posterior_moments(op.matrix(), &langevin_prior, &noise, &shifted)?;
        Ok(Problem {
            id: ExperimentId::HeatSource,
            truth: Some(dataset.truth.clone()),
            dataset: Some(dataset),
            reference_covariance: Some(post.covariance),
            reference_mean: Some(post.mean),
            targets,
        })
    }

    fn neumann(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let n = &cfg.neumann;
        let model =
            NeumannBvpModel::manufactured(n.intervals, &n.theta_true)?.with_fd_step(n.fd_step);
        let dataset = neumann_synthesize(
            n.intervals,
            n.data_refinement,
            &n.theta_true,
            n.noise,
            cfg.seed,
        )?;
        let dim = n.theta_true.len();
        let prior = build_prior(&n.prior, &vec![0.0; dim])?;
        let noise = GaussianNoiseModel::isotropic(dataset.y.len(), n.noise)?;
        let post: Arc<dyn Target> = Arc::new(Posterior::new(
            prior,
            noise,
            Arc::new(model),
            dataset.y.clone(),
        )?);
        let targets = SamplerKind::ALL
            .into_iter()
            .map(|k| (k, post.clone()))
            .collect();
        Ok(Problem {
            id: ExperimentId::NeumannId,
            truth: Some(n.theta_true.clone()),
            dataset: Some(dataset),
            reference_covariance: None,
            reference_mean: None,
            targets,
        })
    }

    fn gaussian(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let target = gaussian_target(&cfg.gaussian)?;
        let t: Arc<dyn Target> = Arc::new(target.clone());
        Ok(Problem {
            id: cfg.experiment,
            dataset: None,
            truth: None,
            reference_covariance: Some(target.covariance().clone()),
            reference_mean: Some(target.mean().to_vec()),
            targets: SamplerKind::ALL
                .into_iter()
                .map(|k| (k, t.clone()))
                .collect(),
        })
    }
}

pub fn gaussian_target(cfg: &GaussianConfig) -> Result<GaussianTarget, TargetError> {
    gaussian_score_target(vec![0.0; cfg.dim], gaussian_covariance(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sampler: SamplerKind,
    pub replicate: usize,
    pub seed: u64,
    pub chain_file: Option<String>,
    /// `‖x̂ − x‖/‖x‖ × 100` of the posterior mean, when a truth exists.
    pub rel_error_pct: Option<f64>,
    pub ess_monolithic: f64,
    pub ess_min: f64,
    pub ess_median: f64,
    pub ess_per_sample: f64,
    pub acceptance_rate: f64,
    pub esjd: f64,
    pub wall_seconds: f64,
    pub final_sigma2: f64,
    pub nonfinite_rejections: u64,
    pub posterior_mean: Vec<f64>,
    pub credible_95: Vec<Interval>,
    /// Relative Frobenius error of the sample covariance, when the target covariance is known.
    pub cov_rel_error: Option<f64>,
    pub precond_convergence: Vec<ConvergencePoint>,
}

/// Summary statistics of one finished chain.
pub fn summarize(
    problem: &Problem,
    run: &SamplerRun,
    replicate: usize,
    lag: usize,
) -> Result<RunSummary, ExperimentError> {
    let rec = &run.record;
    let samples = rec.collection_matrix();
    let mean = diagnostics::sample_mean(&samples);
    let ess = match diagnostics::ess(&samples, lag) {
        Ok(r) => r,
        // a coordinate that never moved during collection
        Err(DiagnosticsError::ZeroVarianceDim(_)) => EssReport {
            samples: samples.rows(),
            lag,
            iat: vec![f64::INFINITY; rec.dim],
            ess: vec![0.0; rec.dim],
            monolithic: 0.0,
        },
        Err(e) => return Err(e.into()),
    };
    let rel_error_pct = match &problem.truth {
        Some(t) => Some(diagnostics::relative_error(&mean, t)?),
        None => None,
    };
    let cov_rel_error = match (&problem.reference_covariance, problem.id) {
        (Some(c), ExperimentId::GaussianSanity) => {
            let s = diagnostics::sample_covariance(&samples);
            Some(s.sub(c).frobenius_norm() / c.frobenius_norm())
        }
        _ => None,
    };
    let precond_convergence = match &problem.reference_covariance {
        Some(c) if !run.snapshots.is_empty() => {
            diagnostics::precond_convergence(&run.snapshots, c)?
        }
        _ => Vec::new(),
    };
    Ok(RunSummary {
        sampler: rec.sampler,
        replicate,
        seed: rec.seed,
        chain_file: None,
        rel_error_pct,
        ess_monolithic: ess.monolithic,
        ess_min: ess.min(),
        ess_median: ess.median(),
        ess_per_sample: ess.monolithic / ess.samples as f64,
        acceptance_rate: rec.collection_acceptance_rate(),
        esjd: diagnostics::esjd(rec)?,
        wall_seconds: run.timing.seconds.last().copied().unwrap_or(0.0),
        final_sigma2: rec.step_sizes.last().copied().unwrap_or(f64::NAN),
        nonfinite_rejections: rec.nonfinite_rejections,
        posterior_mean: mean,
        credible_95: diagnostics::credible_intervals(&samples, 0.95)?,
        cov_rel_error,
        precond_convergence,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dataset_file: Option<String>,
    pub runs: Vec<RunSummary>,
}

pub const ARTIFACT_FORMAT: &str = "fisher-mala-artifact";
pub const DATASET_FORMAT: &str = "fisher-mala-dataset";
pub const RATE_FORMAT: &str = "fisher-mala-rate";

/// Output directory `<root>/<experiment>-<hash prefix>`.
pub fn output_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("{}-{}", cfg.experiment, &cfg.hash()[..12]))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Other(format!("cannot start worker pool: {e}")))
}

/// Runs every (sampler, replicate) chain of a sampling experiment.
///
/// With `out` set, each chain is written to `<out>/<sampler>-r<k>.chain`
/// as soon as it finishes and dropped from memory.
pub fn execute(
    cfg: &ExperimentConfig,
    problem: &Problem,
    out: Option<&Path>,
) -> Result<RunArtifact, ExperimentError> {
    if cfg.experiment == ExperimentId::GaussianRate {
        return Err(ExperimentError::Other(
            "gaussian-rate is not a sampling experiment; use the rate command".into(),
        ));
    }
    let hash = cfg.hash();
    let jobs: Vec<(SamplerKind, usize)> = cfg
        .samplers
        .iter()
        .flat_map(|&k| (0..cfg.replicates).map(move |r| (k, r)))
        .collect();
    let pool = thread_pool(cfg.workers)?;
    let runs: Vec<RunSummary> = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, rep)| {
                let seed = cfg.chain_seed(kind, rep);
                let target = problem.target(kind);
                let run = run_chain(kind, target.as_ref(), &cfg.chain, seed).map_err(|source| {
                    ExperimentError::Chain {
                        sampler: kind,
                        replicate: rep,
                        source,
                    }
                })?;
                let mut summary = summarize(problem, &run, rep, cfg.diagnostics.lag)?;
                if let Some(dir) = out {
                    let name = format!("{kind}-r{rep}.chain");
                    let path = dir.join(&name);
                    persist::write_chain(&path, &run.record, Some(&hash))?;
                    persist::write_timing(&path, &run.timing)?;
                    summary.chain_file = Some(name);
                }
                Ok(summary)
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    Ok(RunArtifact {
        experiment: cfg.experiment,
        config_hash: hash,
        seed: cfg.seed,
        config: cfg.clone(),
        dataset_file: None,
        runs,
    })
}

/// The rate experiment described by a `gaussian-rate` configuration.
pub fn run_rate(cfg: &ExperimentConfig) -> Result<RateCurve, ExperimentError> {
    let target = gaussian_target(&cfg.gaussian)?;
    let pool = thread_pool(cfg.workers)?;
    Ok(pool.install(|| {
        diagnostics::rate_experiment(
            &target,
            cfg.rate.schedule,
            cfg.rate.lambda,
            cfg.rate.n_max,
            cfg.replicates,
            cfg.seed,
        )
    })?)
}

/// Writes the dataset (if any) and the artifact into `dir`.
pub fn write_artifact(
    dir: &Path,
    problem: &Problem,
    artifact: &mut RunArtifact,
) -> Result<(), ExperimentError> {
    if let Some(ds) = &problem.dataset {
        persist::write_json(
            &dir.join("dataset.json"),
            &Versioned::new(DATASET_FORMAT, ds),
        )?;
        artifact.dataset_file = Some("dataset.json".into());
    }
    persist::write_json(
        &dir.join("artifact.json"),
        &Versioned::new(ARTIFACT_FORMAT, &*artifact),
    )?;
    Ok(())
}

pub fn read_artifact(path: &Path) -> Result<RunArtifact, ExperimentError> {
    Ok(persist::read_versioned(path, ARTIFACT_FORMAT)?)
}
