//! Subcommand implementations behind the `fisher-mala` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::config::ExperimentId;
use crate::diagnostics::{self, AcfResult, EssReport, EssTimePoint};
use crate::experiments::{self, ExperimentError, Problem, RunArtifact, RATE_FORMAT};
use crate::persist::{self, Versioned};
use crate::samplers::SamplerKind;

/// Environment variable naming the output root (default `runs`).
pub const OUT_ENV: &str = "FISHER_MALA_OUT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| {
        persist::PersistError::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

/// `run <config>`: executes the experiment and returns the output directory.
pub fn cmd_run(config: &Path) -> Result<PathBuf, ExperimentError> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.experiment == ExperimentId::GaussianRate {
        return cmd_rate(config);
    }
    let dir = experiments::output_dir(&output_root(), &cfg);
    create_dir(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|source| {
        persist::PersistError::Io {
            path: dir.join("config.toml"),
            source,
        }
    })?;
    let problem = Problem::build(&cfg)?;
    let mut artifact = experiments::execute(&cfg, &problem, Some(&dir))?;
    experiments::write_artifact(&dir, &problem, &mut artifact)?;
    let table = summary_table(std::slice::from_ref(&artifact))?;
    write_text(&dir.join("summary.csv"), &table)?;
    print!("{table}");
    Ok(dir)
}

/// `rate <config>`: writes `rate.json` with the fitted slope.
pub fn cmd_rate(config: &Path) -> Result<PathBuf, ExperimentError> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.experiment != ExperimentId::GaussianRate {
        return Err(crate::config::ConfigError::Invalid {
            field: "experiment".into(),
            message: format!(
                "the rate command needs `gaussian-rate`, got `{}`",
                cfg.experiment
            ),
        }
        .into());
    }
    let dir = experiments::output_dir(&output_root(), &cfg);
    create_dir(&dir)?;
    let curve = experiments::run_rate(&cfg)?;
    #[derive(Serialize)]
    struct RateDoc<'a> {
        config_hash: String,
        config: &'a ExperimentConfig,
        curve: &'a diagnostics::RateCurve,
    }
    let doc = RateDoc {
        config_hash: cfg.hash(),
        config: &cfg,
        curve: &curve,
    };
    persist::write_json(&dir.join("rate.json"), &Versioned::new(RATE_FORMAT, &doc))?;
    println!(
        "slope {:.4} over n = {}..{}",
        curve.slope,
        curve.n[0],
        curve.n[curve.n.len() - 1]
    );
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosisReport {
    pub chain: String,
    pub sampler: SamplerKind,
    pub dim: usize,
    pub collection: usize,
    pub lag: usize,
    pub acceptance_rate: f64,
    pub esjd: f64,
    pub nonfinite_rejections: u64,
    pub ess: EssReport,
    pub acf: Vec<AcfResult>,
    pub ess_vs_time: Option<Vec<EssTimePoint>>,
}

/// `diagnose <chain> --lag L`: writes `<chain>.diag.json` (and `.ess_time.csv` when timings exist).
pub fn cmd_diagnose(
    chain: &Path,
    lag: usize,
    csv: bool,
) -> Result<DiagnosisReport, ExperimentError> {
    let (_, record) = persist::read_chain(chain)?;
    let samples = record.collection_matrix();
    let ess = diagnostics::ess(&samples, lag)?;
    let acf = (0..record.dim)
        .map(|j| diagnostics::acf(&samples.column(j), lag))
        .collect::<Result<Vec<_>, _>>()?;
    let ess_vs_time = match persist::read_timing(chain)? {
        Some(t) => Some(diagnostics::ess_vs_time(&record, &t, lag, 20)?),
        None => None,
    };
    let report = DiagnosisReport {
        chain: chain.display().to_string(),
        sampler: record.sampler,
        dim: record.dim,
        collection: record.collection_len(),
        lag,
        acceptance_rate: record.collection_acceptance_rate(),
        esjd: diagnostics::esjd(&record)?,
        nonfinite_rejections: record.nonfinite_rejections,
        ess,
        acf,
        ess_vs_time,
    };
    let stem = chain.as_os_str().to_owned();
    let with = |ext: &str| {
        let mut s = stem.clone();
        s.push(ext);
        PathBuf::from(s)
    };
    persist::write_json(
        &with(".diag.json"),
        &Versioned::new("fisher-mala-diagnosis", &report),
    )?;
    if let Some(points) = &report.ess_vs_time {
        let mut text = String::from("samples,seconds,ess\n");
        for p in points {
            let _ = writeln!(text, "{},{:e},{:e}", p.samples, p.seconds, p.ess);
        }
        write_text(&with(".ess_time.csv"), &text)?;
    }
    if csv {
        let path = with(".csv");
        let mut f = fs::File::create(&path).map_err(|source| persist::PersistError::Io {
            path: path.clone(),
            source,
        })?;
        persist::write_chain_csv(&mut f, &record)
            .map_err(|source| persist::PersistError::Io { path, source })?;
    }
    println!(
        "{}: {} samples, acceptance {:.3}, monolithic ESS {:.1}, min/median/max ESS {:.1}/{:.1}/{:.1}, ESJD {:.4e}",
        report.sampler,
        report.collection,
        report.acceptance_rate,
        report.ess.monolithic,
        report.ess.min(),
        report.ess.median(),
        report.ess.max(),
        report.esjd
    );
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|source| {
        persist::PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Column layout of aggregated tables.
pub const TABLE_HEADER: &str =
    "experiment,sampler,runs,err_mean,err_sd,ess_mean,ess_sd,ess_per_sample_mean,\
acceptance_mean,acceptance_sd,esjd_mean,wall_mean,wall_sd";

/// One row per sampler with mean and sample standard deviation across runs.
pub fn summary_table(artifacts: &[RunArtifact]) -> Result<String, ExperimentError> {
    let Some(first) = artifacts.first() else {
        return Err(ExperimentError::Other("no artifacts to aggregate".into()));
    };
    if let Some(other) = artifacts.iter().find(|a| a.experiment != first.experiment) {
        return Err(crate::config::ConfigError::Invalid {
            field: "experiment".into(),
            message: format!(
                "cannot mix `{}` and `{}` artifacts",
                first.experiment, other.experiment
            ),
        }
        .into());
    }
    let mut by_sampler: BTreeMap<SamplerKind, Vec<&experiments::RunSummary>> = BTreeMap::new();
    for run in artifacts.iter().flat_map(|a| &a.runs) {
        by_sampler.entry(run.sampler).or_default().push(run);
    }
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for (sampler, runs) in by_sampler {
        let col = |f: &dyn Fn(&experiments::RunSummary) -> f64| {
            mean_sd(&runs.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let errors: Vec<f64> = runs.iter().filter_map(|r| r.rel_error_pct).collect();
        let (err, err_sd) = if errors.is_empty() {
            (String::new(), String::new())
        } else {
            let (m, s) = mean_sd(&errors);
            (format!("{m:.6}"), format!("{s:.6}"))
        };
        let (ess, ess_sd) = col(&|r| r.ess_monolithic);
        let (eps, _) = col(&|r| r.ess_per_sample);
        let (acc, acc_sd) = col(&|r| r.acceptance_rate);
        let (esjd, _) = col(&|r| r.esjd);
        let (wall, wall_sd) = col(&|r| r.wall_seconds);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3},{:.3},{:.6},{:.4},{:.4},{:.6e},{:.3},{:.3}",
            first.experiment,
            sampler,
            runs.len(),
            err,
            err_sd,
            ess,
            ess_sd,
            eps,
            acc,
            acc_sd,
            esjd,
            wall,
            wall_sd
        );
    }
    Ok(out)
}

/// `table <artifacts...>`: aggregated CSV on stdout (and to `out` if given).
pub fn cmd_table(artifacts: &[PathBuf], out: Option<&Path>) -> Result<String, ExperimentError> {
    let loaded = artifacts
        .iter()
        .map(|p| experiments::read_artifact(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = summary_table(&loaded)?;
    if let Some(path) = out {
        write_text(path, &table)?;
    }
    print!("{table}");
    Ok(table)
}
