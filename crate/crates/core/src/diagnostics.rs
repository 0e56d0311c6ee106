//! Chain-quality and inversion-accuracy metrics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::{LearningRate, StochasticFisherEstimate};
use crate::linalg::{norm2, trace_normalize, LinalgError, Matrix};
use crate::rng;
use crate::samplers::{ChainRecord, ChainTiming, PrecondSnapshot};
use crate::targets::GaussianTarget;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("series has zero variance; autocorrelation is undefined")]
    ZeroVariance,
    #[error("zero variance in dimension {0}; autocorrelation is undefined")]
    ZeroVarianceDim(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// `ρ_k` for `k = 0..=lag`.
    pub rho: Vec<f64>,
    pub lag: usize,
}

impl AcfResult {
    /// `τ = max(1, 1 + 2 Σ_{k=1}^{L} ρ_k)`.
    pub fn iat(&self) -> f64 {
        (1.0 + 2.0 * self.rho[1..].iter().sum::<f64>()).max(1.0)
    }
}

/// Biased autocorrelation `ρ_k = γ_k / γ₀` with sample-mean centering.
pub fn acf(series: &[f64], lag: usize) -> Result<AcfResult> {
    let n = series.len();
    if lag < 1 || n <= lag {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "need series length > lag ≥ 1, got length {n} and lag {lag}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let gamma0 = c.iter().map(|v| v * v).sum::<f64>();
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(DiagnosticsError::ZeroVariance);
    }
    let mut rho = Vec::with_capacity(lag + 1);
    rho.push(1.0);
    for k in 1..=lag {
        let gk: f64 = c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
        rho.push(gk / gamma0);
    }
    Ok(AcfResult { rho, lag })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub samples: usize,
    pub lag: usize,
    pub iat: Vec<f64>,
    pub ess: Vec<f64>,
    /// `N / τ_max`
    pub monolithic: f64,
}

impl EssReport {
    pub fn min(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.ess.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.ess.clone();
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        }
    }
}

/// Per-dimension and monolithic ESS of an `N × d` sample matrix.
pub fn ess(samples: &Matrix, lag: usize) -> Result<EssReport> {
    let n = samples.rows();
    let iat: Vec<f64> = (0..samples.cols())
        .into_par_iter()
        .map(|j| match acf(&samples.column(j), lag) {
            Ok(a) => Ok(a.iat()),
            Err(DiagnosticsError::ZeroVariance) => Err(DiagnosticsError::ZeroVarianceDim(j)),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let ess: Vec<f64> = iat.iter().map(|t| n as f64 / t).collect();
    let tau_max = iat.iter().copied().fold(1.0, f64::max);
    Ok(EssReport {
        samples: n,
        lag,
        iat,
        ess,
        monolithic: n as f64 / tau_max,
    })
}

/// ESS over the collection phase of a chain.
pub fn chain_ess(record: &ChainRecord, lag: usize) -> Result<EssReport> {
    ess(&record.collection_matrix(), lag)
}

/// `‖x̂ − x‖ / ‖x‖ × 100`.
pub fn relative_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "estimate has length {}, truth has length {}",
            estimate.len(),
            truth.len()
        )));
    }
    let t = norm2(truth);
    if t == 0.0 {
        return Err(DiagnosticsError::InvalidArgument(
            "truth has zero norm".into(),
        ));
    }
    let diff: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| a - b).collect();
    Ok(norm2(&diff) / t * 100.0)
}

/// `‖M̃ − C̃‖_F` between trace-normalized matrices.
pub fn normalized_distance(m: &Matrix, reference: &Matrix) -> Result<f64> {
    if m.rows() != reference.rows() || m.cols() != reference.cols() {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "matrix is {}×{}, reference is {}×{}",
            m.rows(),
            m.cols(),
            reference.rows(),
            reference.cols()
        )));
    }
    Ok(trace_normalize(m)?
        .sub(&trace_normalize(reference)?)
        .frobenius_norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub updates: usize,
    pub error: f64,
}

pub fn precond_convergence(
    snapshots: &[PrecondSnapshot],
    reference: &Matrix,
) -> Result<Vec<ConvergencePoint>> {
    snapshots
        .iter()
        .map(|s| {
            Ok(ConvergencePoint {
                iteration: s.iteration,
                updates: s.updates,
                error: normalized_distance(&s.matrix, reference)?,
            })
        })
        .collect()
}

/// Mean `‖x_{n+1} − x_n‖²` over the collection phase.
pub fn esjd(record: &ChainRecord) -> Result<f64> {
    let rows: Vec<&[f64]> = record.collection().collect();
    if rows.len() < 2 {
        return Err(DiagnosticsError::InvalidArgument(
            "ESJD needs at least two samples".into(),
        ));
    }
    let total: f64 = rows
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(w[0])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (rows.len() - 1) as f64)
}

/// Column means of an `N × d` matrix.
pub fn sample_mean(samples: &Matrix) -> Vec<f64> {
    let n = samples.rows() as f64;
    let mut mean = vec![0.0; samples.cols()];
    for i in 0..samples.rows() {
        for (m, x) in mean.iter_mut().zip(samples.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Unbiased sample covariance of an `N × d` matrix.
pub fn sample_covariance(samples: &Matrix) -> Matrix {
    let mean = sample_mean(samples);
    let d = samples.cols();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..samples.rows() {
        let dev: Vec<f64> = samples
            .row(i)
            .iter()
            .zip(&mean)
            .map(|(x, m)| x - m)
            .collect();
        cov.rank_one_mut(1.0, &dev, &dev);
    }
    cov.scale(1.0 / (samples.rows() as f64 - 1.0))
}

/// Linearly interpolated empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Equal-tailed empirical credible intervals per coordinate.
pub fn credible_intervals(samples: &Matrix, level: f64) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) || samples.rows() == 0 {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "need a level in (0, 1) and at least one sample, got {level} and {} samples",
            samples.rows()
        )));
    }
    let tail = 0.5 * (1.0 - level);
    Ok((0..samples.cols())
        .map(|j| {
            let mut col = samples.column(j);
            col.sort_by(f64::total_cmp);
            Interval {
                lower: quantile_sorted(&col, tail),
                upper: quantile_sorted(&col, 1.0 - tail),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssTimePoint {
    pub samples: usize,
    pub seconds: f64,
    pub ess: f64,
}

/// Monolithic ESS on growing prefixes of the collection phase against wall time.
pub fn ess_vs_time(
    record: &ChainRecord,
    timing: &ChainTiming,
    lag: usize,
    points: usize,
) -> Result<Vec<EssTimePoint>> {
    let n = record.collection_len();
    if timing.seconds.len() != record.len() {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "timing has {} entries for {} iterations",
            timing.seconds.len(),
            record.len()
        )));
    }
    let start = record.marks.burn_in_end;
    let t0 = if start == 0 {
        0.0
    } else {
        timing.seconds[start - 1]
    };
    let full = record.collection_matrix();
    let mut out = Vec::new();
    for p in 1..=points.max(1) {
        let m = n * p / points.max(1);
        if m <= lag {
            continue;
        }
        let prefix =
            Matrix::from_row_major(m, record.dim, full.as_slice()[..m * record.dim].to_vec())?;
        out.push(EssTimePoint {
            samples: m,
            seconds: timing.seconds[start + m - 1] - t0,
            ess: ess(&prefix, lag)?.monolithic,
        });
    }
    Ok(out)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Distinct integers roughly evenly spaced in `log n` over `[lo, hi]`.
pub fn log_spaced(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let lo = lo.max(1);
    if hi <= lo {
        return vec![lo];
    }
    let decades = (hi as f64 / lo as f64).log10();
    let steps = ((decades * per_decade as f64).ceil() as usize).max(1);
    let mut out: Vec<usize> = (0..=steps)
        .map(|i| {
            (lo as f64 * (hi as f64 / lo as f64).powf(i as f64 / steps as f64)).round() as usize
        })
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub n: Vec<usize>,
    /// `E‖𝓘̂_n − 𝓘‖²_F` averaged over replicates.
    pub mean_sq_error: Vec<f64>,
    pub slope: f64,
    pub replicates: usize,
    pub lambda: f64,
    pub schedule: LearningRate,
}

/// Rate experiment with an arbitrary score source.
///
/// Each replicate draws scores from its own substream of `seed`, runs the
/// stochastic Fisher recursion and records `‖𝓘̂_n − 𝓘‖²_F` at every `n` in
/// `checkpoints` (strictly increasing).
pub fn rate_experiment_with<F>(
    draw_score: F,
    fisher: &Matrix,
    lambda: f64,
    schedule: LearningRate,
    checkpoints: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<RateCurve>
where
    F: Fn(&mut rng::ChainRng) -> Vec<f64> + Sync,
{
    if checkpoints.is_empty() || checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(DiagnosticsError::InvalidArgument(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    if replicates == 0 {
        return Err(DiagnosticsError::InvalidArgument(
            "need at least one replicate".into(),
        ));
    }
    let per_rep: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, r as u64);
            let mut est = StochasticFisherEstimate::new(lambda, schedule);
            let mut errs = Vec::with_capacity(checkpoints.len());
            let mut next = 0;
            for n in 1..=*checkpoints.last().unwrap() {
                est.step(&draw_score(&mut rng));
                if n == checkpoints[next] {
                    let e = est.estimate().unwrap().sub(fisher).frobenius_norm();
                    errs.push(e * e);
                    next += 1;
                }
            }
            errs
        })
        .collect();
    let mean_sq_error: Vec<f64> = (0..checkpoints.len())
        .map(|k| per_rep.iter().map(|e| e[k]).sum::<f64>() / replicates as f64)
        .collect();
    let xs: Vec<f64> = checkpoints.iter().map(|&n| n as f64).collect();
    Ok(RateCurve {
        n: checkpoints.to_vec(),
        slope: loglog_slope(&xs, &mean_sq_error),
        mean_sq_error,
        replicates,
        lambda,
        schedule,
    })
}

/// Rate experiment on a Gaussian target with exact i.i.d. scores, `n ∈ [10², n_max]`.
pub fn rate_experiment(
    target: &GaussianTarget,
    schedule: LearningRate,
    lambda: f64,
    n_max: usize,
    replicates: usize,
    seed: u64,
) -> Result<RateCurve> {
    let checkpoints = log_spaced(100.min(n_max), n_max, 8);
    rate_experiment_with(
        |r| target.sample_score(r),
        &target.fisher(),
        lambda,
        schedule,
        &checkpoints,
        replicates,
        seed,
    )
}

/// i.i.d. `N(0, 1)` draws, mostly for calibrating estimators.
pub fn white_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    rng::standard_normal_vec(rng, n)
}

/// AR(1) series `x_{t+1} = φ x_t + √(1 − φ²) ε_t` started in stationarity.
pub fn ar1<R: Rng + ?Sized>(rng: &mut R, phi: f64, n: usize) -> Vec<f64> {
    let scale = (1.0 - phi * phi).sqrt();
    let mut x = rng::standard_normal(rng);
    (0..n)
        .map(|_| {
            let cur = x;
            x = phi * x + scale * rng::standard_normal(rng);
            cur
        })
        .collect()
}
