//! Estimators checked on processes with known autocorrelation and rates.

use fisher_mala::adapt::LearningRate;
use fisher_mala::diagnostics::{
    acf, ar1, credible_intervals, ess, log_spaced, loglog_slope, normalized_distance,
    rate_experiment, rate_experiment_with, relative_error, sample_mean, white_noise,
    DiagnosticsError,
};
use fisher_mala::linalg::Matrix;
use fisher_mala::rng;
use fisher_mala::targets::gaussian_score_target;

fn column_matrix(cols: &[Vec<f64>]) -> Matrix {
    let n = cols[0].len();
    Matrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

#[test]
fn ar1_autocorrelation_is_geometric() {
    let mut r = rng::seeded(1);
    let phi = 0.9;
    let x = ar1(&mut r, phi, 400_000);
    let a = acf(&x, 200).unwrap();
    for k in 0..=20 {
        assert!(
            (a.rho[k] - phi.powi(k as i32)).abs() < 0.02,
            "lag {k}: {}",
            a.rho[k]
        );
    }
    // τ = (1 + φ)/(1 − φ) = 19
    let tau = a.iat();
    assert!((tau - 19.0).abs() < 0.15 * 19.0, "τ = {tau}");
}

#[test]
fn ess_of_white_noise_is_sample_size() {
    let mut r = rng::seeded(2);
    let n = 50_000;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| white_noise(&mut r, n)).collect();
    let rep = ess(&column_matrix(&cols), 50).unwrap();
    for e in &rep.ess {
        assert!((e - n as f64).abs() < 0.1 * n as f64, "ESS {e}");
    }
    assert!(rep.monolithic <= rep.min() + 1e-9);
}

#[test]
fn monolithic_ess_follows_the_slowest_coordinate() {
    let mut r = rng::seeded(3);
    let n = 100_000;
    let cols = vec![
        ar1(&mut r, 0.5, n),
        ar1(&mut r, 0.8, n),
        white_noise(&mut r, n),
    ];
    let rep = ess(&column_matrix(&cols), 100).unwrap();
    // τ = 3, 9, 1
    let want = [n as f64 / 3.0, n as f64 / 9.0, n as f64];
    for (e, w) in rep.ess.iter().zip(want) {
        assert!((e - w).abs() < 0.15 * w, "{e} vs {w}");
    }
    assert_eq!(rep.monolithic, rep.min());
    assert!((rep.median() - rep.ess[0]).abs() < 1e-9);
}

#[test]
fn iat_is_floored_at_one() {
    // alternating series has ρ₁ ≈ −1
    let x: Vec<f64> = (0..1000)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let a = acf(&x, 1).unwrap();
    assert!(a.rho[1] < -0.99);
    assert_eq!(a.iat(), 1.0);
}

#[test]
fn constant_series_is_reported() {
    let cols: [Vec<f64>; 2] = [vec![1.0; 100], (0..100).map(|i| i as f64).collect()];
    assert_eq!(acf(&cols[0], 5), Err(DiagnosticsError::ZeroVariance));
    let m = column_matrix(&[cols[1].clone(), cols[0].clone()]);
    assert_eq!(
        ess(&m, 5).unwrap_err(),
        DiagnosticsError::ZeroVarianceDim(1)
    );
    assert!(acf(&cols[1], 100).is_err());
}

#[test]
fn harmonic_rate_has_slope_minus_one() {
    let cov = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 + i as f64 } else { 0.3 });
    let target = gaussian_score_target(vec![0.0; 4], cov).unwrap();
    let curve = rate_experiment(&target, LearningRate::Harmonic, 10.0, 20_000, 60, 5).unwrap();
    assert!((curve.slope + 1.0).abs() <= 0.2, "slope {}", curve.slope);
    // κ = 1 power schedule is the same recursion
    let power = rate_experiment(
        &target,
        LearningRate::Power { kappa: 1.0 },
        10.0,
        20_000,
        60,
        5,
    )
    .unwrap();
    assert_eq!(curve.mean_sq_error, power.mean_sq_error);
    // error decreases over the tail of the curve
    let tail = &curve.mean_sq_error[curve.mean_sq_error.len() / 2..];
    assert!(tail.windows(2).all(|w| w[1] < w[0]), "{tail:?}");
}

#[test]
fn constant_learning_rate_stalls() {
    let target = gaussian_score_target(vec![0.0; 3], Matrix::identity(3)).unwrap();
    let curve = rate_experiment(
        &target,
        LearningRate::Constant { gamma: 0.05 },
        10.0,
        10_000,
        50,
        6,
    )
    .unwrap();
    assert!(curve.slope.abs() < 0.2, "slope {}", curve.slope);
}

#[test]
fn rate_experiment_is_reproducible_and_validated() {
    let fisher = Matrix::identity(2);
    let draw = |r: &mut rng::ChainRng| rng::standard_normal_vec(r, 2);
    let pts = [10, 100, 1000];
    let a = rate_experiment_with(draw, &fisher, 1.0, LearningRate::Harmonic, &pts, 8, 42).unwrap();
    let b = rate_experiment_with(draw, &fisher, 1.0, LearningRate::Harmonic, &pts, 8, 42).unwrap();
    assert_eq!(a, b);
    assert!(
        rate_experiment_with(draw, &fisher, 1.0, LearningRate::Harmonic, &[10, 10], 8, 42).is_err()
    );
    assert!(rate_experiment_with(draw, &fisher, 1.0, LearningRate::Harmonic, &pts, 0, 42).is_err());
}

#[test]
fn loglog_slope_of_exact_power_laws() {
    let x: Vec<f64> = (1..50).map(|i| i as f64 * 3.0).collect();
    for p in [-2.0, -1.0, -0.5, 1.5] {
        let y: Vec<f64> = x.iter().map(|v| 7.0 * v.powf(p)).collect();
        assert!((loglog_slope(&x, &y) - p).abs() < 1e-12);
    }
    assert!(loglog_slope(&[1.0, 2.0], &[1.0, 0.0]).is_nan());
    let pts = log_spaced(100, 10_000, 8);
    assert_eq!((pts[0], *pts.last().unwrap()), (100, 10_000));
    assert_eq!(pts.len(), 17);
    assert!(pts.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn distance_is_zero_on_itself_and_scale_free() {
    let m = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
    let c = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 4.0]]);
    assert_eq!(normalized_distance(&m, &m).unwrap(), 0.0);
    let base = normalized_distance(&m, &c).unwrap();
    for s in [1e-6, 0.3, 1e5] {
        assert!(
            (normalized_distance(&m.scale(s), &c.scale(1.0 / s)).unwrap() - base).abs() < 1e-12
        );
    }
    // by hand: M̃ = (2/5) M, C̃ = (2/5) C
    let want = (0.4f64 * ((2.0f64).powi(2) + 2.0 * 0.8f64.powi(2) + 2.0f64.powi(2)).sqrt()).abs();
    assert!((base - want).abs() < 1e-12);
    assert!(normalized_distance(&m, &Matrix::identity(3)).is_err());
}

#[test]
fn relative_error_percent() {
    assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    let e = relative_error(&[3.0, 4.0], &[0.0, 5.0]).unwrap();
    assert!((e - 100.0 * (10.0f64).sqrt() / 5.0).abs() < 1e-12);
    assert!(relative_error(&[1.0], &[0.0]).is_err());
}

#[test]
fn credible_intervals_match_normal_quantiles() {
    let mut r = rng::seeded(8);
    let n = 200_000;
    let cols = vec![
        white_noise(&mut r, n),
        white_noise(&mut r, n)
            .iter()
            .map(|v| 3.0 + 2.0 * v)
            .collect(),
    ];
    let m = column_matrix(&cols);
    let ci = credible_intervals(&m, 0.95).unwrap();
    let z = 1.959_963_985;
    assert!((ci[0].lower + z).abs() < 0.03 && (ci[0].upper - z).abs() < 0.03);
    assert!(
        (ci[1].lower - (3.0 - 2.0 * z)).abs() < 0.06
            && (ci[1].upper - (3.0 + 2.0 * z)).abs() < 0.06
    );
    let mean = sample_mean(&m);
    assert!(mean[0].abs() < 0.01 && (mean[1] - 3.0).abs() < 0.02);
    // linear interpolation between order statistics
    let small = column_matrix(&[vec![4.0, 1.0, 3.0, 2.0, 5.0]]);
    let ci = credible_intervals(&small, 0.5).unwrap();
    assert_eq!((ci[0].lower, ci[0].upper), (2.0, 4.0));
}
