//! Dense kernels checked against nalgebra.

use fisher_mala::adapt::{
    CovarianceAdapter, FisherAdapter, LearningRate, StochasticFisherEstimate,
};
use fisher_mala::linalg::{trace_normalize, woodbury_update, Cholesky, Matrix, SqrtPreconditioner};
use fisher_mala::rng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn rel_diff(a: &Matrix, b: &DMatrix<f64>) -> f64 {
    (to_na(a) - b).norm() / b.norm()
}

/// `(λI + Σ sᵢsᵢᵀ)⁻¹` by explicit inversion.
fn damped_fisher_inverse(signals: &[Vec<f64>], lambda: f64) -> DMatrix<f64> {
    let d = signals[0].len();
    let mut a = DMatrix::<f64>::identity(d, d) * lambda;
    for s in signals {
        let v = nalgebra::DVector::from_column_slice(s);
        a += &v * v.transpose();
    }
    a.try_inverse().unwrap()
}

fn random_signals(seed: u64, d: usize, n: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            rng::standard_normal_vec(&mut r, d)
                .into_iter()
                .map(|v| v * scale)
                .collect()
        })
        .collect()
}

#[test]
fn sqrt_recursion_tracks_explicit_inverse() {
    let mut r = rng::seeded(100);
    for case in 0..30 {
        let d = r.random_range(1..=20);
        let n = r.random_range(1..=200);
        let scale = 10f64.powf(r.random_range(-2.0..2.0));
        let signals = random_signals(case, d, n, scale);
        let mut p = SqrtPreconditioner::init(&signals[0], 10.0).unwrap();
        for s in &signals[1..] {
            p.update(s);
        }
        let err = rel_diff(&p.covariance(), &damped_fisher_inverse(&signals, 10.0));
        assert!(err < 1e-9, "case {case}: d={d} n={n} rel err {err:e}");
    }
}

#[test]
fn fisher_adapter_agrees_with_woodbury_chain() {
    let signals = random_signals(7, 6, 80, 3.0);
    let mut a = FisherAdapter::new(6, 10.0).unwrap();
    let mut m = Matrix::identity(6).scale(0.1);
    for s in &signals {
        a.step(s).unwrap();
        m = woodbury_update(&m, s);
    }
    let want = damped_fisher_inverse(&signals, 10.0);
    assert!(rel_diff(&a.sqrt().covariance(), &want) < 1e-10);
    assert!(rel_diff(&m, &want) < 1e-10);
}

#[test]
fn cholesky_matches_nalgebra() {
    let mut r = rng::seeded(5);
    for d in [1, 2, 7, 30] {
        let b = Matrix::from_fn(d, d, |_, _| rng::standard_normal(&mut r));
        let mut a = b.gram();
        a.add_diag(0.5);
        let ch = Cholesky::factor(&a).unwrap();
        let na = to_na(&a);
        let na_ch = na.clone().cholesky().unwrap();
        assert!(rel_diff(ch.lower(), &na_ch.l()) < 1e-12);
        assert!(rel_diff(&ch.inverse(), &na.clone().try_inverse().unwrap()) < 1e-10);
        let logdet: f64 = na_ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        assert!((ch.log_det() - logdet).abs() < 1e-10 * logdet.abs().max(1.0));
        let rhs = rng::standard_normal_vec(&mut r, d);
        let x = ch.solve(&rhs);
        let want = na_ch.solve(&nalgebra::DVector::from_column_slice(&rhs));
        for (u, v) in x.iter().zip(want.iter()) {
            assert!((u - v).abs() < 1e-9 * v.abs().max(1.0));
        }
    }
}

#[test]
fn inverse_of_spd_3x3() {
    let a = Matrix::from_rows(&[
        vec![4.0, 1.0, 0.5],
        vec![1.0, 3.0, 0.2],
        vec![0.5, 0.2, 2.0],
    ]);
    let inv = Cholesky::factor(&a).unwrap().inverse();
    let want = to_na(&a).try_inverse().unwrap();
    assert!(rel_diff(&inv, &want) < 1e-14);
}

#[test]
fn cholesky_rank_one_update_matches_refactorization() {
    let mut r = rng::seeded(9);
    let d = 12;
    let b = Matrix::from_fn(d, d, |_, _| rng::standard_normal(&mut r));
    let mut a = b.gram();
    a.add_diag(1.0);
    let mut ch = Cholesky::factor(&a).unwrap();
    for _ in 0..20 {
        let v = rng::standard_normal_vec(&mut r, d);
        ch.rank_one_update(&v);
        a.rank_one_mut(1.0, &v, &v);
    }
    let want = to_na(&a).cholesky().unwrap().l();
    assert!(rel_diff(ch.lower(), &want) < 1e-11);
}

#[test]
fn covariance_adapter_matches_batch_formula() {
    // C_n = (1/(n−1)) Σ (xᵢ − x̄)(xᵢ − x̄)ᵀ + λ (1/(n−1)) I for the recursion started at C₂ = ½vvᵀ + λI
    let d = 4;
    let lambda = 10.0;
    let mut r = rng::seeded(21);
    let xs: Vec<Vec<f64>> = (0..60)
        .map(|_| rng::standard_normal_vec(&mut r, d))
        .collect();
    let mut a = CovarianceAdapter::new(d, lambda).unwrap();
    for x in &xs {
        a.step(x).unwrap();
    }
    let n = xs.len() as f64;
    let mut sample = DMatrix::<f64>::zeros(d, d);
    let mean: Vec<f64> = (0..d)
        .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n)
        .collect();
    for x in &xs {
        let v = nalgebra::DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
        sample += &v * v.transpose();
    }
    let want = sample / (n - 1.0) + DMatrix::<f64>::identity(d, d) * (lambda / (n - 1.0));
    assert!(rel_diff(a.covariance().unwrap(), &want) < 1e-12);
    let l = a.factor().unwrap().lower();
    assert!(rel_diff(&l.gram(), &want) < 1e-10);
}

#[test]
fn stochastic_fisher_harmonic_equals_batch_average() {
    let signals = random_signals(4, 5, 300, 1.5);
    let mut est = StochasticFisherEstimate::new(10.0, LearningRate::Harmonic);
    for s in &signals {
        est.step(s);
    }
    let n = signals.len() as f64;
    let batch = damped_fisher_inverse(&signals, 10.0).try_inverse().unwrap() / n;
    assert!(rel_diff(est.estimate().unwrap(), &batch) < 1e-12);
}

fn spd(d: usize, seed: u64) -> Matrix {
    let mut r = rng::seeded(seed);
    let b = Matrix::from_fn(d, d, |_, _| rng::standard_normal(&mut r));
    let mut a = b.gram();
    a.add_diag(0.1);
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sqrt_factor_stays_spd(seed in 0u64..10_000, d in 1usize..8, n in 1usize..40, scale in -3.0f64..3.0) {
        let signals = random_signals(seed, d, n, 10f64.powf(scale));
        let mut p = SqrtPreconditioner::init(&signals[0], 10.0).unwrap();
        for s in &signals[1..] {
            p.update(s);
        }
        let m = p.covariance();
        prop_assert!(m.max_asymmetry() <= 1e-12 * m.frobenius_norm());
        prop_assert!(Cholesky::factor(&m).is_ok());
        // tr(M) ≤ d/λ since M ⪯ λ⁻¹ I
        prop_assert!(p.trace() <= d as f64 / 10.0 * (1.0 + 1e-12));
    }

    #[test]
    fn trace_normalize_is_scale_free(seed in 0u64..10_000, d in 1usize..6, c in 0.01f64..100.0) {
        let a = spd(d, seed);
        let x = trace_normalize(&a).unwrap();
        let y = trace_normalize(&a.scale(c)).unwrap();
        prop_assert!((x.trace() - d as f64).abs() < 1e-12 * d as f64);
        prop_assert!(x.sub(&y).frobenius_norm() < 1e-12 * x.frobenius_norm());
    }

    #[test]
    fn woodbury_inverts_the_rank_one_sum(seed in 0u64..10_000, d in 1usize..6) {
        let a = spd(d, seed);
        let mut r = rng::seeded(seed + 1);
        let s = rng::standard_normal_vec(&mut r, d);
        let m = Cholesky::factor(&a).unwrap().inverse();
        let updated = woodbury_update(&m, &s);
        let mut direct = a.clone();
        direct.rank_one_mut(1.0, &s, &s);
        let want = to_na(&direct).try_inverse().unwrap();
        prop_assert!(rel_diff(&updated, &want) < 1e-8);
    }
}
