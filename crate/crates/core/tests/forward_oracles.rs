//! Forward solvers against closed-form solutions and independent differencing.

use std::f64::consts::PI;

use fisher_mala::forward::{
    bvp_solve, frechet_fd, heat_synthesize, manufactured_source, neumann_matrix,
    neumann_synthesize, ForwardModel, HeatSolver, HeatSourceOperator, NeumannBvpModel, TimeScheme,
};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn heat_free_decay_within_two_percent() {
    let solver = HeatSolver::new(200, 200, 1.0, TimeScheme::Bdf2).unwrap();
    let g = solver
        .final_state(&vec![0.0; 200], &solver.initial_condition())
        .unwrap();
    let decay = (-PI * PI).exp();
    for (x, gi) in solver.grid().iter().zip(&g) {
        let exact = decay * (PI * x).sin();
        assert!((gi - exact).abs() <= 0.02 * decay, "x={x}: {gi} vs {exact}");
    }
}

#[test]
fn heat_forced_mode_matches_ode_solution() {
    // u = a(t) sin πx with a' + π² a = 2π², a(0) = 1, so a(T) = 2 − e^{−π²T}
    let solver = HeatSolver::new(200, 200, 1.0, TimeScheme::Bdf2).unwrap();
    let grid = solver.grid();
    let f: Vec<f64> = grid
        .iter()
        .map(|x| 2.0 * PI * PI * (PI * x).sin())
        .collect();
    let u = solver.final_state(&f, &solver.initial_condition()).unwrap();
    let a = 2.0 - (-PI * PI).exp();
    for (x, ui) in grid.iter().zip(&u) {
        let exact = a * (PI * x).sin();
        assert!((ui - exact).abs() <= 0.02 * a, "x={x}: {ui} vs {exact}");
    }
}

#[test]
fn backward_euler_is_first_order_in_time() {
    let exact = (-PI * PI).exp();
    let mid = |steps: usize| {
        let s = HeatSolver::new(99, steps, 1.0, TimeScheme::BackwardEuler).unwrap();
        let g = s
            .final_state(&vec![0.0; 99], &s.initial_condition())
            .unwrap();
        (g[49] - exact).abs()
    };
    let ratio = mid(400) / mid(800);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn heat_map_preserves_reflection_symmetry() {
    let op = HeatSourceOperator::assemble(31, 40, 1.0).unwrap();
    let n = 31;
    let f: Vec<f64> = op
        .grid()
        .iter()
        .map(|x| x * (1.0 - x) * (3.0 + x * (1.0 - x)))
        .collect();
    let u = op.evaluate(&f).unwrap();
    for i in 0..n {
        assert!((u[i] - u[n - 1 - i]).abs() < 1e-12);
    }
    let m = op.matrix();
    for i in 0..n {
        for j in 0..n {
            assert!((m[(i, j)] - m[(n - 1 - i, n - 1 - j)]).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_euler_keeps_nonnegative_data_nonnegative() {
    let s = HeatSolver::new(50, 60, 1.0, TimeScheme::BackwardEuler).unwrap();
    let f: Vec<f64> = s
        .grid()
        .iter()
        .map(|x| if *x < 0.3 { 5.0 } else { 0.0 })
        .collect();
    let u = s.final_state(&f, &s.initial_condition()).unwrap();
    assert!(u.iter().all(|v| *v >= 0.0));
    let op = HeatSourceOperator::assemble_with(s).unwrap();
    let m = op.matrix();
    for i in 0..50 {
        for j in 0..50 {
            assert!(m[(i, j)] >= 0.0);
        }
    }
}

#[test]
fn heat_noise_has_requested_magnitude() {
    let fine = HeatSolver::new(399, 50, 1.0, TimeScheme::Bdf2).unwrap();
    let data = heat_synthesize(&fine, 199, &|x| 2.0 * PI * PI * (PI * x).sin(), 0.01, 42).unwrap();
    let resid: Vec<f64> = data
        .y
        .iter()
        .zip(&data.noiseless)
        .map(|(a, b)| a - b)
        .collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - 0.01).abs() < 0.0015, "sd {sd}");
    assert!(mean.abs() < 3.0 * 0.01 / n.sqrt());
    // subsampled values agree with a direct coarse solve to discretization accuracy
    let coarse = HeatSolver::new(199, 50, 1.0, TimeScheme::Bdf2).unwrap();
    let f: Vec<f64> = coarse
        .grid()
        .iter()
        .map(|x| 2.0 * PI * PI * (PI * x).sin())
        .collect();
    let u = coarse.final_state(&f, &coarse.initial_condition()).unwrap();
    assert!(max_abs_diff(&u, &data.noiseless) < 1e-3);
}

fn manufactured_error(intervals: usize) -> f64 {
    let theta = [2.0, 1.0, 1.0];
    let model = NeumannBvpModel::manufactured(intervals, &theta).unwrap();
    let u = model.state(&theta).unwrap();
    let exact: Vec<f64> = model.nodes().iter().map(|x| (PI * x).cos()).collect();
    max_abs_diff(&u, &exact)
}

#[test]
fn neumann_reproduces_manufactured_solution() {
    let e100 = manufactured_error(100);
    assert!(e100 <= 1e-3, "error {e100}");
    let ratio = manufactured_error(50) / e100;
    assert!((3.5..4.5).contains(&ratio), "convergence ratio {ratio}");
}

#[test]
fn neumann_constant_coefficient_closed_form() {
    // −u'' + c u = (c + π²) cos πx has u = cos πx; any c > 0
    let n = 200;
    let h = 1.0 / n as f64;
    for c in [0.5, 3.0, 40.0] {
        let q = vec![c; n + 1];
        let f: Vec<f64> = (0..=n)
            .map(|i| (c + PI * PI) * (PI * i as f64 * h).cos())
            .collect();
        let u = bvp_solve(&q, &f, n).unwrap();
        let exact: Vec<f64> = (0..=n).map(|i| (PI * i as f64 * h).cos()).collect();
        assert!(max_abs_diff(&u, &exact) < 1e-3, "c={c}");
    }
    let m = neumann_matrix(&[1.0; 11], 10);
    assert!(m.max_asymmetry() == 0.0);
}

#[test]
fn manufactured_source_formula() {
    let theta = [2.0, 1.0, 1.0];
    for x in [0.0, 0.1, 0.37, 0.5, 1.0] {
        let q = 2.0 + (2.0 * PI * x).sin() + (2.0 * PI * x).cos();
        let want = q * (PI * x).cos() + PI * PI * (PI * x).cos();
        assert!((manufactured_source(&theta, x) - want).abs() < 1e-12);
    }
}

fn central_jacobian(model: &NeumannBvpModel, theta: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..theta.len())
        .map(|j| {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[j] += h;
            m[j] -= h;
            let fp = model.evaluate(&p).unwrap();
            let fm = model.evaluate(&m).unwrap();
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        })
        .collect()
}

#[test]
fn fd_jacobian_matches_central_differences() {
    let theta = [2.0, 1.0, 1.0];
    let model = NeumannBvpModel::manufactured(100, &theta).unwrap();
    let point = [1.8, 0.9, 1.2];
    let jac = frechet_fd(&model, &point, 1e-6).unwrap();
    let central = central_jacobian(&model, &point, 1e-4);
    for (j, col) in central.iter().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (0..col.len())
            .map(|i| (jac[(i, j)] - col[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-3 * norm, "column {j}: {diff} vs {norm}");
    }
}

#[test]
fn fd_jacobian_error_halves_with_step() {
    let theta = [2.0, 1.0, 1.0];
    let model = NeumannBvpModel::manufactured(100, &theta).unwrap();
    let point = [2.0, 1.0, 1.0];
    let reference = central_jacobian(&model, &point, 1e-4);
    let err = |h: f64| {
        let jac = frechet_fd(&model, &point, h).unwrap();
        (0..3)
            .flat_map(|j| {
                let jac = &jac;
                reference[j]
                    .iter()
                    .enumerate()
                    .map(move |(i, r)| (jac[(i, j)] - r).powi(2))
            })
            .sum::<f64>()
            .sqrt()
    };
    let ratio = err(2e-2) / err(1e-2);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn neumann_noise_and_grids() {
    let data = neumann_synthesize(100, 2, &[2.0, 1.0, 1.0], 0.01, 7).unwrap();
    assert_eq!(data.y.len(), 99);
    assert_eq!(data.grid.data, 200);
    let exact: Vec<f64> = data
        .grid
        .observation_points
        .iter()
        .map(|x| (PI * x).cos())
        .collect();
    assert!(max_abs_diff(&data.noiseless, &exact) < 1e-3);
    let resid: Vec<f64> = data
        .y
        .iter()
        .zip(&data.noiseless)
        .map(|(a, b)| a - b)
        .collect();
    let rms = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
    assert!((0.007..0.013).contains(&rms), "rms {rms}");
    assert!(neumann_synthesize(100, 1, &[2.0, 1.0, 1.0], 0.01, 7).is_err());
}

#[test]
fn neumann_admissibility_tracks_positivity() {
    let model = NeumannBvpModel::manufactured(100, &[2.0, 1.0, 1.0]).unwrap();
    assert!(model.is_admissible(&[2.0, 1.0, 1.0]));
    // q(x) = 1 + 1·sin + 1·cos has minimum 1 − √2 < 0
    assert!(!model.is_admissible(&[1.0, 1.0, 1.0]));
    assert!(model.evaluate(&[1.0, 1.0, 1.0]).is_err());
}
