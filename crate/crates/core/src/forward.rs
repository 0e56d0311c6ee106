//! Forward models for the two 1-D inverse problems and their derivatives.
//!
//! * [`HeatSourceOperator`]: final-time temperature of `u_t − u_xx = f` on
//!   (0, 1) with homogeneous Dirichlet data and `u(x, 0) = sin(πx)`, as an
//!   affine map `f ↦ F f + g` of the nodal source values.
//! * [`NeumannBvpModel`]: interior values of the solution of
//!   `−u'' + q u = f`, `u'(0) = u'(1) = 0`, as a function of the Fourier
//!   coefficients of `q`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{all_finite, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter outside the solvable domain: {0}")]
    Domain(String),
    #[error("singular tridiagonal system at row {0}")]
    Singular(usize),
    #[error("jacobian column {column} failed: {source}")]
    Jacobian {
        column: usize,
        #[source]
        source: Box<ForwardError>,
    },
}

pub type Result<T> = std::result::Result<T, ForwardError>;

/// Maps parameters to predicted observations.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Jacobian `∂F/∂x` (output_dim × input_dim) together with `F(x)`.
    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Matrix)>;

    /// The Jacobian when it does not depend on `x`.
    fn constant_jacobian(&self) -> Option<&Matrix> {
        None
    }

    /// Whether `x` lies in the domain where the model can be evaluated.
    fn is_admissible(&self, _x: &[f64]) -> bool {
        true
    }
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    matrix: Matrix,
    offset: Option<Vec<f64>>,
}

impl LinearModel {
    pub fn new(matrix: Matrix) -> Self {
        LinearModel {
            matrix,
            offset: None,
        }
    }

    pub fn affine(matrix: Matrix, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != matrix.rows() {
            return Err(ForwardError::DimensionMismatch {
                expected: matrix.rows(),
                found: offset.len(),
            });
        }
        Ok(LinearModel {
            matrix,
            offset: Some(offset),
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn offset(&self) -> Option<&[f64]> {
        self.offset.as_deref()
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.matrix.cols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.rows()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(ForwardError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut out = self.matrix.matvec(x);
        if let Some(b) = &self.offset {
            out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        Ok((self.evaluate(x)?, self.matrix.clone()))
    }

    fn constant_jacobian(&self) -> Option<&Matrix> {
        Some(&self.matrix)
    }
}

/// Thomas algorithm for `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
/// `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(ForwardError::InvalidArgument(
            "tridiagonal bands and rhs must share a length".into(),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(ForwardError::Singular(0));
    }
    c[0] = sup[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(ForwardError::Singular(i));
        }
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Time integrator for the heat equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    BackwardEuler,
    /// Two-step backward differentiation, started with one backward-Euler step.
    #[default]
    Bdf2,
}

/// Implicit finite-difference solver for `u_t − u_xx = f` on (0, 1) with
/// zero Dirichlet data, on `nodes` interior points of a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSolver {
    nodes: usize,
    time_steps: usize,
    final_time: f64,
    scheme: TimeScheme,
}

impl HeatSolver {
    pub fn new(
        nodes: usize,
        time_steps: usize,
        final_time: f64,
        scheme: TimeScheme,
    ) -> Result<Self> {
        if nodes < 2 || time_steps < 2 {
            return Err(ForwardError::InvalidArgument(format!(
                "need at least 2 nodes and 2 time steps, got {nodes} and {time_steps}"
            )));
        }
        if !(final_time > 0.0) || !final_time.is_finite() {
            return Err(ForwardError::InvalidArgument(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        Ok(HeatSolver {
            nodes,
            time_steps,
            final_time,
            scheme,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.nodes + 1) as f64
    }

    /// Interior node coordinates `x_i = i h`, `i = 1..=nodes`.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.nodes).map(|i| i as f64 * h).collect()
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn scheme(&self) -> TimeScheme {
        self.scheme
    }

    // Solves (a I − dt Δ_h) u = rhs.
    fn implicit_solve(&self, a: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.nodes;
        let dt = self.final_time / self.time_steps as f64;
        let h = self.spacing();
        let k = dt / (h * h);
        let off = vec![-k; n];
        let diag = vec![a + 2.0 * k; n];
        solve_tridiagonal(&off, &diag, &off, rhs)
    }

    /// State at the final time for a time-independent source.
    pub fn final_state(&self, source: &[f64], initial: &[f64]) -> Result<Vec<f64>> {
        let n = self.nodes;
        for len in [source.len(), initial.len()] {
            if len != n {
                return Err(ForwardError::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        let dt = self.final_time / self.time_steps as f64;
        let mut prev = initial.to_vec();
        let rhs: Vec<f64> = prev.iter().zip(source).map(|(u, f)| u + dt * f).collect();
        let mut cur = self.implicit_solve(1.0, &rhs)?;
        for _ in 1..self.time_steps {
            let next = match self.scheme {
                TimeScheme::BackwardEuler => {
                    let rhs: Vec<f64> = cur.iter().zip(source).map(|(u, f)| u + dt * f).collect();
                    self.implicit_solve(1.0, &rhs)?
                }
                TimeScheme::Bdf2 => {
                    let rhs: Vec<f64> = (0..n)
                        .map(|i| 2.0 * cur[i] - 0.5 * prev[i] + dt * source[i])
                        .collect();
                    self.implicit_solve(1.5, &rhs)?
                }
            };
            prev = std::mem::replace(&mut cur, next);
        }
        Ok(cur)
    }

    /// The initial condition `sin(πx)` on the grid.
    pub fn initial_condition(&self) -> Vec<f64> {
        self.grid().iter().map(|x| (PI * x).sin()).collect()
    }
}

/// Affine source-to-final-state map `f ↦ F f + g` of the heat problem.
#[derive(Debug, Clone)]
pub struct HeatSourceOperator {
    solver: HeatSolver,
    matrix: Matrix,
    init_contrib: Vec<f64>,
}

impl HeatSourceOperator {
    pub fn assemble(nodes: usize, time_steps: usize, final_time: f64) -> Result<Self> {
        Self::assemble_with(HeatSolver::new(
            nodes,
            time_steps,
            final_time,
            TimeScheme::default(),
        )?)
    }

    pub fn assemble_with(solver: HeatSolver) -> Result<Self> {
        let n = solver.nodes();
        let zeros = vec![0.0; n];
        let init_contrib = solver.final_state(&zeros, &solver.initial_condition())?;
        let mut matrix = Matrix::zeros(n, n);
        let mut basis = vec![0.0; n];
        for j in 0..n {
            basis[j] = 1.0;
            matrix.set_column(j, &solver.final_state(&basis, &zeros)?);
            basis[j] = 0.0;
        }
        Ok(HeatSourceOperator {
            solver,
            matrix,
            init_contrib,
        })
    }

    pub fn solver(&self) -> &HeatSolver {
        &self.solver
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn init_contrib(&self) -> &[f64] {
        &self.init_contrib
    }

    pub fn grid(&self) -> Vec<f64> {
        self.solver.grid()
    }

    /// The same map as an explicit affine model.
    pub fn to_linear_model(&self) -> LinearModel {
        LinearModel {
            matrix: self.matrix.clone(),
            offset: Some(self.init_contrib.clone()),
        }
    }
}

impl ForwardModel for HeatSourceOperator {
    fn input_dim(&self) -> usize {
        self.matrix.cols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.rows()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(ForwardError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut out = self.matrix.matvec(x);
        out.iter_mut()
            .zip(&self.init_contrib)
            .for_each(|(o, g)| *o += g);
        Ok(out)
    }

    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        Ok((self.evaluate(x)?, self.matrix.clone()))
    }

    fn constant_jacobian(&self) -> Option<&Matrix> {
        Some(&self.matrix)
    }
}

/// Grid bookkeeping stored with a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    /// Nodes (or intervals for the Neumann problem) of the inversion grid.
    pub inversion: usize,
    /// Same quantity on the data-generation grid.
    pub data: usize,
    /// Coordinates of the observed nodes.
    pub observation_points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub y: Vec<f64>,
    pub noiseless: Vec<f64>,
    pub noise_level: f64,
    pub truth: Vec<f64>,
    pub seed: u64,
    pub grid: GridMeta,
}

fn refinement_factor(coarse_plus: usize, fine_plus: usize) -> Result<usize> {
    if fine_plus <= coarse_plus || !fine_plus.is_multiple_of(coarse_plus) {
        return Err(ForwardError::InvalidArgument(format!(
            "data grid ({fine_plus} cells) must strictly refine the inversion grid ({coarse_plus} cells)"
        )));
    }
    Ok(fine_plus / coarse_plus)
}

fn add_noise(noiseless: &[f64], eps: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(ForwardError::InvalidArgument(format!(
            "noise level must be non-negative, got {eps}"
        )));
    }
    let mut r = rng::seeded(seed);
    Ok(noiseless
        .iter()
        .map(|v| v + eps * rng::standard_normal(&mut r))
        .collect())
}

/// Generates heat-problem data on the fine solver's grid and restricts it to
/// an inversion grid with `inversion_nodes` interior nodes by subsampling.
pub fn heat_synthesize(
    fine: &HeatSolver,
    inversion_nodes: usize,
    truth: &dyn Fn(f64) -> f64,
    eps: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    let k = refinement_factor(inversion_nodes + 1, fine.nodes() + 1)?;
    let source: Vec<f64> = fine.grid().iter().map(|&x| truth(x)).collect();
    let state = fine.final_state(&source, &fine.initial_condition())?;
    let h = 1.0 / (inversion_nodes + 1) as f64;
    let points: Vec<f64> = (1..=inversion_nodes).map(|i| i as f64 * h).collect();
    let noiseless: Vec<f64> = (1..=inversion_nodes).map(|i| state[k * i - 1]).collect();
    let y = add_noise(&noiseless, eps, seed)?;
    Ok(SyntheticDataset {
        y,
        noiseless,
        noise_level: eps,
        truth: points.iter().map(|&x| truth(x)).collect(),
        seed,
        grid: GridMeta {
            inversion: inversion_nodes,
            data: fine.nodes(),
            observation_points: points,
        },
    })
}

/// `q(x; θ) = θ₀ + Σₖ θ_{2k−1} sin(2kπx) + θ_{2k} cos(2kπx)`.
pub fn coefficient_field(theta: &[f64], x: f64) -> f64 {
    let mut q = theta.first().copied().unwrap_or(0.0);
    for (k, pair) in theta[1.min(theta.len())..].chunks(2).enumerate() {
        let w = 2.0 * PI * (k + 1) as f64 * x;
        q += pair[0] * w.sin();
        if let Some(c) = pair.get(1) {
            q += c * w.cos();
        }
    }
    q
}

/// Source that makes `u = cos(πx)` the exact solution for the coefficient
/// field of `theta`.
pub fn manufactured_source(theta: &[f64], x: f64) -> f64 {
    let c = (PI * x).cos();
    coefficient_field(theta, x) * c + PI * PI * c
}

/// Solves `−u'' + q u = f` with zero-flux ends on `intervals` uniform cells
/// (nodes `0..=intervals`), using centred differences and ghost points.
///
/// The boundary rows are halved so that the assembled matrix is symmetric.
pub fn bvp_solve(q: &[f64], f: &[f64], intervals: usize) -> Result<Vec<f64>> {
    let n = intervals + 1;
    if intervals < 2 {
        return Err(ForwardError::InvalidArgument(format!(
            "need at least 2 intervals, got {intervals}"
        )));
    }
    for len in [q.len(), f.len()] {
        if len != n {
            return Err(ForwardError::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    if let Some((i, v)) = q.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(ForwardError::Domain(format!(
            "coefficient q must be positive on the grid, q[{i}] = {v}"
        )));
    }
    let (sub, diag, sup, rhs) = neumann_system(q, f, intervals);
    solve_tridiagonal(&sub, &diag, &sup, &rhs)
}

type Bands = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn neumann_system(q: &[f64], f: &[f64], intervals: usize) -> Bands {
    let n = intervals + 1;
    let h = 1.0 / intervals as f64;
    let k = 1.0 / (h * h);
    let mut sub = vec![-k; n];
    let mut sup = vec![-k; n];
    let mut diag: Vec<f64> = q.iter().map(|qi| 2.0 * k + qi).collect();
    let mut rhs = f.to_vec();
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    for i in [0, n - 1] {
        diag[i] = k + 0.5 * q[i];
        rhs[i] = 0.5 * f[i];
    }
    (sub, diag, sup, rhs)
}

/// Residual `‖A u − b‖_∞` of the symmetric Neumann system.
pub fn bvp_residual(q: &[f64], f: &[f64], intervals: usize, u: &[f64]) -> f64 {
    let (sub, diag, sup, rhs) = neumann_system(q, f, intervals);
    let n = diag.len();
    (0..n)
        .map(|i| {
            let mut r = diag[i] * u[i] - rhs[i];
            if i > 0 {
                r += sub[i] * u[i - 1];
            }
            if i + 1 < n {
                r += sup[i] * u[i + 1];
            }
            r.abs()
        })
        .fold(0.0, f64::max)
}

/// Dense form of the assembled Neumann matrix, for inspection and tests.
pub fn neumann_matrix(q: &[f64], intervals: usize) -> Matrix {
    let (sub, diag, sup, _) = neumann_system(q, &vec![0.0; q.len()], intervals);
    let n = diag.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
        if i > 0 {
            m[(i, i - 1)] = sub[i];
        }
        if i + 1 < n {
            m[(i, i + 1)] = sup[i];
        }
    }
    m
}

/// Coefficient identification: `θ ↦ u(·; q(θ))` at the interior nodes.
#[derive(Debug, Clone)]
pub struct NeumannBvpModel {
    intervals: usize,
    coefficients: usize,
    source: Vec<f64>,
    fd_step: f64,
}

impl NeumannBvpModel {
    /// Model on `intervals` cells with `coefficients` Fourier coefficients
    /// and nodal source values `source` (length `intervals + 1`).
    pub fn new(intervals: usize, coefficients: usize, source: Vec<f64>) -> Result<Self> {
        if coefficients == 0 {
            return Err(ForwardError::InvalidArgument(
                "need at least one coefficient".into(),
            ));
        }
        if source.len() != intervals + 1 {
            return Err(ForwardError::DimensionMismatch {
                expected: intervals + 1,
                found: source.len(),
            });
        }
        Ok(NeumannBvpModel {
            intervals,
            coefficients,
            source,
            fd_step: 1e-6,
        })
    }

    /// Model whose source is manufactured from `theta_true`, so that
    /// `u = cos(πx)` at the truth.
    pub fn manufactured(intervals: usize, theta_true: &[f64]) -> Result<Self> {
        let h = 1.0 / intervals as f64;
        let source = (0..=intervals)
            .map(|i| manufactured_source(theta_true, i as f64 * h))
            .collect();
        Self::new(intervals, theta_true.len(), source)
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = 1.0 / self.intervals as f64;
        (0..=self.intervals).map(|i| i as f64 * h).collect()
    }

    pub fn observation_points(&self) -> Vec<f64> {
        let nodes = self.nodes();
        nodes[1..self.intervals].to_vec()
    }

    pub fn coefficient_on_grid(&self, theta: &[f64]) -> Vec<f64> {
        self.nodes()
            .iter()
            .map(|&x| coefficient_field(theta, x))
            .collect()
    }

    /// Full nodal state for coefficients `theta`.
    pub fn state(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.coefficients {
            return Err(ForwardError::DimensionMismatch {
                expected: self.coefficients,
                found: theta.len(),
            });
        }
        if !all_finite(theta) {
            return Err(ForwardError::Domain("non-finite coefficients".into()));
        }
        bvp_solve(
            &self.coefficient_on_grid(theta),
            &self.source,
            self.intervals,
        )
    }

    pub fn is_admissible(&self, theta: &[f64]) -> bool {
        theta.len() == self.coefficients
            && all_finite(theta)
            && self.coefficient_on_grid(theta).iter().all(|q| *q > 0.0)
    }
}

impl ForwardModel for NeumannBvpModel {
    fn input_dim(&self) -> usize {
        self.coefficients
    }

    fn output_dim(&self) -> usize {
        self.intervals - 1
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.state(x)?;
        Ok(u[1..self.intervals].to_vec())
    }

    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        let base = self.evaluate(x)?;
        let jac = frechet_fd_at(self, x, &base, self.fd_step)?;
        Ok((base, jac))
    }

    fn is_admissible(&self, x: &[f64]) -> bool {
        NeumannBvpModel::is_admissible(self, x)
    }
}

/// Data for the Neumann problem generated on a grid refined by
/// `refinement` and restricted to the inversion grid's interior nodes.
pub fn neumann_synthesize(
    intervals: usize,
    refinement: usize,
    theta_true: &[f64],
    eps: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if refinement < 2 {
        return Err(ForwardError::InvalidArgument(format!(
            "data grid must strictly refine the inversion grid, refinement = {refinement}"
        )));
    }
    let fine = NeumannBvpModel::manufactured(intervals * refinement, theta_true)?;
    let state = fine.state(theta_true)?;
    let h = 1.0 / intervals as f64;
    let points: Vec<f64> = (1..intervals).map(|i| i as f64 * h).collect();
    let noiseless: Vec<f64> = (1..intervals).map(|i| state[i * refinement]).collect();
    let y = add_noise(&noiseless, eps, seed)?;
    Ok(SyntheticDataset {
        y,
        noiseless,
        noise_level: eps,
        truth: theta_true.to_vec(),
        seed,
        grid: GridMeta {
            inversion: intervals,
            data: intervals * refinement,
            observation_points: points,
        },
    })
}

/// One-sided perturbation Jacobian with steps `h·max(1, |θᵢ|)`.
pub fn frechet_fd(model: &dyn ForwardModel, theta: &[f64], h: f64) -> Result<Matrix> {
    let base = model.evaluate(theta)?;
    frechet_fd_at(model, theta, &base, h)
}

/// As [`frechet_fd`] with `F(θ)` already known.
pub fn frechet_fd_at(
    model: &dyn ForwardModel,
    theta: &[f64],
    base: &[f64],
    h: f64,
) -> Result<Matrix> {
    if !(h > 0.0) {
        return Err(ForwardError::InvalidArgument(format!(
            "perturbation step must be positive, got {h}"
        )));
    }
    let mut jac = Matrix::zeros(base.len(), theta.len());
    let mut shifted = theta.to_vec();
    for j in 0..theta.len() {
        let step = h * theta[j].abs().max(1.0);
        shifted[j] = theta[j] + step;
        let value = model
            .evaluate(&shifted)
            .map_err(|e| ForwardError::Jacobian {
                column: j,
                source: Box::new(e),
            })?;
        shifted[j] = theta[j];
        let column: Vec<f64> = value
            .iter()
            .zip(base)
            .map(|(v, b)| (v - b) / step)
            .collect();
        jac.set_column(j, &column);
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solution() {
        let sub = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let sup = [-1.0, -1.0, -1.0, 0.0];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        for i in 0..4 {
            let mut r = diag[i] * x[i] - rhs[i];
            if i > 0 {
                r += sub[i] * x[i - 1];
            }
            if i < 3 {
                r += sup[i] * x[i + 1];
            }
            assert!(r.abs() < 1e-14);
        }
        assert!(matches!(
            solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]),
            Err(ForwardError::Singular(0))
        ));
    }

    #[test]
    fn heat_solver_validates_arguments() {
        assert!(HeatSolver::new(1, 10, 1.0, TimeScheme::Bdf2).is_err());
        assert!(HeatSolver::new(10, 1, 1.0, TimeScheme::Bdf2).is_err());
        assert!(HeatSolver::new(10, 10, 0.0, TimeScheme::Bdf2).is_err());
    }

    #[test]
    fn heat_linearity_is_exact() {
        let op = HeatSourceOperator::assemble(20, 20, 1.0).unwrap();
        let f1: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let f2: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).cos()).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let a = op.matrix().matvec(&f1);
        let b = op.matrix().matvec(&f2);
        let c = op.matrix().matvec(&sum);
        for i in 0..20 {
            assert!((a[i] + b[i] - c[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn heat_columns_match_direct_solves() {
        let op = HeatSourceOperator::assemble(15, 30, 0.5).unwrap();
        let f: Vec<f64> = op.grid().iter().map(|x| x * (1.0 - x)).collect();
        let direct = op
            .solver()
            .final_state(&f, &op.solver().initial_condition())
            .unwrap();
        let via_matrix = op.evaluate(&f).unwrap();
        for (a, b) in direct.iter().zip(&via_matrix) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn synthesis_rejects_non_nested_grids() {
        let fine = HeatSolver::new(29, 10, 1.0, TimeScheme::Bdf2).unwrap();
        let truth = |x: f64| x;
        assert!(heat_synthesize(&fine, 29, &truth, 0.0, 1).is_err());
        assert!(heat_synthesize(&fine, 11, &truth, 0.0, 1).is_err());
        assert!(heat_synthesize(&fine, 14, &truth, 0.0, 1).is_ok());
        assert!(neumann_synthesize(10, 1, &[2.0, 1.0, 1.0], 0.0, 1).is_err());
    }

    #[test]
    fn bvp_rejects_non_positive_coefficient() {
        let q = vec![1.0, 0.0, 1.0];
        let f = vec![1.0; 3];
        assert!(matches!(bvp_solve(&q, &f, 2), Err(ForwardError::Domain(_))));
    }

    #[test]
    fn neumann_matrix_is_symmetric() {
        let model = NeumannBvpModel::manufactured(20, &[2.0, 1.0, 1.0]).unwrap();
        let q = model.coefficient_on_grid(&[2.0, 1.0, 1.0]);
        let m = neumann_matrix(&q, 20);
        assert_eq!(m.max_asymmetry(), 0.0);
    }

    #[test]
    fn coefficient_field_truth() {
        let x: f64 = 0.1;
        let expected = 2.0 + (2.0 * PI * x).sin() + (2.0 * PI * x).cos();
        assert!((coefficient_field(&[2.0, 1.0, 1.0], x) - expected).abs() < 1e-15);
        assert_eq!(coefficient_field(&[3.0], 0.7), 3.0);
    }

    #[test]
    fn jacobian_failure_names_the_column() {
        let model = NeumannBvpModel::manufactured(10, &[2.0, 1.0, 1.0]).unwrap();
        // q(½) = 1e-9; stepping θ₂ up drives it negative
        let theta = [1.0, 0.0, 1.0 - 1e-9];
        let err = frechet_fd(&model, &theta, 1e-6).unwrap_err();
        assert!(matches!(err, ForwardError::Jacobian { column: 2, .. }));
    }
}
