//! Dense linear algebra used by the samplers.
//!
//! Everything here is row-major and dense. Problem sizes are at most a few
//! hundred unknowns, so the rank-one kernels are O(d²) and nothing needs a
//! sparse path.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(alpha: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, found })
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// `u vᵀ`
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn transpose(&self) -> Matrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ x`
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        out
    }

    /// `A Aᵀ`
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: scaled(alpha, &self.data),
        }
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scale(-1.0))
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    /// `A += alpha u vᵀ`
    pub fn rank_one_mut(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let c = alpha * ui;
            if c != 0.0 {
                let cols = self.cols;
                axpy(c, v, &mut self.data[i * cols..(i + 1) * cols]);
            }
        }
    }

    /// `(A + Aᵀ)/2`, in place.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `uᵀ A u`
    pub fn quad_form(&self, u: &[f64]) -> f64 {
        dot(u, &self.matvec(u))
    }
}

/// Lower Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(LinalgError::InvalidArgument(format!(
                "cholesky needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(LinalgError::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// `L x`
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| dot(&self.lower.row(i)[..=i], &x[..=i]))
            .collect()
    }

    /// `Lᵀ x`
    pub fn mul_lower_t(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, &self.lower.row(i)[..=i], &mut out[..=i]);
        }
        out
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut z = b.to_vec();
        for i in 0..n {
            let row = self.lower.row(i);
            let s = dot(&row[..i], &z[..i]);
            z[i] = (z[i] - s) / row[i];
        }
        z
    }

    /// Solves `Lᵀ z = b`.
    pub fn solve_lower_t(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut z = b.to_vec();
        for i in (0..n).rev() {
            z[i] /= self.lower[(i, i)];
            let zi = z[i];
            for k in 0..i {
                z[k] -= self.lower[(i, k)] * zi;
            }
        }
        z
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_lower_t(&self.solve_lower(b))
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
            e[j] = 0.0;
        }
        inv.symmetrize();
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Replaces the factor of `A` by the factor of `A + v vᵀ` in O(n²).
    pub fn rank_one_update(&mut self, v: &[f64]) {
        let n = self.dim();
        let mut w = v.to_vec();
        for k in 0..n {
            let lkk = self.lower[(k, k)];
            let r = lkk.hypot(w[k]);
            let c = r / lkk;
            let s = w[k] / lkk;
            self.lower[(k, k)] = r;
            for i in k + 1..n {
                let lik = (self.lower[(i, k)] + s * w[i]) / c;
                w[i] = c * w[i] - s * lik;
                self.lower[(i, k)] = lik;
            }
        }
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        self.lower.scale_mut(alpha);
    }
}

/// Square-root factor `R` of a preconditioner `M = R Rᵀ`.
///
/// `R` is in general neither triangular nor symmetric. It is built from the
/// damped initialization and then corrected by rank-one terms so that after
/// signals `s₁..sₙ` the product `R Rᵀ` equals `(λI + Σ sᵢsᵢᵀ)⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqrtPreconditioner {
    factor: Matrix,
}

impl SqrtPreconditioner {
    pub fn identity(dim: usize) -> Self {
        SqrtPreconditioner {
            factor: Matrix::identity(dim),
        }
    }

    pub fn from_factor(factor: Matrix) -> Result<Self> {
        if !factor.is_square() {
            return Err(LinalgError::InvalidArgument(
                "square-root factor must be square".into(),
            ));
        }
        Ok(SqrtPreconditioner { factor })
    }

    /// `R₁` with `R₁R₁ᵀ = (s₁s₁ᵀ + λI)⁻¹`.
    pub fn init(s1: &[f64], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LinalgError::InvalidArgument(format!(
                "damping must be positive, got {lambda}"
            )));
        }
        if !all_finite(s1) {
            return Err(LinalgError::InvalidArgument(
                "initial signal has non-finite entries".into(),
            ));
        }
        let d = s1.len();
        let ss = dot(s1, s1);
        let denom = lambda + ss;
        let r1 = 1.0 / (1.0 + (lambda / denom).sqrt());
        let mut factor = Matrix::identity(d);
        factor.rank_one_mut(-r1 / denom, s1, s1);
        factor.scale_mut(1.0 / lambda.sqrt());
        Ok(SqrtPreconditioner { factor })
    }

    /// Rank-one correction taking `R Rᵀ = M` to `(M⁻¹ + s sᵀ)⁻¹`.
    pub fn update(&mut self, s: &[f64]) {
        debug_assert_eq!(s.len(), self.dim());
        let phi = self.factor.matvec_t(s);
        let phi_sq = dot(&phi, &phi);
        if phi_sq == 0.0 {
            return;
        }
        let r = 1.0 / (1.0 + (1.0 / (1.0 + phi_sq)).sqrt());
        let r_phi = self.factor.matvec(&phi);
        self.factor.rank_one_mut(-r / (1.0 + phi_sq), &r_phi, &phi);
    }

    pub fn updated(&self, s: &[f64]) -> Self {
        let mut next = self.clone();
        next.update(s);
        next
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// `R v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.factor.matvec(v)
    }

    /// `Rᵀ v`
    pub fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        self.factor.matvec_t(v)
    }

    /// `M v = R (Rᵀ v)`
    pub fn precondition(&self, v: &[f64]) -> Vec<f64> {
        self.apply(&self.apply_t(v))
    }

    /// `M = R Rᵀ`
    pub fn covariance(&self) -> Matrix {
        self.factor.gram()
    }

    /// `tr(R Rᵀ) = ‖R‖²_F`
    pub fn trace(&self) -> f64 {
        dot(self.factor.as_slice(), self.factor.as_slice())
    }
}

/// Woodbury form of the same update on the full matrix:
/// `M − M s sᵀ M / (1 + sᵀ M s)`, symmetrized.
pub fn woodbury_update(m: &Matrix, s: &[f64]) -> Matrix {
    let ms = m.matvec(s);
    let denom = 1.0 + dot(s, &ms);
    let mut out = m.clone();
    out.rank_one_mut(-1.0 / denom, &ms, &ms);
    out.symmetrize();
    out
}

/// Rescales a matrix so that its trace equals its dimension.
pub fn trace_normalize(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(LinalgError::InvalidArgument(
            "trace normalization needs a square matrix".into(),
        ));
    }
    let tr = m.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(LinalgError::InvalidArgument(format!(
            "trace must be positive, got {tr}"
        )));
    }
    Ok(m.scale(m.rows() as f64 / tr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.sub(b).frobenius_norm() <= tol * b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn sqrt_init_zero_signal_is_pure_damping() {
        let r = SqrtPreconditioner::init(&[0.0; 3], 4.0).unwrap();
        assert_eq!(r.factor(), &Matrix::identity(3).scale(0.5));
    }

    #[test]
    fn sqrt_init_axis_signal() {
        let r = SqrtPreconditioner::init(&[1.0, 0.0], 1.0).unwrap();
        let expected = Matrix::from_diag(&[0.5f64.sqrt(), 1.0]);
        assert!(close(r.factor(), &expected, 1e-14));
        assert!(close(
            &r.covariance(),
            &Matrix::from_diag(&[0.5, 1.0]),
            1e-14
        ));
    }

    #[test]
    fn sqrt_init_ones_matches_explicit_inverse() {
        // (11ᵀ + 10 I)⁻¹ = (I − 11ᵀ/13)/10
        let r = SqrtPreconditioner::init(&[1.0, 1.0, 1.0], 10.0).unwrap();
        let expected = Matrix::from_fn(3, 3, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            (delta - 1.0 / 13.0) / 10.0
        });
        let m = r.covariance();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[(i, j)] - expected[(i, j)]).abs() <= 1e-10 * expected[(i, j)].abs());
            }
        }
    }

    #[test]
    fn sqrt_init_rejects_bad_damping() {
        assert!(matches!(
            SqrtPreconditioner::init(&[1.0], 0.0),
            Err(LinalgError::InvalidArgument(_))
        ));
        assert!(SqrtPreconditioner::init(&[1.0], -2.0).is_err());
        assert!(SqrtPreconditioner::init(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn sqrt_update_zero_signal_is_identity_map() {
        let r = SqrtPreconditioner::init(&[0.3, -1.0], 2.0).unwrap();
        assert_eq!(r.updated(&[0.0, 0.0]), r);
    }

    #[test]
    fn sqrt_update_from_identity() {
        let r = SqrtPreconditioner::identity(2).updated(&[1.0, 0.0]);
        assert!(close(
            &r.covariance(),
            &Matrix::from_diag(&[0.5, 1.0]),
            1e-14
        ));
    }

    #[test]
    fn woodbury_examples() {
        let m = Matrix::identity(2);
        assert_eq!(woodbury_update(&m, &[0.0, 0.0]), m);
        assert!(close(
            &woodbury_update(&m, &[1.0, 0.0]),
            &Matrix::from_diag(&[0.5, 1.0]),
            1e-15
        ));
        // (diag(1/2, 1) + 11ᵀ)⁻¹ = [[2, -1], [-1, 1.5]] / 2
        let m = Matrix::from_diag(&[2.0, 1.0]);
        let expected = Matrix::from_rows(&[vec![1.0, -0.5], vec![-0.5, 0.75]]);
        assert!(close(&woodbury_update(&m, &[1.0, 1.0]), &expected, 1e-10));
    }

    #[test]
    fn trace_normalize_examples() {
        assert_eq!(
            trace_normalize(&Matrix::identity(4)).unwrap(),
            Matrix::identity(4)
        );
        let a = Matrix::from_diag(&[2.0, 0.0]);
        assert_eq!(trace_normalize(&a).unwrap(), a);
        assert_eq!(
            trace_normalize(&Matrix::from_diag(&[4.0, 0.0])).unwrap(),
            Matrix::from_diag(&[2.0, 0.0])
        );
        assert!(trace_normalize(&Matrix::zeros(2, 2)).is_err());
        assert!(trace_normalize(&Matrix::from_diag(&[-1.0, 0.5])).is_err());
    }

    #[test]
    fn cholesky_solve_and_update() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ]);
        let ch = Cholesky::factor(&a).unwrap();
        assert!(close(&ch.lower().gram(), &a, 1e-14));
        let b = [1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
        let v = [0.3, -1.1, 0.7];
        let mut up = ch.clone();
        up.rank_one_update(&v);
        let target = a.add(&Matrix::outer(&v, &v));
        assert!(close(&up.lower().gram(), &target, 1e-13));
        let lx = ch.mul_lower(&b);
        assert!(lx
            .iter()
            .zip(ch.lower().matvec(&b))
            .all(|(p, q)| (p - q).abs() < 1e-14));
        let ltx = ch.mul_lower_t(&b);
        assert!(ltx
            .iter()
            .zip(ch.lower().matvec_t(&b))
            .all(|(p, q)| (p - q).abs() < 1e-14));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            Cholesky::factor(&a),
            Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }
}
