//! Periodic grids on the unit torus `[0,1)^2` and their discrete Laplacians.
//!
//! Convention shared by every engine: for a potential `phi` in complex
//! dimension one, `i ddbar phi` corresponds to `(1/2) Delta phi dx ^ dy` with
//! `Delta = d_xx + d_yy`. [`SpectralOps::half_laplacian`] is that operator.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("grid size {0} must be a power of two and at least 16")]
    BadSize(usize),
    #[error("field has {found} values, grid needs {expected}")]
    SizeMismatch { expected: usize, found: usize },
}

/// `n x n` uniform grid on the unit torus, spacing `h = 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    pub const MIN_SIZE: usize = 16;

    pub fn new(n: usize) -> Result<Self, GridError> {
        if n < Self::MIN_SIZE || !n.is_power_of_two() {
            return Err(GridError::BadSize(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing<T: Real>(&self) -> T {
        T::one() / T::from_count(self.n)
    }

    /// Row-major index; `i` runs along x, `j` along y.
    pub fn index(&self, i: usize, j: usize) -> usize {
        (j % self.n) * self.n + (i % self.n)
    }

    pub fn point<T: Real>(&self, index: usize) -> (T, T) {
        let h = self.spacing::<T>();
        (T::from_count(index % self.n) * h, T::from_count(index / self.n) * h)
    }

    /// Periodic distance between two points of the torus.
    pub fn torus_distance<T: Real>(a: (T, T), b: (T, T)) -> T {
        let wrap = |d: T| {
            let d = d - d.round();
            d.abs()
        };
        let (dx, dy) = (wrap(a.0 - b.0), wrap(a.1 - b.1));
        (dx * dx + dy * dy).sqrt()
    }
}

/// Real values on a [`PeriodicGrid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: PeriodicGrid,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: PeriodicGrid, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::SizeMismatch { expected: grid.len(), found: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: PeriodicGrid, value: T) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(T, T) -> T) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.point(k);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[self.grid.index(i, j)]
    }

    /// Integral over the unit torus, i.e. the grid mean. Summed in index order.
    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_count(self.values.len())
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `int |f|`
    pub fn l1_norm(&self) -> T {
        self.values.iter().map(|v| v.abs()).sum::<T>() / T::from_count(self.values.len())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn shift(&self, c: T) -> Self {
        self.map(|v| v + c)
    }

    /// `max |self - other|`
    pub fn sup_distance(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect() }
    }
}

/// Which discrete Laplacian the spectral machinery diagonalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// Exact Laplacian of the trigonometric interpolant.
    #[default]
    Spectral,
    /// Five-point second-order stencil.
    FiniteDifference,
}

/// FFT plans and Laplacian symbols for one grid.
#[derive(Clone)]
pub struct SpectralOps<T: Real> {
    grid: PeriodicGrid,
    kind: LaplacianKind,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    /// Eigenvalue of `Delta` per mode, indexed `[kx * n + ky]` (symmetric).
    symbol: Vec<T>,
    wavenumbers: Vec<usize>,
}

impl<T: Real> std::fmt::Debug for SpectralOps<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOps").field("grid", &self.grid).field("kind", &self.kind).finish()
    }
}

impl<T: Real> SpectralOps<T> {
    pub fn new(grid: PeriodicGrid, kind: LaplacianKind) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let wavenumbers: Vec<usize> = (0..n).map(|m| if m <= n / 2 { m } else { n - m }).collect();
        let two_pi = T::TAU();
        let h = grid.spacing::<T>();
        let one_d: Vec<T> = wavenumbers
            .iter()
            .map(|&k| {
                let k = T::from_count(k);
                match kind {
                    LaplacianKind::Spectral => -(two_pi * k).powi(2),
                    LaplacianKind::FiniteDifference => {
                        let s = (T::PI() * k * h).sin();
                        -T::lit(4.0) * s * s / (h * h)
                    }
                }
            })
            .collect();
        let mut symbol = vec![T::zero(); n * n];
        for a in 0..n {
            for b in 0..n {
                symbol[a * n + b] = one_d[a] + one_d[b];
            }
        }
        Self { grid, kind, forward, inverse, symbol, wavenumbers }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    /// Largest eigenvalue magnitude of `Delta`.
    pub fn spectral_radius(&self) -> T {
        self.symbol.iter().fold(T::zero(), |m, s| m.max(s.abs()))
    }

    fn transpose(&self, buf: &mut [Complex<T>]) {
        let n = self.grid.n();
        for r in 0..n {
            for c in r + 1..n {
                buf.swap(r * n + c, c * n + r);
            }
        }
    }

    /// Forward transform; the result is laid out `[kx * n + ky]`.
    fn forward(&self, values: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        self.transpose(&mut buf);
        self.forward.process(&mut buf);
        buf
    }

    fn inverse(&self, mut buf: Vec<Complex<T>>) -> Vec<T> {
        self.inverse.process(&mut buf);
        self.transpose(&mut buf);
        self.inverse.process(&mut buf);
        let norm = T::one() / T::from_count(self.grid.len());
        buf.into_iter().map(|c| c.re * norm).collect()
    }

    fn multiply(&self, field: &ScalarField<T>, multiplier: impl Fn(usize, T) -> T) -> ScalarField<T> {
        assert_eq!(field.grid(), self.grid, "field grid differs from operator grid");
        let mut hat = self.forward(field.values());
        for (k, c) in hat.iter_mut().enumerate() {
            *c = *c * multiplier(k, self.symbol[k]);
        }
        ScalarField { grid: self.grid, values: self.inverse(hat) }
    }

    pub fn laplacian(&self, field: &ScalarField<T>) -> ScalarField<T> {
        self.multiply(field, |_, s| s)
    }

    /// `(1/2) Delta`, the local model of `i ddbar`.
    pub fn half_laplacian(&self, field: &ScalarField<T>) -> ScalarField<T> {
        let half = T::lit(0.5);
        self.multiply(field, |_, s| half * s)
    }

    /// Mean-free `u` with `Delta u = rhs - mean(rhs)`.
    pub fn solve_poisson(&self, rhs: &ScalarField<T>) -> ScalarField<T> {
        self.multiply(rhs, |k, s| if k == 0 { T::zero() } else { T::one() / s })
    }

    /// `u` with `(a - b (1/2) Delta) u = rhs`, for `a > 0`, `b >= 0`.
    pub fn solve_shifted(&self, a: T, b: T, rhs: &ScalarField<T>) -> ScalarField<T> {
        let half = T::lit(0.5);
        self.multiply(rhs, |_, s| T::one() / (a - b * half * s))
    }

    /// Keeps modes with `|kx|, |ky| <= cutoff`.
    pub fn low_pass(&self, field: &ScalarField<T>, cutoff: usize) -> ScalarField<T> {
        let n = self.grid.n();
        self.multiply(field, |k, _| {
            if self.wavenumbers[k / n] <= cutoff && self.wavenumbers[k % n] <= cutoff {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator. Returns the iterate and the iteration count; stops when the
/// residual 2-norm drops below `rtol * |b|`.
pub fn conjugate_gradient<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    precondition: impl Fn(&[T]) -> Vec<T>,
    b: &[T],
    rtol: T,
    max_iter: usize,
) -> (Vec<T>, usize, T) {
    let dot = |u: &[T], v: &[T]| u.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![T::zero(); b.len()];
    if b_norm == T::zero() {
        return (x, 0, T::zero());
    }
    let mut r = b.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = b_norm;
    for it in 0..max_iter {
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] = x[k] + alpha * p[k];
            r[k] = r[k] - alpha * ap[k];
        }
        res = dot(&r, &r).sqrt();
        if res <= rtol * b_norm {
            return (x, it + 1, res / b_norm);
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..p.len() {
            p[k] = z[k] + beta * p[k];
        }
    }
    (x, max_iter, res / b_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    #[test]
    fn grid_sizes() {
        assert!(PeriodicGrid::new(16).is_ok());
        assert_eq!(PeriodicGrid::new(8), Err(GridError::BadSize(8)));
        assert_eq!(PeriodicGrid::new(48), Err(GridError::BadSize(48)));
    }

    #[test]
    fn half_laplacian_on_fourier_modes() {
        let g = grid(32);
        let ops = SpectralOps::<f64>::new(g, LaplacianKind::Spectral);
        let tau = std::f64::consts::TAU;
        for (kx, ky) in [(1, 0), (0, 3), (2, 5), (16, 0)] {
            let f = ScalarField::from_fn(g, |x: f64, y: f64| (tau * (kx as f64 * x + ky as f64 * y)).cos());
            let lap = ops.half_laplacian(&f);
            let factor = -0.5 * tau * tau * (kx * kx + ky * ky) as f64;
            assert_abs_diff_eq!(lap.sup_distance(&f.scale(factor)), 0.0, epsilon = 1e-9 * factor.abs());
        }
    }

    #[test]
    fn finite_difference_matches_stencil() {
        let g = grid(16);
        let ops = SpectralOps::<f64>::new(g, LaplacianKind::FiniteDifference);
        let f = ScalarField::from_fn(g, |x: f64, y: f64| (x * 7.0).sin() * (1.0 + y * y) + (13.0 * x * y).cos());
        let lap = ops.laplacian(&f);
        let n = g.n();
        let h2 = (1.0 / n as f64).powi(2);
        for j in 0..n {
            for i in 0..n {
                let stencil = (f.get(i + 1, j) + f.get(i + n - 1, j) + f.get(i, j + 1) + f.get(i, j + n - 1)
                    - 4.0 * f.get(i, j))
                    / h2;
                assert_abs_diff_eq!(lap.get(i, j), stencil, epsilon = 1e-8 * stencil.abs().max(1.0));
            }
        }
    }

    #[test]
    fn poisson_inverts_laplacian() {
        let g = grid(32);
        let ops = SpectralOps::<f64>::new(g, LaplacianKind::Spectral);
        let u = ScalarField::from_fn(g, |x: f64, y: f64| {
            (std::f64::consts::TAU * x).sin() + (std::f64::consts::TAU * 2.0 * y).cos()
        });
        let back = ops.solve_poisson(&ops.laplacian(&u));
        assert_abs_diff_eq!(back.sup_distance(&u), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ops.laplacian(&u).mean(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn shifted_solve_and_low_pass() {
        let g = grid(16);
        let ops = SpectralOps::<f64>::new(g, LaplacianKind::Spectral);
        let f = ScalarField::from_fn(g, |x: f64, y: f64| {
            1.0 + (std::f64::consts::TAU * 3.0 * x).cos() * (std::f64::consts::TAU * y).sin()
        });
        let u = ops.solve_shifted(2.0, 0.5, &f);
        let back = u.scale(2.0).sub(&ops.half_laplacian(&u).scale(0.5));
        assert_abs_diff_eq!(back.sup_distance(&f), 0.0, epsilon = 1e-12);
        let low = ops.low_pass(&f, 2);
        assert_abs_diff_eq!(low.sup_distance(&ScalarField::constant(g, 1.0)), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ops.low_pass(&f, 3).sup_distance(&f), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_gradient_solves_spd_system() {
        // 1D diag(2) + tridiagonal(-1) system
        let n = 50;
        let apply = |x: &[f64]| {
            (0..n)
                .map(|i| 3.0 * x[i] - if i > 0 { x[i - 1] } else { 0.0 } - if i + 1 < n { x[i + 1] } else { 0.0 })
                .collect::<Vec<_>>()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (x, iters, res) = conjugate_gradient(apply, |r| r.to_vec(), &b, 1e-12, 200);
        assert!(iters < 200 && res <= 1e-12);
        let ax = apply(&x);
        for i in 0..n {
            assert_abs_diff_eq!(ax[i], b[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn torus_distance_wraps() {
        let d = PeriodicGrid::torus_distance((0.95f64, 0.5), (0.05, 0.5));
        assert_abs_diff_eq!(d, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn single_precision_laplacian() {
        let g = grid(16);
        let ops = SpectralOps::<f32>::new(g, LaplacianKind::Spectral);
        let f = ScalarField::from_fn(g, |x: f32, _| (std::f32::consts::TAU * x).cos());
        let lap = ops.half_laplacian(&f);
        let factor = -0.5 * std::f32::consts::TAU.powi(2);
        assert!(lap.sup_distance(&f.scale(factor)) < 1e-4);
    }
}
