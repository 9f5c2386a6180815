//! Static Monge-Ampere problems on the periodic model.
//!
//! With `i ddbar phi <-> (1/2) Delta phi` the mass-prescription equation
//! `g0 + (1/2) Delta phi = c F` is linear and is solved by one Fourier
//! inversion. The semilinear fixed point `chi + (1/2) Delta phi = e^phi F`
//! is solved by damped Newton with a preconditioned CG inner solve.

use thiserror::Error;

use crate::grid::{conjugate_gradient, GridError, ScalarField, SpectralOps};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipticError {
    #[error("density has zero or negative mass ({0})")]
    ZeroMassF(f64),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("Newton iteration diverged after {iterations} steps (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("metric density not positive at solution (min {0:e})")]
    NonpositiveDensityAtSolution(f64),
    #[error("residual {residual:e} above tolerance {tol:e}")]
    ResidualAboveTolerance { residual: f64, tol: f64 },
    #[error("non-finite input field")]
    NonFinite,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticSolution<T> {
    pub phi: ScalarField<T>,
    /// Mass normalization constant (`1` for the semilinear problem).
    pub c: T,
    /// Max-norm of the discrete equation.
    pub residual: T,
    pub iterations: usize,
    /// Minimum of the metric density `g0 + (1/2) Delta phi`.
    pub min_density: T,
}

impl<T: Real> EllipticSolution<T> {
    pub fn is_positive(&self) -> bool {
        self.min_density > T::zero()
    }
}

fn check_grids<T: Real>(ops: &SpectralOps<T>, fields: &[&ScalarField<T>]) -> Result<(), EllipticError> {
    for f in fields {
        if f.grid() != ops.grid() {
            return Err(GridError::SizeMismatch { expected: ops.grid().len(), found: f.grid().len() }.into());
        }
        if !f.is_finite() {
            return Err(EllipticError::NonFinite);
        }
    }
    Ok(())
}

/// Solves `g0 + (1/2) Delta phi = c F` with `c = mean(g0) / mean(F)` and
/// `mean(phi) = 0`. Positivity of `g0 + (1/2) Delta phi` is reported in
/// `min_density`, not enforced.
pub fn solve_linear_ma<T: Real>(
    ops: &SpectralOps<T>,
    g0: &ScalarField<T>,
    f: &ScalarField<T>,
    tol: T,
) -> Result<EllipticSolution<T>, EllipticError> {
    if !(tol > T::zero()) {
        return Err(EllipticError::BadTolerance);
    }
    check_grids(ops, &[g0, f])?;
    let mass = f.mean();
    if !(mass > T::zero()) {
        return Err(EllipticError::ZeroMassF(mass.to_f64_lossy()));
    }
    let c = g0.mean() / mass;
    let rhs = f.scale(c).sub(g0).scale(T::lit(2.0));
    let phi = ops.solve_poisson(&rhs);
    let phi = phi.shift(-phi.mean());
    let density = g0.add(&ops.half_laplacian(&phi));
    let residual = density.sup_distance(&f.scale(c));
    // the residual is relative to the scale of the data near poles
    let scale = T::one().max(f.scale(c).max_abs());
    if residual > tol * scale {
        return Err(EllipticError::ResidualAboveTolerance {
            residual: residual.to_f64_lossy(),
            tol: tol.to_f64_lossy(),
        });
    }
    Ok(EllipticSolution { phi, c, residual, iterations: 1, min_density: density.min() })
}

/// Solves `chi + (1/2) Delta phi = e^phi F`.
pub fn solve_semilinear_ma<T: Real>(
    ops: &SpectralOps<T>,
    chi: &ScalarField<T>,
    f: &ScalarField<T>,
    tol: T,
) -> Result<EllipticSolution<T>, EllipticError> {
    if !(tol > T::zero()) {
        return Err(EllipticError::BadTolerance);
    }
    check_grids(ops, &[chi, f])?;
    if !(f.min() > T::zero()) {
        return Err(EllipticError::ZeroMassF(f.min().to_f64_lossy()));
    }
    let start = (chi.mean() / f.mean()).ln();
    if !start.is_finite() {
        return Err(EllipticError::ZeroMassF(chi.mean().to_f64_lossy()));
    }
    let residual_of = |phi: &ScalarField<T>| {
        let lhs = chi.add(&ops.half_laplacian(phi));
        let rhs = phi.map(|p| p.exp()).mul(f);
        rhs.sub(&lhs)
    };
    let mut phi = ScalarField::constant(ops.grid(), start);
    let mut res = residual_of(&phi);
    let mut norm = res.max_abs();
    let max_newton = 100;
    let mut iterations = 0;
    while norm > tol {
        if iterations == max_newton {
            return Err(EllipticError::NewtonDiverged { iterations, residual: norm.to_f64_lossy() });
        }
        iterations += 1;
        let weight = phi.map(|p| p.exp()).mul(f);
        let shift = weight.mean();
        let grid = ops.grid();
        let apply = |v: &[T]| {
            let field = ScalarField::new(grid, v.to_vec()).expect("grid length");
            weight.mul(&field).sub(&ops.half_laplacian(&field)).into_values()
        };
        let precondition = |v: &[T]| {
            let field = ScalarField::new(grid, v.to_vec()).expect("grid length");
            ops.solve_shifted(shift, T::one(), &field).into_values()
        };
        let rhs: Vec<T> = res.values().iter().map(|&r| -r).collect();
        let inner_tol = T::lit(1e-3).min(norm).max(T::epsilon() * T::lit(16.0));
        let (delta, _, _) = conjugate_gradient(apply, precondition, &rhs, inner_tol, 500);
        let delta = ScalarField::new(grid, delta)?;
        let mut step = T::one();
        let mut halvings = 0;
        loop {
            let trial = phi.add(&delta.scale(step));
            let trial_res = residual_of(&trial);
            let trial_norm = trial_res.max_abs();
            if trial_norm.is_finite() && trial_norm < norm {
                phi = trial;
                res = trial_res;
                norm = trial_norm;
                break;
            }
            if halvings == 30 {
                return Err(EllipticError::NewtonDiverged { iterations, residual: norm.to_f64_lossy() });
            }
            halvings += 1;
            step = step * T::lit(0.5);
        }
    }
    let density = chi.add(&ops.half_laplacian(&phi));
    let min_density = density.min();
    if !(min_density > T::zero()) {
        return Err(EllipticError::NonpositiveDensityAtSolution(min_density.to_f64_lossy()));
    }
    Ok(EllipticSolution { phi, c: T::one(), residual: norm, iterations, min_density })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow<T> {
    pub pair_id: usize,
    pub l1: T,
    pub linf: T,
    /// `None` when `f = g` (the ratio is 0/0).
    pub ratio: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport<T> {
    pub exponent: T,
    pub rows: Vec<StabilityRow<T>>,
    /// Largest observed ratio.
    pub fitted_c: T,
    pub skipped: Vec<usize>,
}

impl<T: Real> StabilityReport<T> {
    pub fn notes(&self) -> Vec<String> {
        self.skipped.iter().map(|id| format!("pair {id}: f = g, ratio 0/0 skipped")).collect()
    }
}

/// Solves the linear problem for `f` and `g` (each rescaled to `mean(g0)`)
/// and compares potentials normalized so `max(phi - psi) = max(psi - phi)`.
pub fn stability_experiment<T: Real>(
    ops: &SpectralOps<T>,
    g0: &ScalarField<T>,
    pairs: &[(ScalarField<T>, ScalarField<T>)],
    epsilon: T,
) -> Result<StabilityReport<T>, EllipticError> {
    let exponent = T::one() / (T::lit(4.0) + epsilon);
    let target = g0.mean();
    let tol = T::lit(1e-8);
    let mut rows = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for (id, (f, g)) in pairs.iter().enumerate() {
        check_grids(ops, &[f, g])?;
        let rescale = |h: &ScalarField<T>| -> Result<ScalarField<T>, EllipticError> {
            let m = h.mean();
            if !(m > T::zero()) {
                return Err(EllipticError::ZeroMassF(m.to_f64_lossy()));
            }
            Ok(h.scale(target / m))
        };
        let (f, g) = (rescale(f)?, rescale(g)?);
        let phi = solve_linear_ma(ops, g0, &f, tol)?.phi;
        let psi = solve_linear_ma(ops, g0, &g, tol)?.phi;
        let diff = phi.sub(&psi);
        let mid = (diff.max() + diff.min()) * T::lit(0.5);
        let linf = diff.shift(-mid).max_abs();
        let l1 = f.sub(&g).l1_norm();
        let ratio = if l1 > T::zero() {
            Some(linf / l1.powf(exponent))
        } else {
            skipped.push(id);
            None
        };
        rows.push(StabilityRow { pair_id: id, l1, linf, ratio });
    }
    let fitted_c = rows.iter().filter_map(|r| r.ratio).fold(T::zero(), T::max);
    Ok(StabilityReport { exponent, rows, fitted_c, skipped })
}

/// Pairs `(base + delta (bump - 1), base)` for a normalized Gaussian bump
/// of the given width, one per `delta`. Equal means by construction.
pub fn bump_pairs<T: Real>(
    base: &ScalarField<T>,
    center: (T, T),
    width: T,
    deltas: &[T],
) -> Vec<(ScalarField<T>, ScalarField<T>)> {
    let grid = base.grid();
    let raw = ScalarField::from_fn(grid, |x, y| {
        let d = crate::grid::PeriodicGrid::torus_distance((x, y), center);
        (-(d * d) / (T::lit(2.0) * width * width)).exp()
    });
    let bump = raw.scale(T::one() / raw.mean()).shift(-T::one());
    deltas.iter().map(|&d| (base.add(&bump.scale(d)), base.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{LaplacianKind, PeriodicGrid};
    use approx::assert_abs_diff_eq;

    fn ops(n: usize) -> SpectralOps<f64> {
        SpectralOps::new(PeriodicGrid::new(n).unwrap(), LaplacianKind::Spectral)
    }

    #[test]
    fn linear_trivial() {
        let o = ops(16);
        let one = ScalarField::constant(o.grid(), 1.0);
        let sol = solve_linear_ma(&o, &one, &one, 1e-12).unwrap();
        assert_eq!(sol.c, 1.0);
        assert!(sol.phi.max_abs() < 1e-15);
    }

    #[test]
    fn linear_single_mode() {
        let o = ops(32);
        let eps = 0.1;
        let tau = std::f64::consts::TAU;
        let g0 = ScalarField::constant(o.grid(), 1.0);
        let f = ScalarField::from_fn(o.grid(), |x: f64, _| 1.0 + 0.5 * eps * (tau * x).cos());
        let sol = solve_linear_ma(&o, &g0, &f, 1e-12).unwrap();
        assert_abs_diff_eq!(sol.c, 1.0, epsilon = 1e-15);
        let exact = ScalarField::from_fn(o.grid(), |x: f64, _| -eps / (tau * tau) * (tau * x).cos());
        assert_abs_diff_eq!(sol.phi.sup_distance(&exact), 0.0, epsilon = 1e-14);
        assert!(sol.is_positive());
    }

    #[test]
    fn linear_mass_compatibility_and_zero_mass() {
        let o = ops(32);
        let g0 = ScalarField::from_fn(o.grid(), |x: f64, y: f64| 2.0 + (6.0 * x).sin() * (4.0 * y).cos());
        let f = ScalarField::from_fn(o.grid(), |x: f64, y: f64| 1.0 + 0.5 * (x * y * 9.0).cos());
        let sol = solve_linear_ma(&o, &g0, &f, 1e-10).unwrap();
        let density = g0.add(&o.half_laplacian(&sol.phi));
        assert_abs_diff_eq!(density.mean(), f.scale(sol.c).mean(), epsilon = 1e-14);
        assert_abs_diff_eq!(sol.phi.mean(), 0.0, epsilon = 1e-15);
        let zero = ScalarField::zeros(o.grid());
        assert!(matches!(solve_linear_ma(&o, &g0, &zero, 1e-10), Err(EllipticError::ZeroMassF(_))));
    }

    #[test]
    fn semilinear_constants() {
        let o = ops(16);
        let one = ScalarField::constant(o.grid(), 1.0);
        let sol = solve_semilinear_ma(&o, &one, &one, 1e-12).unwrap();
        assert!(sol.phi.max_abs() < 1e-15);
        let e = ScalarField::constant(o.grid(), std::f64::consts::E);
        let sol = solve_semilinear_ma(&o, &one, &e, 1e-12).unwrap();
        assert_abs_diff_eq!(sol.phi.sup_distance(&ScalarField::constant(o.grid(), -1.0)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn semilinear_residual_and_positivity() {
        let o = ops(64);
        let chi =
            ScalarField::from_fn(o.grid(), |x: f64, y: f64| 1.0 + 0.4 * (std::f64::consts::TAU * (x + 2.0 * y)).sin());
        let f = ScalarField::from_fn(o.grid(), |x: f64, _| 1.5 + (std::f64::consts::TAU * x).cos());
        let sol = solve_semilinear_ma(&o, &chi, &f, 1e-11).unwrap();
        assert!(sol.residual <= 1e-11);
        assert!(sol.min_density > 0.0);
        assert!(sol.iterations < 30);
    }

    #[test]
    fn linear_is_deterministic() {
        let o = ops(64);
        let g0 = ScalarField::constant(o.grid(), 1.0);
        let f = ScalarField::from_fn(o.grid(), |x: f64, y: f64| 1.0 + 0.3 * (7.0 * x + 3.0 * y).sin().powi(2));
        let a = solve_linear_ma(&o, &g0, &f, 1e-10).unwrap();
        let b = solve_linear_ma(&o, &g0, &f.clone(), 1e-10).unwrap();
        assert_eq!(a.phi.values(), b.phi.values());
    }

    #[test]
    fn stability_skips_equal_pairs() {
        let o = ops(32);
        let g0 = ScalarField::constant(o.grid(), 1.0);
        let f = ScalarField::from_fn(o.grid(), |x: f64, _| 1.0 + 0.2 * (std::f64::consts::TAU * x).cos());
        let report = stability_experiment(&o, &g0, &[(f.clone(), f.clone())], 0.05).unwrap();
        assert_eq!(report.skipped, vec![0]);
        assert_eq!(report.rows[0].ratio, None);
        assert_eq!(report.fitted_c, 0.0);
        assert_eq!(report.notes().len(), 1);
    }
}
