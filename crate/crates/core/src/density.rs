//! Degenerate volume-form densities on the torus.
//!
//! A density is `smooth * prod sigma_i^{a_i} / prod sigma_j^{b_j}` where
//! `sigma(z; z0) = sin^2(pi (x - x0)) + sin^2(pi (y - y0))` vanishes
//! quadratically at `z0`. Zero orders satisfy `a >= 0` and pole orders
//! `0 < b < 1`, so the density lies in `L^p` for `1 < p < 1/max b`.
//!
//! On a grid, `sigma` is floored at `sin^2(pi h / 2)` (its value half a cell
//! away from the point), so degeneracy points that fall on grid nodes give
//! large-but-finite poles and tiny-but-positive zeros.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{PeriodicGrid, ScalarField};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("zero and pole share the point ({0}, {1})")]
    CoincidentZeroAndPole(f64, f64),
    #[error("pole order {0} outside (0, 1)")]
    PoleOrderOutOfRange(f64),
    #[error("zero order {0} is negative")]
    NegativeZeroOrder(f64),
    #[error("smooth part may vanish: lower bound {0}")]
    NonPositiveSmoothPart(f64),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
}

/// One term `cos_coeff cos(2 pi (kx x + ky y)) + sin_coeff sin(..)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigMode<T> {
    pub kx: i32,
    pub ky: i32,
    #[serde(default)]
    pub cos: T,
    #[serde(default)]
    pub sin: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly<T> {
    pub constant: T,
    #[serde(default)]
    pub modes: Vec<TrigMode<T>>,
}

impl<T: Real> TrigPoly<T> {
    pub fn constant(c: T) -> Self {
        Self { constant: c, modes: Vec::new() }
    }

    pub fn with_cos(mut self, kx: i32, ky: i32, amplitude: T) -> Self {
        self.modes.push(TrigMode { kx, ky, cos: amplitude, sin: T::zero() });
        self
    }

    pub fn with_sin(mut self, kx: i32, ky: i32, amplitude: T) -> Self {
        self.modes.push(TrigMode { kx, ky, cos: T::zero(), sin: amplitude });
        self
    }

    pub fn eval(&self, x: T, y: T) -> T {
        let tau = T::TAU();
        self.modes.iter().fold(self.constant, |acc, m| {
            let arg = tau * (T::lit(m.kx as f64) * x + T::lit(m.ky as f64) * y);
            acc + m.cos * arg.cos() + m.sin * arg.sin()
        })
    }

    /// `constant - sum (|cos| + |sin|)`, a lower bound for the polynomial.
    pub fn lower_bound(&self) -> T {
        self.modes.iter().fold(self.constant, |acc, m| acc - m.cos.abs() - m.sin.abs())
    }

    pub fn bandwidth(&self) -> usize {
        self.modes.iter().map(|m| m.kx.unsigned_abs().max(m.ky.unsigned_abs()) as usize).max().unwrap_or(0)
    }

    pub fn sample(&self, grid: PeriodicGrid) -> ScalarField<T> {
        ScalarField::from_fn(grid, |x, y| self.eval(x, y))
    }

    /// Random polynomial with modes `|kx|, |ky| <= max_mode` and total
    /// amplitude `amplitude` split across them; the constant is `constant`.
    pub fn random(rng: &mut impl Rng, constant: T, amplitude: T, max_mode: i32, terms: usize) -> Self {
        let mut weights: Vec<f64> = (0..terms).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum::<f64>() * 2.0;
        weights.iter_mut().for_each(|w| *w /= total);
        let modes = weights
            .iter()
            .map(|w| {
                let (kx, ky) = loop {
                    let k = (rng.gen_range(-max_mode..=max_mode), rng.gen_range(0..=max_mode));
                    if k != (0, 0) {
                        break k;
                    }
                };
                let sign = |r: &mut dyn rand::RngCore| if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                TrigMode { kx, ky, cos: amplitude * T::lit(w * sign(rng)), sin: amplitude * T::lit(w * sign(rng)) }
            })
            .collect();
        Self { constant, modes }
    }
}

/// Point factor `sigma(.; point)^order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFactor<T> {
    pub point: [T; 2],
    pub order: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec<T> {
    pub smooth_part: TrigPoly<T>,
    #[serde(default)]
    pub zeros: Vec<PointFactor<T>>,
    #[serde(default)]
    pub poles: Vec<PointFactor<T>>,
}

/// `sin^2(pi dx) + sin^2(pi dy)`.
pub fn sigma<T: Real>(x: T, y: T, point: [T; 2]) -> T {
    let sx = (T::PI() * (x - point[0])).sin();
    let sy = (T::PI() * (y - point[1])).sin();
    sx * sx + sy * sy
}

impl<T: Real> DensitySpec<T> {
    pub fn constant(c: T) -> Self {
        Self::smooth(TrigPoly::constant(c))
    }

    pub fn smooth(smooth_part: TrigPoly<T>) -> Self {
        Self { smooth_part, zeros: Vec::new(), poles: Vec::new() }
    }

    pub fn with_zero(mut self, point: [T; 2], order: T) -> Self {
        self.zeros.push(PointFactor { point, order });
        self
    }

    pub fn with_pole(mut self, point: [T; 2], order: T) -> Self {
        self.poles.push(PointFactor { point, order });
        self
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        let lb = self.smooth_part.lower_bound();
        if lb <= T::zero() {
            return Err(DensityError::NonPositiveSmoothPart(lb.to_f64_lossy()));
        }
        if let Some(z) = self.zeros.iter().find(|z| z.order < T::zero()) {
            return Err(DensityError::NegativeZeroOrder(z.order.to_f64_lossy()));
        }
        if let Some(p) = self.poles.iter().find(|p| !(p.order > T::zero() && p.order < T::one())) {
            return Err(DensityError::PoleOrderOutOfRange(p.order.to_f64_lossy()));
        }
        for z in &self.zeros {
            for p in &self.poles {
                if PeriodicGrid::torus_distance((z.point[0], z.point[1]), (p.point[0], p.point[1])) < T::lit(1e-12) {
                    return Err(DensityError::CoincidentZeroAndPole(
                        z.point[0].to_f64_lossy(),
                        z.point[1].to_f64_lossy(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Points where the density vanishes or blows up.
    pub fn degeneracy_points(&self) -> Vec<[T; 2]> {
        self.zeros.iter().filter(|z| z.order > T::zero()).chain(&self.poles).map(|f| f.point).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degeneracy_points().is_empty()
    }

    pub fn parts(&self, grid: PeriodicGrid) -> Result<DensityParts<T>, DensityError> {
        self.validate()?;
        let h = grid.spacing::<T>();
        let floor = {
            let s = (T::PI() * h * T::lit(0.5)).sin();
            s * s
        };
        let product = |factors: &[PointFactor<T>]| {
            ScalarField::from_fn(grid, |x, y| {
                factors.iter().fold(T::one(), |acc, f| acc * sigma(x, y, f.point).max(floor).powf(f.order))
            })
        };
        Ok(DensityParts {
            smooth: self.smooth_part.sample(grid),
            zero_part: product(&self.zeros),
            pole_part: product(&self.poles),
        })
    }
}

/// Grid samples of the three factors of a density.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityParts<T> {
    pub smooth: ScalarField<T>,
    /// `prod sigma^a`
    pub zero_part: ScalarField<T>,
    /// `prod sigma^b`; the density divides by it.
    pub pole_part: ScalarField<T>,
}

impl<T: Real> DensityParts<T> {
    /// `smooth * (r + zero_part) / (w + pole_part)`.
    pub fn perturbed(&self, w: T, r: T) -> ScalarField<T> {
        let ratio = self.zero_part.zip_map(&self.pole_part, |z, p| (r + z) / (w + p));
        self.smooth.mul(&ratio)
    }

    pub fn density(&self) -> ScalarField<T> {
        self.perturbed(T::zero(), T::zero())
    }
}

pub fn build_density<T: Real>(grid: PeriodicGrid, spec: &DensitySpec<T>) -> Result<ScalarField<T>, DensityError> {
    Ok(spec.parts(grid)?.density())
}

/// The `(s, w, r, delta)` family: background bump `s`, pole cap `w`, zero
/// lift `r`, and class shrink `delta` acting as `(1 - delta) g0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationParams<T> {
    #[serde(default)]
    pub s: T,
    #[serde(default)]
    pub w: T,
    #[serde(default)]
    pub r: T,
    #[serde(default)]
    pub delta: T,
}

impl<T: Real> Default for PerturbationParams<T> {
    fn default() -> Self {
        Self { s: T::zero(), w: T::zero(), r: T::zero(), delta: T::zero() }
    }
}

impl<T: Real> PerturbationParams<T> {
    pub fn new(s: T, w: T, r: T) -> Self {
        Self { s, w, r, delta: T::zero() }
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        let bad = |name: &str, v: T| DensityError::InvalidPerturbation(format!("{name} = {v}"));
        for (name, v) in [("s", self.s), ("w", self.w), ("r", self.r)] {
            if !(v >= T::zero()) {
                return Err(bad(name, v));
            }
        }
        if !(self.delta.abs() < T::one()) {
            return Err(bad("delta", self.delta));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.s == T::zero() && self.w == T::zero() && self.r == T::zero() && self.delta == T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    #[test]
    fn constant_density() {
        let f = build_density(grid(16), &DensitySpec::constant(1.0f64)).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_vanishes_like_h_squared() {
        let spec = DensitySpec::constant(1.0f64).with_zero([0.5, 0.5], 1.0);
        let mins: Vec<f64> = [32, 64, 128].iter().map(|&n| build_density(grid(n), &spec).unwrap().min()).collect();
        for (k, n) in [32.0f64, 64.0, 128.0].iter().enumerate() {
            // floored sigma at a node: sin^2(pi h / 2) ~ (pi h / 2)^2
            let expected = (std::f64::consts::PI / (2.0 * n)).sin().powi(2);
            assert_abs_diff_eq!(mins[k], expected, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(mins[0] / mins[1], 4.0, epsilon = 1e-2);
        assert_abs_diff_eq!(mins[1] / mins[2], 4.0, epsilon = 1e-2);
    }

    #[test]
    fn pole_integrability_threshold() {
        // b = 0.5: int F^p finite for p < 2
        let spec = DensitySpec::constant(1.0f64).with_pole([0.5, 0.5], 0.5);
        let moment = |n: usize, p: f64| build_density(grid(n), &spec).unwrap().map(|v| v.powf(p)).mean();
        let sub: Vec<f64> = [64, 128, 256].iter().map(|&n| moment(n, 1.5)).collect();
        let sup: Vec<f64> = [64, 128, 256].iter().map(|&n| moment(n, 2.5)).collect();
        // subcritical increments shrink geometrically, supercritical sums grow like h^{-1/2}
        let (d1, d2) = (sub[1] - sub[0], sub[2] - sub[1]);
        assert!(d2 < 0.8 * d1 && d2 < 0.05 * sub[2]);
        assert!(sup[1] > 1.3 * sup[0] && sup[2] > 1.3 * sup[1]);
    }

    #[test]
    fn rejects_bad_specs() {
        let coincident = DensitySpec::constant(1.0f64).with_zero([0.2, 0.3], 1.0).with_pole([0.2, 0.3], 0.5);
        assert!(matches!(coincident.validate(), Err(DensityError::CoincidentZeroAndPole(..))));
        let big_pole = DensitySpec::constant(1.0f64).with_pole([0.2, 0.3], 1.0);
        assert_eq!(big_pole.validate(), Err(DensityError::PoleOrderOutOfRange(1.0)));
        let neg = DensitySpec::constant(1.0f64).with_zero([0.2, 0.3], -1.0);
        assert_eq!(neg.validate(), Err(DensityError::NegativeZeroOrder(-1.0)));
        let wavy = DensitySpec::smooth(TrigPoly::constant(1.0f64).with_cos(1, 0, 1.0));
        assert!(matches!(wavy.validate(), Err(DensityError::NonPositiveSmoothPart(_))));
    }

    #[test]
    fn perturbation_recovers_density_and_orders() {
        let spec = DensitySpec::constant(2.0f64).with_zero([0.25, 0.25], 1.0).with_pole([0.75, 0.75], 0.5);
        let parts = spec.parts(grid(32)).unwrap();
        assert_eq!(parts.perturbed(0.0, 0.0), parts.density());
        // larger r raises the density, larger w lowers it
        let base = parts.density();
        let lifted = parts.perturbed(0.0, 0.1);
        let capped = parts.perturbed(0.1, 0.0);
        assert!(lifted.values().iter().zip(base.values()).all(|(a, b)| a > b));
        assert!(capped.values().iter().zip(base.values()).all(|(a, b)| a < b));
    }

    #[test]
    fn random_polynomials_stay_positive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = TrigPoly::<f64>::random(&mut rng, 1.0, 0.8, 3, 4);
            assert!(p.lower_bound() >= 0.2 - 1e-12);
            assert!(p.bandwidth() <= 3);
        }
    }

    #[test]
    fn json_schema() {
        let json = r#"{"smooth_part":{"constant":1.0,"modes":[{"kx":1,"ky":0,"cos":0.05}]},"poles":[{"point":[0.5,0.5],"order":0.6}]}"#;
        let spec: DensitySpec<f64> = serde_json::from_str(json).unwrap();
        assert_eq!(spec.poles[0].order, 0.6);
        assert!(spec.validate().is_ok());
        assert!(serde_json::from_str::<DensitySpec<f64>>(r#"{"smooth_part":{"constant":1.0},"typo":1}"#).is_err());
    }
}
