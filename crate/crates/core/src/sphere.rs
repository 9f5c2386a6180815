//! Axisymmetric Ricci flow of a conformal metric `v g_round` on the 2-sphere.
//!
//! Gauss curvature is `K = (1 - (1/2) Delta log v) / v` with the round
//! Laplacian. The unnormalized flow `dv/dt = -K v = -1 + (1/2) Delta log v`
//! loses area at the rate `4 pi`, so the extinction time is `A0 / (4 pi)`.
//! The normalized flow adds `v / T0`.
//!
//! Latitudes are pole-staggered, `theta_k = (k + 1/2) pi / m`, and the
//! Laplacian is a finite-volume stencil with exact zone areas and zero flux
//! through the poles, so `sum w_k (Delta f)_k = 0` holds to rounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SphereError {
    #[error("latitude grid needs at least 32 points, got {0}")]
    BadGrid(usize),
    #[error("conformal factor must be positive (min {0})")]
    NonPositive(f64),
    #[error("step rejected: {0}")]
    StepRejected(String),
    #[error("time step underflow at t = {t} (dt = {dt:e}): {reason}")]
    MinStepUnderflow { t: f64, dt: f64, reason: String },
    #[error("invalid sphere configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatitudeGrid<T> {
    m: usize,
    theta: Vec<T>,
    /// Round zone areas `2 pi (cos theta_{k-1/2} - cos theta_{k+1/2})`.
    weights: Vec<T>,
    /// Edge conductances `2 pi sin theta_{k+1/2} / dtheta`, `m - 1` interior edges.
    conductance: Vec<T>,
}

impl<T: Real> LatitudeGrid<T> {
    pub const MIN_POINTS: usize = 32;

    pub fn new(m: usize) -> Result<Self, SphereError> {
        if m < Self::MIN_POINTS {
            return Err(SphereError::BadGrid(m));
        }
        let pi = T::PI();
        let dtheta = pi / T::from_count(m);
        let edge = |k: usize| T::from_count(k) * dtheta;
        let theta = (0..m).map(|k| (T::from_count(k) + T::lit(0.5)) * dtheta).collect();
        let weights = (0..m).map(|k| T::TAU() * (edge(k).cos() - edge(k + 1).cos())).collect();
        let conductance = (1..m).map(|k| T::TAU() * edge(k).sin() / dtheta).collect();
        Ok(Self { m, theta, weights, conductance })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `int f dA_round`.
    pub fn integrate(&self, f: &[T]) -> T {
        f.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum()
    }

    /// Round Laplacian `(1/sin) d(sin d f)`.
    pub fn laplacian(&self, f: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.m];
        for (k, &c) in self.conductance.iter().enumerate() {
            let flux = c * (f[k + 1] - f[k]);
            out[k] = out[k] + flux;
            out[k + 1] = out[k + 1] - flux;
        }
        out.iter_mut().zip(&self.weights).for_each(|(o, &w)| *o = *o / w);
        out
    }

    /// Samples `sum_j c_j cos(j theta)`.
    pub fn cosine_series(&self, coeffs: &[T]) -> Vec<T> {
        self.theta
            .iter()
            .map(|&th| {
                coeffs.iter().enumerate().fold(T::zero(), |acc, (j, &c)| acc + c * (T::from_count(j) * th).cos())
            })
            .collect()
    }

    /// Solves `(diag - dt/2 Delta) x = rhs` (Thomas algorithm).
    fn solve_tridiagonal(&self, diag: &[T], dt: T, rhs: &[T]) -> Vec<T> {
        let m = self.m;
        let half_dt = dt * T::lit(0.5);
        // row k: diag_k x_k - (dt/2)/w_k * sum_edges c (x_nb - x_k)
        let mut lower = vec![T::zero(); m];
        let mut upper = vec![T::zero(); m];
        let mut main: Vec<T> = diag.to_vec();
        for (e, &c) in self.conductance.iter().enumerate() {
            let (a, b) = (e, e + 1);
            let ca = half_dt * c / self.weights[a];
            let cb = half_dt * c / self.weights[b];
            main[a] = main[a] + ca;
            upper[a] = -ca;
            main[b] = main[b] + cb;
            lower[b] = -cb;
        }
        let mut c_prime = vec![T::zero(); m];
        let mut d_prime = vec![T::zero(); m];
        c_prime[0] = upper[0] / main[0];
        d_prime[0] = rhs[0] / main[0];
        for k in 1..m {
            let denom = main[k] - lower[k] * c_prime[k - 1];
            c_prime[k] = upper[k] / denom;
            d_prime[k] = (rhs[k] - lower[k] * d_prime[k - 1]) / denom;
        }
        let mut x = vec![T::zero(); m];
        x[m - 1] = d_prime[m - 1];
        for k in (0..m - 1).rev() {
            x[k] = d_prime[k] - c_prime[k] * x[k + 1];
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalState<T> {
    pub v: Vec<T>,
    pub t: T,
}

impl<T: Real> ConformalState<T> {
    pub fn new(grid: &LatitudeGrid<T>, v: Vec<T>) -> Result<Self, SphereError> {
        if v.len() != grid.m() {
            return Err(SphereError::Config(format!("{} values for {} latitudes", v.len(), grid.m())));
        }
        let min = v.iter().copied().fold(T::infinity(), T::min);
        if !(min > T::zero()) {
            return Err(SphereError::NonPositive(min.to_f64_lossy()));
        }
        Ok(Self { v, t: T::zero() })
    }

    pub fn area(&self, grid: &LatitudeGrid<T>) -> T {
        grid.integrate(&self.v)
    }

    pub fn min_v(&self) -> T {
        self.v.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_v(&self) -> T {
        self.v.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn mean_v(&self, grid: &LatitudeGrid<T>) -> T {
        self.area(grid) / (T::lit(4.0) * T::PI())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curvature<T> {
    pub k: Vec<T>,
    /// `int K dA`
    pub total: T,
    /// `|int K dA - 4 pi| / (4 pi)`
    pub gauss_bonnet_residual: T,
}

pub fn gauss_curvature<T: Real>(grid: &LatitudeGrid<T>, state: &ConformalState<T>) -> Curvature<T> {
    let log_v: Vec<T> = state.v.iter().map(|v| v.ln()).collect();
    let lap = grid.laplacian(&log_v);
    let half = T::lit(0.5);
    let k: Vec<T> = lap.iter().zip(&state.v).map(|(&l, &v)| (T::one() - half * l) / v).collect();
    let density: Vec<T> = k.iter().zip(&state.v).map(|(&a, &b)| a * b).collect();
    let total = grid.integrate(&density);
    let four_pi = T::lit(4.0) * T::PI();
    Curvature { k, total, gauss_bonnet_residual: ((total - four_pi) / four_pi).abs() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SphereStepper<T> {
    pub newton_tol: T,
    pub max_newton: usize,
    pub dt_init: T,
    pub dt_min: T,
    pub dt_max: T,
}

impl<T: Real> Default for SphereStepper<T> {
    fn default() -> Self {
        Self {
            newton_tol: T::lit(1e-12),
            max_newton: 30,
            dt_init: T::lit(1e-3),
            dt_min: T::lit(1e-8),
            dt_max: T::lit(0.05),
        }
    }
}

/// Implicit Euler for `dv/dt = -1 + (1/2) Delta log v + v / T0` in the
/// unknown `u = log v`; `t0 = None` is the unnormalized flow.
fn implicit_step<T: Real>(
    grid: &LatitudeGrid<T>,
    state: &ConformalState<T>,
    t0: Option<T>,
    dt: T,
    stepper: &SphereStepper<T>,
) -> Result<ConformalState<T>, SphereError> {
    if !(dt > T::zero()) {
        return Err(SphereError::StepRejected("dt not positive".into()));
    }
    let growth = match t0 {
        Some(t0) if dt >= t0 => return Err(SphereError::StepRejected("dt exceeds T0".into())),
        Some(t0) => T::one() - dt / t0,
        None => T::one(),
    };
    let half = T::lit(0.5);
    let residual = |u: &[T]| -> Vec<T> {
        let lap = grid.laplacian(u);
        u.iter()
            .zip(&state.v)
            .zip(&lap)
            .map(|((&uk, &vk), &l)| growth * uk.exp() - vk - dt * (-T::one() + half * l))
            .collect()
    };
    let norm = |r: &[T]| r.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let mut u: Vec<T> = state.v.iter().map(|v| v.ln()).collect();
    let mut res = residual(&u);
    let mut rn = norm(&res);
    let mut iterations = 0;
    // one polishing iteration past the tolerance keeps exact solutions exact
    let mut polished = false;
    while rn > stepper.newton_tol || !polished {
        polished = rn <= stepper.newton_tol;
        if iterations == stepper.max_newton {
            return Err(SphereError::StepRejected(format!("Newton not converged (residual {rn:e})")));
        }
        iterations += 1;
        let diag: Vec<T> = u.iter().map(|&uk| growth * uk.exp()).collect();
        let rhs: Vec<T> = res.iter().map(|&r| -r).collect();
        let delta = grid.solve_tridiagonal(&diag, dt, &rhs);
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..=30 {
            let trial: Vec<T> = u.iter().zip(&delta).map(|(&a, &d)| a + lambda * d).collect();
            let trial_res = residual(&trial);
            let trial_norm = norm(&trial_res);
            if trial_norm.is_finite() && trial_norm < rn {
                u = trial;
                res = trial_res;
                rn = trial_norm;
                accepted = true;
                break;
            }
            lambda = lambda * half;
        }
        if !accepted {
            if rn <= stepper.newton_tol {
                break;
            }
            return Err(SphereError::StepRejected(format!("line search failed (residual {rn:e})")));
        }
    }
    // a uniform state with v <= dt has no positive successor
    let v: Vec<T> = u.iter().map(|x| x.exp()).collect();
    if v.iter().any(|x| !(x.is_finite() && *x > T::zero())) {
        return Err(SphereError::StepRejected("lost positivity".into()));
    }
    Ok(ConformalState { v, t: state.t + dt })
}

pub fn step_unnormalized<T: Real>(
    grid: &LatitudeGrid<T>,
    state: &ConformalState<T>,
    dt: T,
    stepper: &SphereStepper<T>,
) -> Result<ConformalState<T>, SphereError> {
    implicit_step(grid, state, None, dt, stepper)
}

pub fn step_normalized_fano<T: Real>(
    grid: &LatitudeGrid<T>,
    state: &ConformalState<T>,
    t0: T,
    dt: T,
    stepper: &SphereStepper<T>,
) -> Result<ConformalState<T>, SphereError> {
    if !(t0 > T::zero()) {
        return Err(SphereError::Config("T0 must be positive".into()));
    }
    implicit_step(grid, state, Some(t0), dt, stepper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereRecord<T> {
    pub t: T,
    pub area: T,
    pub min_v: T,
    pub max_v: T,
    pub max_abs_k: T,
    pub gauss_bonnet_residual: T,
}

fn record<T: Real>(grid: &LatitudeGrid<T>, state: &ConformalState<T>) -> SphereRecord<T> {
    let curvature = gauss_curvature(grid, state);
    SphereRecord {
        t: state.t,
        area: state.area(grid),
        min_v: state.min_v(),
        max_v: state.max_v(),
        max_abs_k: curvature.k.iter().fold(T::zero(), |m, k| m.max(k.abs())),
        gauss_bonnet_residual: curvature.gauss_bonnet_residual,
    }
}

/// Adaptive integration until `stop` holds or `t_end` is reached.
fn integrate<T: Real>(
    grid: &LatitudeGrid<T>,
    v0: Vec<T>,
    t0: Option<T>,
    t_end: T,
    stepper: &SphereStepper<T>,
    stop: impl Fn(&ConformalState<T>) -> bool,
) -> Result<(ConformalState<T>, Vec<SphereRecord<T>>), SphereError> {
    let mut state = ConformalState::new(grid, v0)?;
    let mut log = vec![record(grid, &state)];
    let mut dt = stepper.dt_init;
    let mut streak = 0;
    while state.t < t_end && !stop(&state) {
        let remaining = t_end - state.t;
        let (h, lands) = if dt >= remaining * T::lit(0.999) { (remaining, true) } else { (dt, false) };
        match implicit_step(grid, &state, t0, h, stepper) {
            Ok(mut next) => {
                if lands {
                    next.t = t_end;
                }
                state = next;
                log.push(record(grid, &state));
                streak += 1;
                if streak == 5 {
                    dt = (dt * T::lit(1.2)).min(stepper.dt_max);
                    streak = 0;
                }
            }
            Err(SphereError::StepRejected(reason)) => {
                streak = 0;
                dt = h * T::lit(0.5);
                if dt < stepper.dt_min {
                    return Err(SphereError::MinStepUnderflow {
                        t: state.t.to_f64_lossy(),
                        dt: dt.to_f64_lossy(),
                        reason,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((state, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionReport<T> {
    pub initial_area: T,
    /// `A0 / (4 pi)`
    pub predicted: T,
    /// Zero of the least-squares line through `A(t)`.
    pub measured: T,
    pub relative_error: T,
    /// Largest `|A(t) - (A0 - 4 pi t)| / A(t)` for `t <= 0.9 T`.
    pub area_law_error: T,
    pub max_gauss_bonnet_residual: T,
    pub log: Vec<SphereRecord<T>>,
}

impl<T: Real> ExtinctionReport<T> {
    pub fn passed(&self) -> bool {
        self.relative_error <= T::lit(0.02)
            && self.area_law_error <= T::lit(0.01)
            && self.max_gauss_bonnet_residual <= T::lit(0.005)
    }
}

/// Runs the unnormalized flow until `min v < tol` and compares the
/// extrapolated extinction time with `A0 / (4 pi)`.
pub fn extinction_experiment<T: Real>(
    grid: &LatitudeGrid<T>,
    v0: Vec<T>,
    tol: T,
    stepper: &SphereStepper<T>,
) -> Result<ExtinctionReport<T>, SphereError> {
    let four_pi = T::lit(4.0) * T::PI();
    let initial = ConformalState::new(grid, v0.clone())?;
    let initial_area = initial.area(grid);
    let predicted = initial_area / four_pi;
    if !(tol > T::zero() && tol < initial.min_v()) {
        return Err(SphereError::Config("extinction tolerance must lie in (0, min v0)".into()));
    }
    let (_, log) = integrate(grid, v0, None, predicted * T::lit(2.0), stepper, |s| s.min_v() < tol)?;
    let n = T::from_count(log.len());
    let mean_t = log.iter().map(|r| r.t).sum::<T>() / n;
    let mean_a = log.iter().map(|r| r.area).sum::<T>() / n;
    let sxy = log.iter().map(|r| (r.t - mean_t) * (r.area - mean_a)).sum::<T>();
    let sxx = log.iter().map(|r| (r.t - mean_t) * (r.t - mean_t)).sum::<T>();
    let slope = sxy / sxx;
    let measured = mean_t - mean_a / slope;
    let horizon = predicted * T::lit(0.9);
    let area_law_error = log
        .iter()
        .filter(|r| r.t <= horizon)
        .fold(T::zero(), |m, r| m.max((r.area - (initial_area - four_pi * r.t)).abs() / r.area));
    let max_gauss_bonnet_residual = log.iter().fold(T::zero(), |m, r| m.max(r.gauss_bonnet_residual));
    Ok(ExtinctionReport {
        initial_area,
        predicted,
        measured,
        relative_error: ((measured - predicted) / predicted).abs(),
        area_law_error,
        max_gauss_bonnet_residual,
        log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSphereReport<T> {
    pub t0: T,
    pub final_state: ConformalState<T>,
    /// `sup |v - mean v|` at the end.
    pub roundness: T,
    /// Largest `|A(t) - A0| / A0`.
    pub area_drift: T,
    pub max_gauss_bonnet_residual: T,
    pub log: Vec<SphereRecord<T>>,
}

impl<T: Real> NormalizedSphereReport<T> {
    pub fn passed(&self, tol: T) -> bool {
        self.roundness < tol && self.area_drift <= T::lit(0.005) && self.max_gauss_bonnet_residual <= T::lit(0.005)
    }
}

/// Normalized flow with `T0 = A0 / (4 pi)` unless given.
pub fn normalized_run<T: Real>(
    grid: &LatitudeGrid<T>,
    v0: Vec<T>,
    t0: Option<T>,
    t_end: T,
    stepper: &SphereStepper<T>,
) -> Result<NormalizedSphereReport<T>, SphereError> {
    let initial = ConformalState::new(grid, v0.clone())?;
    let a0 = initial.area(grid);
    let t0 = t0.unwrap_or_else(|| initial.mean_v(grid));
    if !(t0 > T::zero()) {
        return Err(SphereError::Config("T0 must be positive".into()));
    }
    let (state, log) = integrate(grid, v0, Some(t0), t_end, stepper, |_| false)?;
    let mean = state.mean_v(grid);
    let roundness = state.v.iter().fold(T::zero(), |m, &v| m.max((v - mean).abs()));
    let area_drift = log.iter().fold(T::zero(), |m, r| m.max(((r.area - a0) / a0).abs()));
    let max_gauss_bonnet_residual = log.iter().fold(T::zero(), |m, r| m.max(r.gauss_bonnet_residual));
    Ok(NormalizedSphereReport { t0, final_state: state, roundness, area_drift, max_gauss_bonnet_residual, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereMode {
    #[default]
    Unnormalized,
    Normalized,
}

/// JSON description of a sphere run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SphereConfig<T> {
    pub m: usize,
    /// `v0 = sum_j c_j cos(j theta)`
    pub v0: Vec<T>,
    #[serde(default)]
    pub mode: SphereMode,
    /// Normalized mode only; defaults to `A0 / (4 pi)`.
    #[serde(default)]
    pub t0: Option<T>,
    /// Normalized run length.
    #[serde(default)]
    pub t_end: Option<T>,
    /// Unnormalized stop threshold on `min v`.
    #[serde(default)]
    pub extinction_tol: Option<T>,
    #[serde(default)]
    pub stepper: SphereStepper<T>,
}
