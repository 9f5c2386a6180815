//! Parabolic Monge-Ampere flows on the periodic model.
//!
//! Unnormalized: `d phi/dt = log((g_t + (1/2) Delta phi) / F)` with
//! `g_t = (1 - delta) g0 + s + t chi`.
//! Normalized: `d phi/dt = log((g_t + (1/2) Delta phi) / F) - phi` with
//! `g_t = e^{-t} (1 - delta) g0 + (1 - e^{-t}) chi + s`.
//! `F` is the perturbed density `smooth (r + zeros) / (w + poles)`.
//!
//! Steps are implicit Euler solved by damped Newton. The Newton system is
//! symmetrized by multiplying through by `G = g_t + (1/2) Delta phi`, which
//! gives the SPD operator `kappa G - dt (1/2) Delta`, inverted by CG with a
//! constant-coefficient FFT preconditioner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{DensityError, DensitySpec, PerturbationParams};
use crate::elliptic::EllipticError;
use crate::grid::{conjugate_gradient, GridError, LaplacianKind, PeriodicGrid, ScalarField, SpectralOps};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error("step rejected: {0}")]
    StepRejected(String),
    #[error("time step underflow at t = {t} (dt = {dt:e}): {reason}")]
    MinStepUnderflow { t: f64, dt: f64, reason: String },
    #[error("not enough monitor samples after t = {0}")]
    InsufficientSamples(f64),
    #[error("normalized flow did not converge: final gap {0:e}")]
    NotConverged(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    #[default]
    Unnormalized,
    Normalized,
}

/// Source of the form `chi` driving the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub enum ChiMode<T> {
    /// `chi = (1/2) Delta log F` for the unperturbed `F`.
    FromF,
    Zero,
    Prescribed {
        density: DensitySpec<T>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct StepperConfig<T> {
    pub newton_tol: T,
    pub max_newton: usize,
    pub cg_rtol: T,
    pub cg_max_iter: usize,
    pub dt_init: T,
    pub dt_min: T,
    pub dt_max: T,
}

impl<T: Real> Default for StepperConfig<T> {
    fn default() -> Self {
        Self {
            newton_tol: T::lit(1e-10),
            max_newton: 25,
            cg_rtol: T::lit(1e-11),
            cg_max_iter: 1000,
            dt_init: T::lit(1e-3),
            dt_min: T::lit(1e-8),
            dt_max: T::lit(0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct FlowConfig<T> {
    #[serde(default)]
    pub mode: FlowMode,
    pub n: usize,
    #[serde(default)]
    pub laplacian: LaplacianKind,
    pub g0: DensitySpec<T>,
    pub big_f: DensitySpec<T>,
    pub chi: ChiMode<T>,
    pub t_end: T,
    #[serde(default)]
    pub stepper: StepperConfig<T>,
    #[serde(default)]
    pub perturbation: PerturbationParams<T>,
    /// Extra points excluded from region-restricted monitors.
    #[serde(default)]
    pub marked_points: Vec<[T; 2]>,
    /// Times the integrator lands on exactly and snapshots.
    #[serde(default)]
    pub checkpoints: Vec<T>,
}

impl<T: Real> FlowConfig<T> {
    pub fn new(n: usize, g0: DensitySpec<T>, big_f: DensitySpec<T>, chi: ChiMode<T>, t_end: T) -> Self {
        Self {
            mode: FlowMode::Unnormalized,
            n,
            laplacian: LaplacianKind::Spectral,
            g0,
            big_f,
            chi,
            t_end,
            stepper: StepperConfig::default(),
            perturbation: PerturbationParams::default(),
            marked_points: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn normalized(mut self) -> Self {
        self.mode = FlowMode::Normalized;
        self
    }

    pub fn with_perturbation(mut self, p: PerturbationParams<T>) -> Self {
        self.perturbation = p;
        self
    }

    pub fn with_checkpoints(mut self, times: &[T]) -> Self {
        self.checkpoints = times.to_vec();
        self
    }

    pub fn with_laplacian(mut self, kind: LaplacianKind) -> Self {
        self.laplacian = kind;
        self
    }

    pub fn with_grid(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        PeriodicGrid::new(self.n)?;
        if !(self.t_end > T::zero()) {
            return Err(FlowError::Config(format!("t_end = {} must be positive", self.t_end)));
        }
        self.perturbation.validate()?;
        let s = &self.stepper;
        if !(s.newton_tol > T::zero() && s.dt_min > T::zero() && s.dt_min <= s.dt_init && s.dt_init <= s.dt_max) {
            return Err(FlowError::Config("stepper needs 0 < dt_min <= dt_init <= dt_max and tol > 0".into()));
        }
        if let Some(c) = self.checkpoints.iter().find(|&&c| !(c > T::zero() && c <= self.t_end)) {
            return Err(FlowError::Config(format!("checkpoint {c} outside (0, t_end]")));
        }
        if self.mode == FlowMode::Normalized && !matches!(self.chi, ChiMode::Prescribed { .. }) {
            return Err(FlowError::Config("normalized mode needs a prescribed positive chi".into()));
        }
        Ok(())
    }
}

/// Grid fields and operators derived once from a [`FlowConfig`].
#[derive(Debug, Clone)]
pub struct FlowProblem<T: Real> {
    pub config: FlowConfig<T>,
    pub ops: SpectralOps<T>,
    pub g0: ScalarField<T>,
    pub chi: ScalarField<T>,
    /// Perturbed density `F_{w,r}`.
    pub f_eff: ScalarField<T>,
    log_f: ScalarField<T>,
    /// Points at distance `>= 0.1` from every degeneracy point.
    pub region: Vec<bool>,
    pub degeneracy_points: Vec<[T; 2]>,
    /// Limit used for the `fixed_point_gap` monitor.
    pub fixed_point: Option<ScalarField<T>>,
}

/// Radius of the neighbourhood excluded from region-restricted monitors.
pub const REGION_RADIUS: f64 = 0.1;

impl<T: Real> FlowProblem<T> {
    pub fn new(config: FlowConfig<T>) -> Result<Self, FlowError> {
        config.validate()?;
        let grid = PeriodicGrid::new(config.n)?;
        let ops = SpectralOps::new(grid, config.laplacian);
        let g0 = config.g0.parts(grid)?.density();
        let f_parts = config.big_f.parts(grid)?;
        let p = config.perturbation;
        let f_eff = f_parts.perturbed(p.w, p.r);
        if !(f_eff.min() > T::zero()) {
            return Err(FlowError::Config("volume form F must be positive on the grid".into()));
        }
        let chi = match &config.chi {
            ChiMode::FromF => ops.half_laplacian(&f_parts.density().map(|v| v.ln())),
            ChiMode::Zero => ScalarField::zeros(grid),
            ChiMode::Prescribed { density } => {
                let chi = density.parts(grid)?.density();
                if config.mode == FlowMode::Normalized && !(chi.min() > T::zero()) {
                    return Err(FlowError::Config("prescribed chi must be positive".into()));
                }
                chi
            }
        };
        let mut degeneracy_points = config.g0.degeneracy_points();
        degeneracy_points.extend(config.big_f.degeneracy_points());
        degeneracy_points.extend(config.marked_points.iter().copied());
        let radius = T::lit(REGION_RADIUS);
        let region = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.point::<T>(k);
                degeneracy_points.iter().all(|q| PeriodicGrid::torus_distance((x, y), (q[0], q[1])) >= radius)
            })
            .collect();
        let log_f = f_eff.map(|v| v.ln());
        Ok(Self { config, ops, g0, chi, f_eff, log_f, region, degeneracy_points, fixed_point: None })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.ops.grid()
    }

    pub fn mode(&self) -> FlowMode {
        self.config.mode
    }

    pub fn with_fixed_point(mut self, phi_inf: ScalarField<T>) -> Self {
        self.fixed_point = Some(phi_inf);
        self
    }

    fn weights(&self, t: T) -> (T, T) {
        let shrink = T::one() - self.config.perturbation.delta;
        match self.config.mode {
            FlowMode::Unnormalized => (shrink, t),
            FlowMode::Normalized => {
                let decay = (-t).exp();
                (decay * shrink, T::one() - decay)
            }
        }
    }

    /// Background form density `g_t`.
    pub fn g_t(&self, t: T) -> ScalarField<T> {
        let (a, b) = self.weights(t);
        let s = self.config.perturbation.s;
        self.g0.zip_map(&self.chi, |g, c| a * g + b * c + s)
    }

    /// `int g_t` from the cohomological formula.
    pub fn expected_class_mass(&self, t: T) -> T {
        let (a, b) = self.weights(t);
        a * self.g0.mean() + b * self.chi.mean() + self.config.perturbation.s
    }

    fn nu(&self) -> T {
        match self.config.mode {
            FlowMode::Unnormalized => T::zero(),
            FlowMode::Normalized => T::one(),
        }
    }

    /// `G = g_t + (1/2) Delta phi`.
    pub fn metric_density(&self, phi: &ScalarField<T>, t: T) -> ScalarField<T> {
        self.g_t(t).add(&self.ops.half_laplacian(phi))
    }

    /// Right-hand side of the flow, or `None` if `G` is not positive.
    pub fn rate(&self, phi: &ScalarField<T>, t: T) -> Option<ScalarField<T>> {
        let g = self.metric_density(phi, t);
        self.rate_from_density(phi, &g)
    }

    fn rate_from_density(&self, phi: &ScalarField<T>, g: &ScalarField<T>) -> Option<ScalarField<T>> {
        if !(g.min() > T::zero()) {
            return None;
        }
        let nu = self.nu();
        let values = g
            .values()
            .iter()
            .zip(self.log_f.values())
            .zip(phi.values())
            .map(|((&gv, &lf), &p)| gv.ln() - lf - nu * p)
            .collect();
        Some(ScalarField::new(self.grid(), values).expect("grid length"))
    }

    /// `sup |S|` over the region, `S = -(Delta log G) / G`.
    pub fn scalar_curvature_sup(&self, g: &ScalarField<T>) -> T {
        let lap = self.ops.laplacian(&g.map(|v| v.ln()));
        lap.values()
            .iter()
            .zip(g.values())
            .zip(&self.region)
            .filter(|(_, &inside)| inside)
            .fold(T::zero(), |m, ((&l, &gv), _)| m.max((l / gv).abs()))
    }

    pub fn region_sup_distance(&self, a: &ScalarField<T>, b: &ScalarField<T>) -> T {
        a.values()
            .iter()
            .zip(b.values())
            .zip(&self.region)
            .filter(|(_, &inside)| inside)
            .fold(T::zero(), |m, ((&x, &y), _)| m.max((x - y).abs()))
    }
}

/// One time series sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord<T> {
    pub t: T,
    pub dt: T,
    pub volume_ratio_min: T,
    pub volume_ratio_max: T,
    pub class_mass: T,
    pub expected_class_mass: T,
    pub phi_inf: T,
    pub phi_dot_inf: T,
    pub phi_dot_sup: T,
    pub phi_dot_l1: T,
    /// `sup |(1/2) Delta phi|`
    pub ddbar_inf: T,
    pub scal_inf: T,
    pub fixed_point_gap: Option<T>,
}

impl<T: Real> MonitorRecord<T> {
    pub fn class_defect(&self) -> T {
        (self.class_mass - self.expected_class_mass).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorLog<T> {
    pub records: Vec<MonitorRecord<T>>,
}

impl<T: Real> MonitorLog<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&MonitorRecord<T>> {
        self.records.last()
    }

    pub fn times(&self) -> Vec<T> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn is_time_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[0].t < w[1].t)
    }

    /// Largest `|int G - int g_t|` over the run.
    pub fn max_class_defect(&self) -> T {
        self.records.iter().fold(T::zero(), |m, r| m.max(r.class_defect()))
    }

    pub fn at(&self, t: T) -> Option<&MonitorRecord<T>> {
        self.records.iter().find(|r| r.t == t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub t: T,
    pub phi: ScalarField<T>,
    pub ddbar_inf: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState<T> {
    pub t: T,
    pub phi: ScalarField<T>,
    pub phi_dot: ScalarField<T>,
    pub monitors: MonitorLog<T>,
    pub snapshots: Vec<Snapshot<T>>,
    pub stats: StepStats,
}

impl<T: Real> FlowState<T> {
    pub fn initial(problem: &FlowProblem<T>, phi0: ScalarField<T>) -> Result<Self, FlowError> {
        if phi0.grid() != problem.grid() {
            return Err(GridError::SizeMismatch { expected: problem.grid().len(), found: phi0.grid().len() }.into());
        }
        let g = problem.metric_density(&phi0, T::zero());
        let phi_dot = problem
            .rate_from_density(&phi0, &g)
            .ok_or_else(|| FlowError::Config(format!("initial metric density not positive (min {})", g.min())))?;
        let mut state = Self {
            t: T::zero(),
            phi: phi0,
            phi_dot,
            monitors: MonitorLog::default(),
            snapshots: Vec::new(),
            stats: StepStats::default(),
        };
        state.record(problem, &g, T::zero());
        Ok(state)
    }

    fn record(&mut self, problem: &FlowProblem<T>, g: &ScalarField<T>, dt: T) {
        let ratio = g.zip_map(&problem.f_eff, |a, b| a / b);
        let ddbar = g.sub(&problem.g_t(self.t));
        let rec = MonitorRecord {
            t: self.t,
            dt,
            volume_ratio_min: ratio.min(),
            volume_ratio_max: ratio.max(),
            class_mass: g.mean(),
            expected_class_mass: problem.expected_class_mass(self.t),
            phi_inf: self.phi.max_abs(),
            phi_dot_inf: self.phi_dot.max_abs(),
            phi_dot_sup: self.phi_dot.max(),
            phi_dot_l1: self.phi_dot.l1_norm(),
            ddbar_inf: ddbar.max_abs(),
            scal_inf: problem.scalar_curvature_sup(g),
            fixed_point_gap: problem.fixed_point.as_ref().map(|p| self.phi.sup_distance(p)),
        };
        self.monitors.records.push(rec);
    }

    fn snapshot(&mut self) {
        let ddbar_inf = self.monitors.last().map(|r| r.ddbar_inf).unwrap_or_else(T::nan);
        self.snapshots.push(Snapshot { t: self.t, phi: self.phi.clone(), ddbar_inf });
    }

    pub fn snapshot_at(&self, t: T) -> Option<&Snapshot<T>> {
        self.snapshots.iter().find(|s| s.t == t)
    }
}

/// Result of one accepted implicit step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub phi: ScalarField<T>,
    pub phi_dot: ScalarField<T>,
    pub density: ScalarField<T>,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
}

/// One implicit Euler step from `(t, phi)` to `t + dt`.
pub fn step<T: Real>(
    problem: &FlowProblem<T>,
    t: T,
    phi: &ScalarField<T>,
    phi_dot: &ScalarField<T>,
    dt: T,
) -> Result<StepOutcome<T>, FlowError> {
    if !(dt > T::zero()) {
        return Err(FlowError::StepRejected(format!("dt = {dt} not positive")));
    }
    let cfg = &problem.config.stepper;
    let ops = &problem.ops;
    let grid = problem.grid();
    let t1 = t + dt;
    let g1 = problem.g_t(t1);
    let nu = problem.nu();
    let kappa = T::one() + nu * dt;

    // residual phi+ - phi - dt * rate(phi+), with G and the G-weighted norm
    let evaluate = |candidate: &ScalarField<T>| -> Option<(ScalarField<T>, ScalarField<T>, T, T)> {
        let g = g1.add(&ops.half_laplacian(candidate));
        let rate = problem.rate_from_density(candidate, &g)?;
        let res = ScalarField::new(
            grid,
            candidate
                .values()
                .iter()
                .zip(phi.values())
                .zip(rate.values())
                .map(|((&c, &p), &r)| c - p - dt * r)
                .collect(),
        )
        .expect("grid length");
        let plain = res.max_abs();
        let weighted = res.mul(&g).max_abs() / g.mean();
        if !(plain.is_finite() && weighted.is_finite()) {
            return None;
        }
        Some((g, res, plain, weighted))
    };

    let predictor = phi.add(&phi_dot.scale(dt));
    let (mut current, mut eval) = match evaluate(&predictor) {
        Some(e) => (predictor, e),
        None => match evaluate(phi) {
            Some(e) => (phi.clone(), e),
            None => return Err(FlowError::StepRejected("no positive starting iterate".into())),
        },
    };
    let mut newton_iterations = 0;
    let mut cg_iterations = 0;
    loop {
        let (g, res, plain, weighted) = &eval;
        // one correction is always taken: a predictor that already meets the
        // tolerance would leave tol / dt of noise in the rate
        if *weighted <= cfg.newton_tol && newton_iterations > 0 {
            break;
        }
        if newton_iterations == cfg.max_newton {
            return Err(FlowError::StepRejected(format!("Newton not converged (residual {weighted:e})")));
        }
        newton_iterations += 1;
        let diag = g.scale(kappa);
        let shift = diag.mean();
        let apply = |v: &[T]| {
            let field = ScalarField::new(grid, v.to_vec()).expect("grid length");
            diag.mul(&field).sub(&ops.half_laplacian(&field).scale(dt)).into_values()
        };
        let precondition = |v: &[T]| {
            let field = ScalarField::new(grid, v.to_vec()).expect("grid length");
            ops.solve_shifted(shift, dt, &field).into_values()
        };
        let rhs: Vec<T> = res.values().iter().zip(g.values()).map(|(&r, &gv)| -r * gv).collect();
        let (delta, its, _) = conjugate_gradient(apply, precondition, &rhs, cfg.cg_rtol, cfg.cg_max_iter);
        cg_iterations += its;
        let delta = ScalarField::new(grid, delta)?;
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..=20 {
            let trial = current.add(&delta.scale(lambda));
            if let Some(e) = evaluate(&trial) {
                if e.2 < *plain || e.3 < *weighted {
                    accepted = Some((trial, e));
                    break;
                }
            }
            lambda = lambda * T::lit(0.5);
        }
        match accepted {
            Some((trial, e)) => {
                current = trial;
                eval = e;
            }
            None if *weighted <= cfg.newton_tol || delta.max_abs() <= cfg.newton_tol * T::lit(1e-2) => break,
            None => return Err(FlowError::StepRejected(format!("line search failed (residual {weighted:e})"))),
        }
    }
    let (density, _, _, _) = eval;
    let phi_dot = problem
        .rate_from_density(&current, &density)
        .ok_or_else(|| FlowError::StepRejected("metric density lost positivity".into()))?;
    Ok(StepOutcome { phi: current, phi_dot, density, newton_iterations, cg_iterations })
}

/// Integrates several problems on one grid with a shared adaptive step.
/// `observe` sees every accepted time and the potentials.
pub fn run_lockstep<T: Real>(
    problems: &[&FlowProblem<T>],
    phi0s: Vec<ScalarField<T>>,
    mut observe: impl FnMut(T, &[&ScalarField<T>]),
) -> Result<Vec<FlowState<T>>, FlowError> {
    let lead = problems.first().ok_or_else(|| FlowError::Config("no flows to run".into()))?;
    if phi0s.len() != problems.len() {
        return Err(FlowError::Config("one initial potential per flow".into()));
    }
    if problems.iter().any(|p| p.grid() != lead.grid()) {
        return Err(FlowError::Config("lockstep flows must share a grid".into()));
    }
    let cfg = lead.config.stepper;
    let t_end = lead.config.t_end;
    let mut stops: Vec<T> = lead.config.checkpoints.clone();
    stops.push(t_end);
    stops.sort_by(|a, b| a.partial_cmp(b).expect("finite checkpoints"));
    stops.dedup();

    let mut states =
        problems.iter().zip(phi0s).map(|(p, phi0)| FlowState::initial(p, phi0)).collect::<Result<Vec<_>, _>>()?;
    observe(T::zero(), &states.iter().map(|s| &s.phi).collect::<Vec<_>>());

    let mut t = T::zero();
    let mut dt = cfg.dt_init;
    let mut streak = 0;
    let mut next_stop = 0;
    while next_stop < stops.len() {
        let target = stops[next_stop];
        let remaining = target - t;
        // land exactly on the stop, avoiding a sliver step just before it
        let (h, lands) = if dt >= remaining * T::lit(0.999) { (remaining, true) } else { (dt, false) };
        let outcomes: Result<Vec<_>, _> =
            problems.iter().zip(&states).map(|(p, s)| step(p, t, &s.phi, &s.phi_dot, h)).collect();
        match outcomes {
            Ok(outcomes) => {
                t = if lands { target } else { t + h };
                for ((state, outcome), problem) in states.iter_mut().zip(outcomes).zip(problems) {
                    state.t = t;
                    state.phi = outcome.phi;
                    state.phi_dot = outcome.phi_dot;
                    state.stats.accepted += 1;
                    state.stats.newton_iterations += outcome.newton_iterations;
                    state.stats.cg_iterations += outcome.cg_iterations;
                    state.record(problem, &outcome.density, h);
                }
                observe(t, &states.iter().map(|s| &s.phi).collect::<Vec<_>>());
                if lands {
                    for s in &mut states {
                        s.snapshot();
                    }
                    next_stop += 1;
                }
                streak += 1;
                if streak == 5 {
                    dt = (dt * T::lit(1.2)).min(cfg.dt_max);
                    streak = 0;
                }
            }
            Err(FlowError::StepRejected(reason)) => {
                for s in &mut states {
                    s.stats.rejected += 1;
                }
                streak = 0;
                dt = h * T::lit(0.5);
                if dt < cfg.dt_min {
                    return Err(FlowError::MinStepUnderflow { t: t.to_f64_lossy(), dt: dt.to_f64_lossy(), reason });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(states)
}

pub fn run_flow<T: Real>(problem: &FlowProblem<T>, phi0: ScalarField<T>) -> Result<FlowState<T>, FlowError> {
    let mut states = run_lockstep(&[problem], vec![phi0], |_, _| {})?;
    Ok(states.pop().expect("one state"))
}
