//! Rough initial data and the property checks run against flow logs.

use serde::{Deserialize, Serialize};

use crate::density::{DensitySpec, PerturbationParams};
use crate::elliptic::{solve_linear_ma, solve_semilinear_ma};
use crate::flow::{run_lockstep, ChiMode, FlowConfig, FlowError, FlowMode, FlowProblem, FlowState, MonitorLog};
use crate::grid::{ScalarField, SpectralOps};
use crate::scalar::Real;

/// Bounded potential whose Monge-Ampere density is the (possibly rough) target.
pub fn rough_initial_potential<T: Real>(
    ops: &SpectralOps<T>,
    g0: &ScalarField<T>,
    target: &DensitySpec<T>,
    tol: T,
) -> Result<ScalarField<T>, FlowError> {
    let f = target.parts(ops.grid())?.density();
    Ok(solve_linear_ma(ops, g0, &f, tol)?.phi)
}

/// Potential for the target mollified at scale `1/j`: low-pass at mode `j`,
/// clipped positive, rescaled to the original mass.
pub fn smooth_approximation_sequence<T: Real>(
    ops: &SpectralOps<T>,
    g0: &ScalarField<T>,
    target: &ScalarField<T>,
    j: usize,
    tol: T,
) -> Result<ScalarField<T>, FlowError> {
    if j == 0 {
        return Err(FlowError::Config("mollification index must be at least 1".into()));
    }
    let mass = target.mean();
    let floor = mass * T::lit(1e-6);
    let smooth = ops.low_pass(target, j).map(|v| v.max(floor));
    let smooth = smooth.scale(mass / smooth.mean());
    Ok(solve_linear_ma(ops, g0, &smooth, tol)?.phi)
}

/// Smallest `C` with `e^{-C/t} <= ratio_min(t)` and `ratio_max(t) <= e^{C/t}`
/// for every logged `t >= t_min`.
pub fn volume_band_fit<T: Real>(log: &MonitorLog<T>, t_min: T) -> Result<T, FlowError> {
    let samples: Vec<_> = log.records.iter().filter(|r| r.t >= t_min).collect();
    if samples.len() < 2 || !(t_min > T::zero()) {
        return Err(FlowError::InsufficientSamples(t_min.to_f64_lossy()));
    }
    Ok(samples.iter().fold(T::zero(), |c, r| {
        let spread = (-r.volume_ratio_min.ln()).max(r.volume_ratio_max.ln()).max(T::zero());
        c.max(r.t * spread)
    }))
}

/// `|a - b| <= rel * |b|`.
pub fn within_relative<T: Real>(a: T, b: T, rel: T) -> bool {
    (a - b).abs() <= rel * b.abs()
}

pub fn scalar_curvature_monitor<T: Real>(problem: &FlowProblem<T>, state: &FlowState<T>) -> T {
    problem.scalar_curvature_sup(&problem.metric_density(&state.phi, state.t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport<T> {
    pub tolerance: T,
    /// Largest `phi_low - phi_high` seen.
    pub max_violation: T,
    /// `(t, sup (phi_high - phi_low))` at every accepted step.
    pub gap: Vec<(T, T)>,
    pub ordered: bool,
    pub gap_nonincreasing: bool,
}

impl<T: Real> ComparisonReport<T> {
    pub fn passed(&self) -> bool {
        self.ordered && self.gap_nonincreasing
    }
}

/// Runs ordered initial potentials in lockstep and checks they stay
/// ordered to `10 * newton_tol` with a non-increasing sup gap.
pub fn comparison_check<T: Real>(
    problem: &FlowProblem<T>,
    phi0_low: ScalarField<T>,
    phi0_high: ScalarField<T>,
) -> Result<ComparisonReport<T>, FlowError> {
    let tolerance = T::lit(10.0) * problem.config.stepper.newton_tol;
    let mut max_violation = T::neg_infinity();
    let mut gap = Vec::new();
    run_lockstep(&[problem, problem], vec![phi0_low, phi0_high], |t, phis| {
        let diff = phis[1].sub(phis[0]);
        max_violation = max_violation.max(-diff.min());
        gap.push((t, diff.max()));
    })?;
    let ordered = max_violation <= tolerance;
    let gap_nonincreasing = gap.windows(2).all(|w| w[1].1 <= w[0].1 + tolerance);
    Ok(ComparisonReport { tolerance, max_violation, gap, ordered, gap_nonincreasing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationAxis {
    S,
    W,
    R,
}

impl PerturbationAxis {
    fn get<T: Copy>(self, p: &PerturbationParams<T>) -> T {
        match self {
            Self::S => p.s,
            Self::W => p.w,
            Self::R => p.r,
        }
    }

    /// Whether `phi` increases with the parameter.
    pub fn increasing(self) -> bool {
        !matches!(self, Self::R)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport<T> {
    pub axis: PerturbationAxis,
    pub sample_times: Vec<T>,
    pub tolerance: T,
    /// Largest ordering violation over consecutive members and sampled times.
    pub max_violation: T,
    /// `sup` over the region of consecutive member differences at the last sample.
    pub region_gaps: Vec<T>,
}

impl<T: Real> MonotonicityReport<T> {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

fn family_problems<T: Real>(
    base: &FlowConfig<T>,
    family: &[PerturbationParams<T>],
    sample_times: &[T],
) -> Result<Vec<FlowProblem<T>>, FlowError> {
    let mut checkpoints = base.checkpoints.clone();
    checkpoints.extend_from_slice(sample_times);
    family
        .iter()
        .map(|p| {
            let mut cfg = base.clone().with_perturbation(*p);
            cfg.checkpoints = checkpoints.clone();
            FlowProblem::new(cfg)
        })
        .collect()
}

fn run_family<T: Real>(problems: &[FlowProblem<T>], phi0: &ScalarField<T>) -> Result<Vec<FlowState<T>>, FlowError> {
    let refs: Vec<&FlowProblem<T>> = problems.iter().collect();
    run_lockstep(&refs, vec![phi0.clone(); problems.len()], |_, _| {})
}

/// Checks the family is ordered along `axis` at each sample time:
/// increasing in `s` and `w`, decreasing in `r`.
pub fn perturbation_monotonicity_check<T: Real>(
    base: &FlowConfig<T>,
    phi0: &ScalarField<T>,
    family: &[PerturbationParams<T>],
    axis: PerturbationAxis,
    sample_times: &[T],
) -> Result<MonotonicityReport<T>, FlowError> {
    if family.windows(2).any(|w| axis.get(&w[0]) > axis.get(&w[1])) {
        return Err(FlowError::Config("family must be sorted along the axis".into()));
    }
    let problems = family_problems(base, family, sample_times)?;
    let states = run_family(&problems, phi0)?;
    let tolerance = T::lit(10.0) * base.stepper.newton_tol;
    let mut max_violation = T::neg_infinity();
    let mut region_gaps = Vec::new();
    for (k, pair) in states.windows(2).enumerate() {
        for &t in sample_times {
            let lo = &pair[0].snapshot_at(t).expect("sample time is a checkpoint").phi;
            let hi = &pair[1].snapshot_at(t).expect("sample time is a checkpoint").phi;
            // increasing axis: phi_k <= phi_{k+1}
            let diff = if axis.increasing() { lo.sub(hi) } else { hi.sub(lo) };
            max_violation = max_violation.max(diff.max());
        }
        let last = *sample_times.last().expect("at least one sample time");
        let a = &pair[0].snapshot_at(last).expect("checkpoint").phi;
        let b = &pair[1].snapshot_at(last).expect("checkpoint").phi;
        region_gaps.push(problems[k].region_sup_distance(a, b));
    }
    Ok(MonotonicityReport { axis, sample_times: sample_times.to_vec(), tolerance, max_violation, region_gaps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLimitReport<T> {
    /// Region sup distance to the unperturbed run at the last sample time,
    /// one per family member.
    pub gaps: Vec<T>,
    /// The same distance for the `s = 0.01` reference run.
    pub reference_gap: T,
}

impl<T: Real> PerturbationLimitReport<T> {
    pub fn passed(&self) -> bool {
        let shrinking = self.gaps.windows(2).all(|w| w[1] <= w[0]);
        shrinking && self.gaps.last().is_some_and(|&g| g <= T::lit(2.0) * self.reference_gap)
    }
}

/// Runs a family with `(s, w, r) -> 0` against the unperturbed flow and an
/// `s = 0.01` reference, comparing on the region away from degeneracy.
pub fn perturbation_limit_check<T: Real>(
    base: &FlowConfig<T>,
    phi0: &ScalarField<T>,
    family: &[PerturbationParams<T>],
    sample_time: T,
) -> Result<PerturbationLimitReport<T>, FlowError> {
    let mut members = vec![PerturbationParams::default(), PerturbationParams::new(T::lit(0.01), T::zero(), T::zero())];
    members.extend_from_slice(family);
    let problems = family_problems(base, &members, &[sample_time])?;
    let states = run_family(&problems, phi0)?;
    let at = |k: usize| &states[k].snapshot_at(sample_time).expect("checkpoint").phi;
    let unperturbed = at(0);
    let reference_gap = problems[0].region_sup_distance(at(1), unperturbed);
    let gaps = (2..members.len()).map(|k| problems[0].region_sup_distance(at(k), unperturbed)).collect();
    Ok(PerturbationLimitReport { gaps, reference_gap })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedReport<T> {
    pub tol: T,
    pub final_gap: T,
    /// Smallest `C` with `sup d phi/dt <= C t e^{-t}` on `[1, t_end]`.
    pub fitted_c: T,
    /// `C` fitted on `[1, t_fit]` also bounds the tail `(t_fit, t_end]`.
    pub fit_holds_on_tail: bool,
    /// Rate level below which the tail checks stop distinguishing values.
    pub roundoff_floor: T,
    pub l1_monotone: bool,
    pub final_phi_dot_l1: T,
    pub final_state: FlowState<T>,
    pub phi_inf: ScalarField<T>,
}

impl<T: Real> NormalizedReport<T> {
    pub fn passed(&self) -> bool {
        self.final_gap <= self.tol && self.fit_holds_on_tail && self.l1_monotone && self.final_phi_dot_l1 < self.tol
    }
}

/// Limit of the normalized flow: `chi + s + (1/2) Delta phi = e^phi F`.
pub fn normalized_fixed_point<T: Real>(problem: &FlowProblem<T>, tol: T) -> Result<ScalarField<T>, FlowError> {
    let limit_form = problem.chi.shift(problem.config.perturbation.s);
    Ok(solve_semilinear_ma(&problem.ops, &limit_form, &problem.f_eff, tol)?.phi)
}

/// Runs the normalized flow and checks convergence to the semilinear limit.
pub fn normalized_convergence_check<T: Real>(
    config: &FlowConfig<T>,
    phi0: ScalarField<T>,
    tol: T,
    t_fit: T,
) -> Result<NormalizedReport<T>, FlowError> {
    if config.mode != FlowMode::Normalized || !matches!(config.chi, ChiMode::Prescribed { .. }) {
        return Err(FlowError::Config("normalized convergence needs normalized mode and prescribed chi".into()));
    }
    let problem = FlowProblem::new(config.clone())?;
    let phi_inf = normalized_fixed_point(&problem, T::lit(1e-13))?;
    let problem = problem.with_fixed_point(phi_inf.clone());
    let mut states = run_lockstep(&[&problem], vec![phi0], |_, _| {})?;
    let state = states.pop().expect("one state");
    let one = T::one();
    let bound = |t: T| t * (-t).exp();
    let fit = |lo: T, hi: T| {
        state
            .monitors
            .records
            .iter()
            .filter(|r| r.t >= lo && r.t <= hi)
            .fold(T::zero(), |c, r| c.max(r.phi_dot_sup / bound(r.t)))
    };
    let fitted_c = fit(one, config.t_end);
    let head_c = fit(one, t_fit);
    // rounding in (1/2) Delta phi bounds how small a computed rate can get
    let roundoff_floor = T::lit(10.0) * T::epsilon() * problem.ops.spectral_radius() * T::lit(0.5) * phi_inf.max_abs();
    let fit_holds_on_tail = state
        .monitors
        .records
        .iter()
        .filter(|r| r.t > t_fit)
        .all(|r| r.phi_dot_sup <= head_c * bound(r.t) + roundoff_floor);
    let tail: Vec<T> = state.monitors.records.iter().filter(|r| r.t >= one).map(|r| r.phi_dot_l1).collect();
    let l1_monotone = tail.windows(2).all(|w| w[1] <= w[0].max(roundoff_floor));
    let final_gap = state.phi.sup_distance(&phi_inf);
    let final_phi_dot_l1 = state.monitors.last().map(|r| r.phi_dot_l1).unwrap_or_else(T::nan);
    Ok(NormalizedReport {
        tol,
        final_gap,
        fitted_c,
        fit_holds_on_tail,
        roundoff_floor,
        l1_monotone,
        final_phi_dot_l1,
        final_state: state,
        phi_inf,
    })
}
