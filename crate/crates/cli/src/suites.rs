//! Named check suites. Each suite is deterministic given its seed and
//! returns named checks; wall-clock limits are left to the caller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ricci_mmp_core::density::{DensitySpec, PerturbationParams, TrigPoly};
use ricci_mmp_core::elliptic::{bump_pairs, stability_experiment};
use ricci_mmp_core::flow::{run_flow, ChiMode, FlowConfig, FlowProblem};
use ricci_mmp_core::flow_checks::{
    comparison_check, normalized_convergence_check, perturbation_limit_check, perturbation_monotonicity_check,
    rough_initial_potential, within_relative, PerturbationAxis,
};
use ricci_mmp_core::grid::{LaplacianKind, PeriodicGrid, ScalarField, SpectralOps};
use ricci_mmp_core::io::{field_bytes, monitors_csv};
use ricci_mmp_core::mmp::{run_mmp_with_scaling, ContractionKind, MmpPair, MmpTerminal};
use ricci_mmp_core::sphere::{extinction_experiment, normalized_run, LatitudeGrid, SphereStepper};
use ricci_mmp_core::toric::{iterated_blow_up, NefThreshold};
use ricci_mmp_core::{ExactField, Pair, Rational};

use crate::bundled;
use crate::parallel;
use crate::runner::{engine, execute, flow_checks, flow_runs, sweep_rows, Check, RunError};
use crate::scenario::{Job, ScenarioKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteInfo {
    pub name: &'static str,
    pub checks: &'static str,
}

/// All suites, in the order they are listed and run.
pub const SUITES: [SuiteInfo; 11] = [
    SuiteInfo { name: "thm48_rationality", checks: "nef thresholds are exact rationals on the blow-up corpus" },
    SuiteInfo { name: "mmp_golden_trace", checks: "scaling traces of the plane and the first Hirzebruch surface" },
    SuiteInfo { name: "thm55_timeline", checks: "singular times accumulate as T_i = T_(i-1) + 1/lambda_i" },
    SuiteInfo { name: "thmA1_volume_band", checks: "rough data smooths instantly inside a grid-stable volume band" },
    SuiteInfo { name: "classflow_linearity", checks: "the class mass moves linearly in every bundled flow" },
    SuiteInfo { name: "comparison_uniqueness", checks: "ordered initial data stay ordered; reruns are bit-identical" },
    SuiteInfo {
        name: "perturbation_monotonicity",
        checks: "potentials are monotone in (s, w, r) and converge as they vanish",
    },
    SuiteInfo {
        name: "thm28_stability",
        checks: "sup distance of potentials is controlled by a power of the L1 distance",
    },
    SuiteInfo {
        name: "thm56_normalized_convergence",
        checks: "normalized flow converges to the fixed point at rate t e^-t",
    },
    SuiteInfo { name: "thm61_sphere_extinction", checks: "the sphere goes extinct at the nef threshold A0 / 4 pi" },
    SuiteInfo { name: "thmA2_scalar_curvature", checks: "scalar curvature stays bounded away from the singular point" },
];

pub fn find(name: &str) -> Option<&'static SuiteInfo> {
    SUITES.iter().find(|s| s.name == name)
}

/// `name  description` lines in suite order.
pub fn list_suites() -> String {
    let width = SUITES.iter().map(|s| s.name.len()).max().unwrap_or(0);
    SUITES.iter().map(|s| format!("{:width$}  {}\n", s.name, s.checks)).collect()
}

pub fn run_suite(name: &str, seed: u64) -> Result<Vec<Check>, RunError> {
    match name {
        "thm48_rationality" => rationality(seed),
        "mmp_golden_trace" => golden_traces(),
        "thm55_timeline" => timeline(seed),
        "thmA1_volume_band" => bundled_flow_checks("smoothing_sweep.json"),
        "classflow_linearity" => class_linearity(),
        "comparison_uniqueness" => comparison(seed),
        "perturbation_monotonicity" => perturbation(),
        "thm28_stability" => stability(seed),
        "thm56_normalized_convergence" => normalized_convergence(),
        "thm61_sphere_extinction" => sphere_extinction(),
        "thmA2_scalar_curvature" => bundled_flow_checks("scalar_curvature.json"),
        other => Err(RunError::Engine(format!("unknown suite {other:?}"))),
    }
}

pub const CORPUS_SIZE: usize = 50;

/// Blow-up recipes for the seeded corpus: up to six blow-ups of the plane
/// at random cones with multipliers 2 or 3.
pub fn blow_up_corpus(seed: u64, count: usize) -> Vec<Vec<(usize, i64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let k = rng.gen_range(0..=6);
            (0..k).map(|_| (rng.gen_range(0..16), rng.gen_range(2..4))).collect()
        })
        .collect()
}

pub fn corpus_pairs(seed: u64) -> Result<Vec<Pair>, RunError> {
    blow_up_corpus(seed, CORPUS_SIZE)
        .iter()
        .map(|steps| {
            let (fan, h) = iterated_blow_up::<Rational>(steps).map_err(engine)?;
            MmpPair::new(fan, h).map_err(engine)
        })
        .collect()
}

fn failures(name: &str, bad: &[String], total: usize) -> Check {
    let detail = if bad.is_empty() {
        format!("{total} of {total} hold")
    } else {
        format!("{} of {total} fail: {}", bad.len(), bad.join("; "))
    };
    Check::new(name, bad.is_empty(), detail)
}

fn rationality(seed: u64) -> Result<Vec<Check>, RunError> {
    let pairs = corpus_pairs(seed)?;
    let step = Rational::from_frac(1, 1000);
    let (mut infinite, mut not_nef, mut still_nef) = (Vec::new(), Vec::new(), Vec::new());
    let mut largest_denominator = 1i64;
    for (k, pair) in pairs.iter().enumerate() {
        let t = match pair.fan.nef_threshold(&pair.h).map_err(engine)? {
            NefThreshold::Finite(t) => t,
            NefThreshold::Infinity => {
                infinite.push(format!("#{k}"));
                continue;
            }
        };
        let k_div = pair.fan.canonical_divisor::<Rational>();
        if !pair.fan.is_nef(&pair.h.plus_scaled(&t, &k_div)).map_err(engine)? {
            not_nef.push(format!("#{k} at t* = {t}"));
        }
        let past = t.clone() + step.clone();
        if pair.fan.is_nef(&pair.h.plus_scaled(&past, &k_div)).map_err(engine)? {
            still_nef.push(format!("#{k} at t* + 1/1000"));
        }
        if let Ok(d) = i64::try_from(t.denom().clone()) {
            largest_denominator = largest_denominator.max(d);
        }
    }
    let mut finite = failures("threshold_finite", &infinite, pairs.len());
    finite.detail.push_str(&format!(", largest denominator {largest_denominator}"));
    Ok(vec![
        finite,
        failures("nef_at_threshold", &not_nef, pairs.len()),
        failures("not_nef_past_threshold", &still_nef, pairs.len()),
    ])
}

fn bundled_job(file: &str) -> Result<(crate::scenario::Scenario, Job), RunError> {
    let scenario = bundled::scenario(file).ok_or_else(|| RunError::Engine(format!("no bundled scenario {file}")))?;
    let job = scenario.job()?;
    Ok((scenario, job))
}

fn golden_traces() -> Result<Vec<Check>, RunError> {
    let mut checks = Vec::new();
    for file in ["f1_blowdown.json", "f1_fibration.json", "p2_hyperplane.json"] {
        let (scenario, job) = bundled_job(file)?;
        let report = execute(&scenario, &job)?;
        checks.extend(
            report.checks.into_iter().map(|c| Check::new(format!("{}/{}", scenario.name, c.name), c.passed, c.detail)),
        );
    }
    Ok(checks)
}

fn timeline(seed: u64) -> Result<Vec<Check>, RunError> {
    let pairs = corpus_pairs(seed)?;
    let (mut law, mut too_long, mut not_ample, mut other) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut diagnosed = Vec::new();
    for (k, pair) in pairs.iter().enumerate() {
        let trace = run_mmp_with_scaling(pair).map_err(engine)?;
        let mut prev = Rational::from_int(0);
        for (i, s) in trace.steps.iter().enumerate() {
            if s.t != prev.clone() + Rational::from_int(1) / s.lambda.clone() {
                law.push(format!("#{k} step {i}"));
            }
            prev = s.t.clone();
            if let Some(next) = &s.pair_after {
                if !next.fan.is_ample(&next.h).map_err(engine)? {
                    not_ample.push(format!("#{k} step {i}"));
                }
            }
        }
        let divisorial = trace.steps.iter().filter(|s| matches!(s.kind, ContractionKind::Divisorial(_))).count();
        if divisorial + 3 > pair.fan.len() {
            too_long.push(format!("#{k}: {divisorial} steps on {} rays", pair.fan.len()));
        }
        if let MmpTerminal::NotGoodDivisor(o) = &trace.terminal {
            diagnosed.push(format!("#{k} at T = {}", o.t));
        }
        let v = trace.violations();
        if !v.is_empty() {
            other.push(format!("#{k}: {}", v.join(", ")));
        }
    }
    let n = pairs.len();
    Ok(vec![
        failures("time_law", &law, n),
        failures("divisorial_steps_bounded", &too_long, n),
        failures("pushforwards_ample", &not_ample, n),
        Check::new(
            "terminated",
            true,
            format!(
                "{} reach a terminal model, {} stop at an ambiguous extremal ray: {}",
                n - diagnosed.len(),
                diagnosed.len(),
                diagnosed.join(", ")
            ),
        ),
        failures("trace_invariants", &other, n),
    ])
}

fn bundled_flow_checks(file: &str) -> Result<Vec<Check>, RunError> {
    let (scenario, job) = bundled_job(file)?;
    let Job::Flow(p) = job else {
        return Err(RunError::Engine(format!("{file} is not a flow scenario")));
    };
    let runs = flow_runs(&p, scenario.seed)?;
    let rows = sweep_rows(&p, &runs);
    Ok(flow_checks(&p, &runs, &rows))
}

fn class_linearity() -> Result<Vec<Check>, RunError> {
    let mut checks = Vec::new();
    for (file, scenario) in bundled::all() {
        if scenario.kind != ScenarioKind::Flow {
            continue;
        }
        let all = bundled_flow_checks(file)?;
        checks.extend(
            all.into_iter()
                .filter(|c| c.name.starts_with("class_linearity"))
                .map(|c| Check::new(format!("{}/{}", scenario.name, c.name), c.passed, c.detail)),
        );
    }
    Ok(checks)
}

fn comparison(seed: u64) -> Result<Vec<Check>, RunError> {
    const PAIRS: u64 = 20;
    let cases: Vec<(u64, LaplacianKind)> = (0..PAIRS)
        .flat_map(|k| {
            [LaplacianKind::Spectral, LaplacianKind::FiniteDifference].map(|kind| (seed.wrapping_add(k), kind))
        })
        .collect();
    let results = parallel::map(&cases, |&(case_seed, kind)| {
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let g0 = DensitySpec::smooth(TrigPoly::random(&mut rng, 1.0, 0.5, 3, 3));
        let f = DensitySpec::smooth(TrigPoly::random(&mut rng, 1.0, 0.5, 3, 3));
        let cfg = FlowConfig::new(64, g0, f, ChiMode::FromF, 1.0).with_laplacian(kind);
        let problem = FlowProblem::new(cfg)?;
        let low = TrigPoly::random(&mut rng, 0.0, 0.003, 1, 3).sample(problem.grid());
        let bump = TrigPoly::random(&mut rng, 1.0, 0.9, 1, 2).sample(problem.grid()).scale(0.005);
        let high = low.add(&bump);
        comparison_check(&problem, low, high)
    });
    let mut bad = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for ((case_seed, kind), r) in cases.iter().zip(results) {
        let r = r.map_err(engine)?;
        worst = worst.max(r.max_violation);
        if !r.passed() {
            bad.push(format!("seed {case_seed} {kind:?}: violation {}", r.max_violation));
        }
    }
    let mut ordered = failures("ordered_pairs", &bad, cases.len());
    ordered.detail.push_str(&format!(", worst low - high {worst} (tolerance {})", 10.0 * 1e-10));

    // the same configuration run twice, once per thread
    let f = DensitySpec::constant(1.0).with_pole([0.3, 0.6], 0.5).with_zero([0.7, 0.2], 1.0);
    let cfg = FlowConfig::new(64, DensitySpec::constant(1.0), f, ChiMode::FromF, 0.5);
    let runs = parallel::map(&[cfg.clone(), cfg], |c| -> Result<(String, Vec<u8>), RunError> {
        let p = FlowProblem::new(c.clone()).map_err(engine)?;
        let s = run_flow(&p, ScalarField::zeros(p.grid())).map_err(engine)?;
        Ok((monitors_csv(&s.monitors), field_bytes(&s.phi)))
    });
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>()?;
    let identical = runs[0] == runs[1];
    let determinism = Check::new(
        "identical_runs_bit_identical",
        identical,
        format!("{} monitor bytes, {} field bytes", runs[0].0.len(), runs[0].1.len()),
    );
    Ok(vec![ordered, determinism])
}

fn perturbation_base() -> FlowConfig<f64> {
    let f = DensitySpec::smooth(TrigPoly::constant(1.0).with_cos(1, 0, 0.2))
        .with_zero([0.25, 0.25], 1.0)
        .with_pole([0.75, 0.75], 0.5);
    FlowConfig::new(64, DensitySpec::constant(1.0), f, ChiMode::Zero, 1.0)
}

fn perturbation() -> Result<Vec<Check>, RunError> {
    let base = perturbation_base();
    let phi0 = ScalarField::zeros(PeriodicGrid::new(base.n).map_err(engine)?);
    let times = [0.1, 0.5, 1.0];
    let family = |axis: PerturbationAxis, values: [f64; 3]| -> Vec<PerturbationParams<f64>> {
        values
            .iter()
            .map(|&v| match axis {
                PerturbationAxis::S => PerturbationParams::new(v, 0.0, 0.0),
                PerturbationAxis::W => PerturbationParams::new(0.0, v, 0.0),
                PerturbationAxis::R => PerturbationParams::new(0.0, 0.0, v),
            })
            .collect()
    };
    let sweeps = [
        (PerturbationAxis::R, [0.001, 0.01, 0.1]),
        (PerturbationAxis::W, [0.001, 0.01, 0.1]),
        (PerturbationAxis::S, [0.0, 0.01, 0.1]),
    ];
    let monotone = parallel::map(&sweeps, |&(axis, values)| {
        perturbation_monotonicity_check(&base, &phi0, &family(axis, values), axis, &times)
    });
    let mut checks = Vec::new();
    for ((axis, values), r) in sweeps.iter().zip(monotone) {
        let r = r.map_err(engine)?;
        let direction = if axis.increasing() { "increasing" } else { "decreasing" };
        checks.push(Check::new(
            format!("monotone_in_{}", format!("{axis:?}").to_lowercase()),
            r.passed(),
            format!(
                "{direction} over {values:?} at t = {times:?}: worst violation {} (tolerance {})",
                r.max_violation, r.tolerance
            ),
        ));
    }
    let limit: Vec<_> =
        [1.0, 0.1, 0.01].iter().map(|&k| PerturbationParams::new(0.01 * k, 0.01 * k, 0.01 * k)).collect();
    let r = perturbation_limit_check(&base, &phi0, &limit, 1.0).map_err(engine)?;
    checks.push(Check::new(
        "vanishing_perturbation_limit",
        r.passed(),
        format!("region gaps {:?} at t = 1, reference s = 0.01 gap {}", r.gaps, r.reference_gap),
    ));
    Ok(checks)
}

pub const STABILITY_PAIRS: usize = 100;
pub const STABILITY_EPSILON: f64 = 0.05;

fn stability(seed: u64) -> Result<Vec<Check>, RunError> {
    let sweep = crate::scenario::StabilitySweep {
        pairs: STABILITY_PAIRS,
        epsilon: STABILITY_EPSILON,
        amplitude: 0.8,
        max_mode: 4,
        terms: 5,
        refine_rel: Some(0.2),
    };
    let pairs = crate::runner::random_pairs(&sweep, seed);
    let fits = parallel::map(&[128usize, 256], |&n| -> Result<f64, RunError> {
        let ops = SpectralOps::new(PeriodicGrid::new(n).map_err(engine)?, LaplacianKind::Spectral);
        let g0 = ScalarField::constant(ops.grid(), 1.0);
        Ok(crate::runner::parallel_stability(&ops, &g0, &pairs, STABILITY_EPSILON)?.fitted_c)
    });
    let fits: Vec<f64> = fits.into_iter().collect::<Result<_, _>>()?;
    let (coarse, fine) = (fits[0], fits[1]);
    let mut checks = vec![Check::new(
        "fitted_constant_grid_stable",
        coarse.is_finite() && coarse > 0.0 && within_relative(coarse, fine, 0.2),
        format!("C = {coarse} at n = 128, {fine} at n = 256 over {STABILITY_PAIRS} pairs"),
    )];

    // concentrated perturbations of one density: ratio must not grow as delta shrinks
    let ops = SpectralOps::new(PeriodicGrid::new(128).map_err(engine)?, LaplacianKind::Spectral);
    let g0 = ScalarField::constant(ops.grid(), 1.0);
    let base = TrigPoly::constant(1.0).with_sin(1, 0, 0.3).sample(ops.grid());
    let deltas = [1e-1, 1e-2, 1e-3, 1e-4];
    let report = stability_experiment(&ops, &g0, &bump_pairs(&base, (0.3, 0.6), 0.05, &deltas), STABILITY_EPSILON)
        .map_err(engine)?;
    let ratios: Vec<f64> = report.rows.iter().map(|r| r.ratio.unwrap_or(f64::NAN)).collect();
    let bounded = ratios.iter().all(|r| r.is_finite()) && ratios.windows(2).all(|w| w[1] <= w[0]);
    checks.push(Check::new("bump_sweep_direction", bounded, format!("ratios {ratios:?} for delta {deltas:?}")));
    Ok(checks)
}

fn normalized_convergence() -> Result<Vec<Check>, RunError> {
    let chi = DensitySpec::smooth(TrigPoly::constant(1.0).with_cos(0, 1, 0.3));
    let cfg = FlowConfig::<f64>::new(
        128,
        DensitySpec::constant(1.0),
        DensitySpec::constant(1.0),
        ChiMode::Prescribed { density: chi },
        30.0,
    )
    .normalized();
    let problem = FlowProblem::new(cfg.clone()).map_err(engine)?;
    let rough_target = DensitySpec::constant(1.0).with_pole([0.5, 0.5], 0.6);
    let rough = rough_initial_potential(&problem.ops, &problem.g0, &rough_target, 1e-10).map_err(engine)?;
    let starts = [("smooth", ScalarField::zeros(problem.grid())), ("rough", rough)];
    let reports = parallel::map(&starts, |(_, phi0)| normalized_convergence_check(&cfg, phi0.clone(), 1e-6, 10.0));
    let mut checks = Vec::new();
    let mut finals = Vec::new();
    for ((label, _), r) in starts.iter().zip(reports) {
        let r = r.map_err(engine)?;
        checks.push(Check::new(
            format!("{label}_reaches_fixed_point"),
            r.final_gap < 1e-5,
            format!("sup |phi(30) - phi_inf| = {}", r.final_gap),
        ));
        checks.push(Check::new(
            format!("{label}_rate_bound"),
            r.fitted_c.is_finite() && r.fit_holds_on_tail,
            format!(
                "sup d phi/dt <= C t e^-t with C = {} on [1, 30] (roundoff floor {})",
                r.fitted_c, r.roundoff_floor
            ),
        ));
        checks.push(Check::new(
            format!("{label}_l1_monotone"),
            r.l1_monotone && r.final_phi_dot_l1 < 1e-6,
            format!("final |d phi/dt|_L1 = {}", r.final_phi_dot_l1),
        ));
        finals.push(r.final_state.phi);
    }
    let gap = finals[0].sup_distance(&finals[1]);
    checks.push(Check::new("starts_agree", gap < 1e-5, format!("sup distance between limits {gap}")));
    Ok(checks)
}

pub const SPHERE_PROFILES: [&[f64]; 3] = [&[1.0, 0.0, 0.3], &[2.0, 0.5], &[1.0, 0.2, 0.0, 0.1]];

fn sphere_extinction() -> Result<Vec<Check>, RunError> {
    let grid = LatitudeGrid::<f64>::new(128).map_err(engine)?;
    let stepper = SphereStepper::default();
    let mut checks = Vec::new();
    for coeffs in SPHERE_PROFILES {
        let r = extinction_experiment(&grid, grid.cosine_series(coeffs), 0.02, &stepper).map_err(engine)?;
        checks.push(Check::new(
            format!("extinction_{coeffs:?}"),
            r.passed(),
            format!(
                "measured {} vs A0/(4 pi) = {}, area law error {}, Gauss-Bonnet {}",
                r.measured, r.predicted, r.area_law_error, r.max_gauss_bonnet_residual
            ),
        ));
    }
    let r = normalized_run(&grid, grid.cosine_series(SPHERE_PROFILES[0]), None, 20.0, &stepper).map_err(engine)?;
    checks.push(Check::new(
        "normalized_rounds_out",
        r.passed(1e-3),
        format!("sup |v - mean v| = {} at t = 20, area drift {}", r.roundness, r.area_drift),
    ));
    Ok(checks)
}
