//! Executes scenarios. Every engine result becomes a list of named checks
//! plus in-memory artifacts; nothing touches the disk until the run is over.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ricci_mmp_core::density::{build_density, TrigPoly};
use ricci_mmp_core::elliptic::{solve_linear_ma, solve_semilinear_ma, stability_experiment, StabilityReport};
use ricci_mmp_core::flow::{run_flow, FlowConfig, FlowProblem, FlowState};
use ricci_mmp_core::flow_checks::{rough_initial_potential, volume_band_fit, within_relative};
use ricci_mmp_core::grid::{PeriodicGrid, ScalarField, SpectralOps};
use ricci_mmp_core::io::{field_bytes, field_csv, monitors_csv, sphere_csv, stability_csv};
use ricci_mmp_core::mmp::run_mmp_with_scaling;
use ricci_mmp_core::sphere::{extinction_experiment, normalized_run, LatitudeGrid, SphereConfig, SphereMode};
use ricci_mmp_core::{Field, Spectral};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::output::{json_bytes, write_atomic, Artifact};
use crate::parallel;
use crate::scenario::{
    EllipticPayload, EllipticProblem, FlowPayload, InitialPotential, Job, MmpPayload, Scenario, ScenarioKind,
    SchemaError, StabilitySweep, SuitePayload, SCHEMA_VERSION,
};
use crate::suites;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{0}")]
    Engine(String),
    #[error("writing outputs: {0}")]
    Output(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn engine(e: impl std::fmt::Display) -> RunError {
    RunError::Engine(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paper_ref: Option<String>,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.passed {
            0
        } else {
            1
        }
    }
}

/// Where a run writes: `--out`, else the scenario's `output_dir`, else
/// `out/<name>`.
pub fn output_dir(scenario: &Scenario, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&scenario.name))
}

/// Runs the scenario on a pool of `jobs` threads and writes its outputs.
/// Engine failures leave an `error.json` next to the other outputs.
pub fn run_scenario(scenario: &Scenario, out: Option<&Path>, jobs: Option<usize>) -> Result<RunOutcome, RunError> {
    let job = scenario.job()?;
    let dir = output_dir(scenario, out);
    let result = parallel::pool(jobs).install(|| execute(scenario, &job));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let diagnostic = error_document(scenario, &e);
            write_atomic(&dir, "error.json", &json_bytes(&diagnostic))?;
            return Err(e);
        }
    };
    let mut files: Vec<String> = report.artifacts.iter().map(|a| a.name.clone()).collect();
    files.push("summary.json".into());
    let summary = Summary {
        schema: SCHEMA_VERSION,
        name: scenario.name.clone(),
        kind: scenario.kind,
        seed: scenario.seed,
        paper_ref: scenario.paper_ref.clone(),
        passed: report.passed(),
        checks: report.checks,
        files,
    };
    for a in &report.artifacts {
        write_atomic(&dir, &a.name, &a.bytes)?;
    }
    write_atomic(&dir, "summary.json", &json_bytes(&summary))?;
    Ok(RunOutcome { summary, dir })
}

pub fn error_document(scenario: &Scenario, error: &RunError) -> serde_json::Value {
    json!({
        "schema": SCHEMA_VERSION,
        "name": scenario.name,
        "kind": scenario.kind,
        "seed": scenario.seed,
        "paper_ref": scenario.paper_ref,
        "exit_code": error.exit_code(),
        "error": error.to_string(),
    })
}

/// Runs a parsed job in memory on the current thread pool.
pub fn execute(scenario: &Scenario, job: &Job) -> Result<Report, RunError> {
    match job {
        Job::Mmp(p) => run_mmp_job(p),
        Job::Flow(p) => run_flow_job(p, scenario.seed),
        Job::Elliptic(p) => run_elliptic_job(p, scenario.seed),
        Job::Sphere(p) => run_sphere_job(p),
        Job::Suite(p) => Ok(run_suite_job(p, scenario.seed)),
    }
}

fn run_mmp_job(p: &MmpPayload) -> Result<Report, RunError> {
    let pair = p.pair().map_err(RunError::Engine)?;
    let expect = p.expectation().map_err(RunError::Engine)?;
    let trace = run_mmp_with_scaling(&pair).map_err(engine)?;
    let mut checks = Vec::new();
    let violations = trace.violations();
    checks.push(Check::new("trace_invariants", violations.is_empty(), violations.join("; ")));
    let show = |xs: &[ricci_mmp_core::Rational]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    if let Some(l) = &expect.lambdas {
        let got = trace.lambdas();
        checks.push(Check::new("lambdas", &got == l, format!("[{}] vs expected [{}]", show(&got), show(l))));
    }
    if let Some(t) = &expect.times {
        let got = trace.times();
        checks.push(Check::new("times", &got == t, format!("[{}] vs expected [{}]", show(&got), show(t))));
    }
    if let Some(k) = &expect.kinds {
        let got: Vec<String> = trace.steps.iter().map(|s| s.kind.name().to_string()).collect();
        checks.push(Check::new("kinds", &got == k, format!("{got:?} vs expected {k:?}")));
    }
    if let Some(term) = &expect.terminal {
        let got = trace.terminal_name();
        checks.push(Check::new("terminal", &got == term, format!("{got} vs expected {term}")));
    }
    let artifacts =
        vec![Artifact::json("trace.json", &trace.document()), Artifact::new("trace.txt", trace.render_table())];
    Ok(Report { checks, artifacts })
}

/// One grid of a flow sweep.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub n: usize,
    pub problem: FlowProblem<f64>,
    pub state: FlowState<f64>,
}

pub fn initial_potential(initial: &InitialPotential, problem: &FlowProblem<f64>, seed: u64) -> Result<Field, RunError> {
    Ok(match initial {
        InitialPotential::Zero => ScalarField::zeros(problem.grid()),
        InitialPotential::Rough { target, tol } => {
            rough_initial_potential(&problem.ops, &problem.g0, target, *tol).map_err(engine)?
        }
        InitialPotential::Random { amplitude, max_mode, terms } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            TrigPoly::random(&mut rng, 0.0, *amplitude, *max_mode, *terms).sample(problem.grid())
        }
    })
}

pub fn run_flow_config(config: FlowConfig<f64>, initial: &InitialPotential, seed: u64) -> Result<FlowRun, RunError> {
    let n = config.n;
    let problem = FlowProblem::new(config).map_err(engine)?;
    let phi0 = initial_potential(initial, &problem, seed)?;
    let state = run_flow(&problem, phi0).map_err(|e| RunError::Engine(format!("n = {n}: {e}")))?;
    Ok(FlowRun { n, problem, state })
}

/// Runs every grid of the payload in parallel.
pub fn flow_runs(p: &FlowPayload, seed: u64) -> Result<Vec<FlowRun>, RunError> {
    parallel::map(&p.configs(), |cfg| run_flow_config(cfg.clone(), &p.initial, seed)).into_iter().collect()
}

/// Quantities compared across a grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub max_class_defect: f64,
    pub ddbar_initial: f64,
    pub ddbar_final: f64,
    pub band_c: Option<f64>,
    pub ddbar_sample: Option<f64>,
    pub scal_sup: Option<f64>,
}

pub fn sweep_rows(p: &FlowPayload, runs: &[FlowRun]) -> Vec<SweepRow> {
    runs.iter()
        .map(|run| {
            let log = &run.state.monitors;
            let first = log.records.first().map(|r| r.ddbar_inf).unwrap_or(f64::NAN);
            let last = log.last().map(|r| r.ddbar_inf).unwrap_or(f64::NAN);
            SweepRow {
                n: run.n,
                max_class_defect: log.max_class_defect(),
                ddbar_initial: first,
                ddbar_final: last,
                band_c: p.checks.band.map(|b| volume_band_fit(log, b.t_min).unwrap_or(f64::NAN)),
                ddbar_sample: p
                    .checks
                    .smoothing
                    .map(|s| run.state.snapshot_at(s.t_sample).map(|snap| snap.ddbar_inf).unwrap_or(f64::NAN)),
                scal_sup: p.checks.curvature.map(|c| {
                    let sampled = log.records.iter().filter(|r| r.t >= c.t_min);
                    sampled.fold(f64::NAN, |m, r| if m.is_nan() { r.scal_inf } else { m.max(r.scal_inf) })
                }),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,max_class_defect,ddbar_initial,ddbar_final,band_c,ddbar_sample,scal_sup\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            r.max_class_defect,
            r.ddbar_initial,
            r.ddbar_final,
            opt(r.band_c),
            opt(r.ddbar_sample),
            opt(r.scal_sup)
        );
    }
    out
}

/// Consecutive grids agree to `rel`, measured against the finer one.
fn refinement_check(name: &str, values: &[(usize, f64)], rel: f64) -> Check {
    let finite = values.iter().all(|(_, v)| v.is_finite());
    let stable = values.windows(2).all(|w| within_relative(w[0].1, w[1].1, rel));
    let detail = values.iter().map(|(n, v)| format!("n={n}: {v}")).collect::<Vec<_>>().join(", ");
    Check::new(name, finite && stable, format!("{detail} (rel {rel})"))
}

pub fn flow_checks(p: &FlowPayload, runs: &[FlowRun], rows: &[SweepRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    for (run, row) in runs.iter().zip(rows) {
        let bound = p.checks.class_tol * run.problem.g0.mean();
        checks.push(Check::new(
            format!("class_linearity_n{}", run.n),
            row.max_class_defect <= bound,
            format!("max defect {} over {} samples, bound {bound}", row.max_class_defect, run.state.monitors.len()),
        ));
        checks.push(Check::new(
            format!("time_monotone_n{}", run.n),
            run.state.monitors.is_time_monotone(),
            format!("reached t = {}", run.state.t),
        ));
    }
    if let Some(b) = p.checks.band {
        let values: Vec<_> = rows.iter().map(|r| (r.n, r.band_c.unwrap_or(f64::NAN))).collect();
        checks.push(refinement_check("volume_band_constant", &values, b.rel));
    }
    if let Some(s) = p.checks.smoothing {
        let sample: Vec<f64> = rows.iter().map(|r| r.ddbar_sample.unwrap_or(f64::NAN)).collect();
        let (lo, hi) = sample.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let spread = (hi - lo) / lo;
        checks.push(Check::new(
            "smoothed_ddbar_grid_stable",
            spread.is_finite() && spread < s.spread,
            format!("sup |ddbar phi| at t = {}: {sample:?}, spread {spread} (limit {})", s.t_sample, s.spread),
        ));
        let (first, last) = (rows[0].ddbar_initial, rows[rows.len() - 1].ddbar_initial);
        let growth = last / first;
        checks.push(Check::new(
            "initial_ddbar_unbounded",
            growth > s.initial_growth,
            format!("sup |ddbar phi0| grows {growth}x from n={} to n={}", rows[0].n, rows[rows.len() - 1].n),
        ));
    }
    if let Some(c) = p.checks.curvature {
        let values: Vec<_> = rows.iter().map(|r| (r.n, r.scal_sup.unwrap_or(f64::NAN))).collect();
        checks.push(refinement_check("region_scalar_curvature", &values, c.rel));
    }
    checks
}

pub fn run_flow_job(p: &FlowPayload, seed: u64) -> Result<Report, RunError> {
    let runs = flow_runs(p, seed)?;
    let rows = sweep_rows(p, &runs);
    let checks = flow_checks(p, &runs, &rows);
    let mut artifacts = Vec::new();
    for run in &runs {
        artifacts.push(Artifact::new(format!("monitors_n{}.csv", run.n), monitors_csv(&run.state.monitors)));
        artifacts.push(Artifact::new(format!("phi_n{}.bin", run.n), field_bytes(&run.state.phi)));
        for snap in &run.state.snapshots {
            artifacts.push(Artifact::new(format!("phi_n{}_t{}.bin", run.n, snap.t), field_bytes(&snap.phi)));
        }
    }
    artifacts.push(Artifact::new("sweep.csv", sweep_csv(&rows)));
    Ok(Report { checks, artifacts })
}

fn spectral(n: usize, kind: ricci_mmp_core::grid::LaplacianKind) -> Result<Spectral, RunError> {
    Ok(SpectralOps::new(PeriodicGrid::new(n).map_err(engine)?, kind))
}

/// Random `(f, g)` pairs with mean near one; the same polynomials are
/// sampled on every grid.
pub fn random_pairs(sweep: &StabilitySweep, seed: u64) -> Vec<(TrigPoly<f64>, TrigPoly<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sweep.pairs)
        .map(|_| {
            let f = TrigPoly::random(&mut rng, 1.0, sweep.amplitude, sweep.max_mode, sweep.terms);
            let g = TrigPoly::random(&mut rng, 1.0, sweep.amplitude, sweep.max_mode, sweep.terms);
            (f, g)
        })
        .collect()
}

/// Stability experiment split into chunks solved in parallel; pair ids
/// refer to positions in `pairs`.
pub fn parallel_stability(
    ops: &Spectral,
    g0: &Field,
    pairs: &[(TrigPoly<f64>, TrigPoly<f64>)],
    epsilon: f64,
) -> Result<StabilityReport<f64>, RunError> {
    const CHUNK: usize = 5;
    let chunks: Vec<_> = pairs.chunks(CHUNK).collect();
    let parts = parallel::map(&chunks, |chunk| {
        let sampled: Vec<_> = chunk.iter().map(|(f, g)| (f.sample(ops.grid()), g.sample(ops.grid()))).collect();
        stability_experiment(ops, g0, &sampled, epsilon)
    });
    let mut merged =
        StabilityReport { exponent: 1.0 / (4.0 + epsilon), rows: Vec::new(), fitted_c: 0.0, skipped: Vec::new() };
    for (k, part) in parts.into_iter().enumerate() {
        let part = part.map_err(engine)?;
        let offset = k * CHUNK;
        merged.fitted_c = merged.fitted_c.max(part.fitted_c);
        merged.skipped.extend(part.skipped.iter().map(|id| id + offset));
        merged.rows.extend(part.rows.into_iter().map(|mut r| {
            r.pair_id += offset;
            r
        }));
    }
    Ok(merged)
}

fn run_elliptic_job(p: &EllipticPayload, seed: u64) -> Result<Report, RunError> {
    let ops = spectral(p.n, p.laplacian)?;
    let grid = ops.grid();
    let (solution, g0) = match &p.problem {
        EllipticProblem::Linear { g0, f } => {
            let g0 = build_density(grid, g0).map_err(engine)?;
            let f = build_density(grid, f).map_err(engine)?;
            (solve_linear_ma(&ops, &g0, &f, p.tol).map_err(engine)?, Some(g0))
        }
        EllipticProblem::Semilinear { chi, f } => {
            let chi = build_density(grid, chi).map_err(engine)?;
            let f = build_density(grid, f).map_err(engine)?;
            (solve_semilinear_ma(&ops, &chi, &f, p.tol).map_err(engine)?, None)
        }
    };
    let mut checks = vec![
        Check::new(
            "residual",
            solution.residual <= p.tol,
            format!("{} after {} iterations (tol {})", solution.residual, solution.iterations, p.tol),
        ),
        Check::new("positive_density", solution.is_positive(), format!("min density {}", solution.min_density)),
    ];
    let mut artifacts = vec![
        Artifact::new("phi.bin", field_bytes(&solution.phi)),
        Artifact::new("phi.csv", field_csv(&solution.phi)),
        Artifact::json(
            "solution.json",
            &json!({
                "n": p.n,
                "c": solution.c,
                "residual": solution.residual,
                "iterations": solution.iterations,
                "min_density": solution.min_density,
            }),
        ),
    ];
    if let (Some(sweep), Some(g0)) = (&p.stability, g0) {
        let pairs = random_pairs(sweep, seed);
        let report = parallel_stability(&ops, &g0, &pairs, sweep.epsilon)?;
        checks.push(Check::new(
            "stability_constant_finite",
            report.fitted_c.is_finite() && report.fitted_c > 0.0,
            format!("C = {} over {} pairs, {} skipped", report.fitted_c, report.rows.len(), report.skipped.len()),
        ));
        artifacts.push(Artifact::new("stability.csv", stability_csv(&report)));
        if let Some(rel) = sweep.refine_rel {
            let fine_ops = spectral(2 * p.n, p.laplacian)?;
            let EllipticProblem::Linear { g0: spec, .. } = &p.problem else { unreachable!("validated") };
            let fine_g0 = build_density(fine_ops.grid(), spec).map_err(engine)?;
            let fine = parallel_stability(&fine_ops, &fine_g0, &pairs, sweep.epsilon)?;
            checks.push(refinement_check(
                "stability_constant_grid_stable",
                &[(p.n, report.fitted_c), (2 * p.n, fine.fitted_c)],
                rel,
            ));
            artifacts.push(Artifact::new("stability_refined.csv", stability_csv(&fine)));
        }
    }
    Ok(Report { checks, artifacts })
}

fn run_sphere_job(cfg: &SphereConfig<f64>) -> Result<Report, RunError> {
    let grid = LatitudeGrid::new(cfg.m).map_err(engine)?;
    let v0 = grid.cosine_series(&cfg.v0);
    match cfg.mode {
        SphereMode::Unnormalized => {
            let tol = cfg.extinction_tol.unwrap_or(0.02);
            let r = extinction_experiment(&grid, v0, tol, &cfg.stepper).map_err(engine)?;
            let checks = vec![
                Check::new(
                    "extinction_time",
                    r.relative_error <= 0.02,
                    format!("measured {} vs A0/(4 pi) = {} (rel error {})", r.measured, r.predicted, r.relative_error),
                ),
                Check::new("area_law", r.area_law_error <= 0.01, format!("max rel deviation {}", r.area_law_error)),
                Check::new(
                    "gauss_bonnet",
                    r.max_gauss_bonnet_residual <= 0.005,
                    format!("max residual {}", r.max_gauss_bonnet_residual),
                ),
            ];
            let summary = json!({
                "initial_area": r.initial_area,
                "predicted": r.predicted,
                "measured": r.measured,
                "relative_error": r.relative_error,
                "area_law_error": r.area_law_error,
                "max_gauss_bonnet_residual": r.max_gauss_bonnet_residual,
            });
            Ok(Report {
                checks,
                artifacts: vec![
                    Artifact::new("sphere.csv", sphere_csv(&r.log)),
                    Artifact::json("extinction.json", &summary),
                ],
            })
        }
        SphereMode::Normalized => {
            let t_end = cfg.t_end.ok_or_else(|| RunError::Engine("normalized run without t_end".into()))?;
            let r = normalized_run(&grid, v0, cfg.t0, t_end, &cfg.stepper).map_err(engine)?;
            let checks = vec![
                Check::new(
                    "roundness",
                    r.roundness < 1e-3,
                    format!("sup |v - mean v| = {} at t = {t_end}", r.roundness),
                ),
                Check::new("area_conserved", r.area_drift <= 0.005, format!("max rel drift {}", r.area_drift)),
                Check::new(
                    "gauss_bonnet",
                    r.max_gauss_bonnet_residual <= 0.005,
                    format!("max residual {}", r.max_gauss_bonnet_residual),
                ),
            ];
            let v_final: String =
                grid.theta().iter().zip(&r.final_state.v).fold(String::from("theta,v\n"), |mut s, (t, v)| {
                    let _ = writeln!(s, "{t},{v}");
                    s
                });
            let summary = json!({
                "t0": r.t0,
                "roundness": r.roundness,
                "area_drift": r.area_drift,
                "max_gauss_bonnet_residual": r.max_gauss_bonnet_residual,
            });
            Ok(Report {
                checks,
                artifacts: vec![
                    Artifact::new("sphere.csv", sphere_csv(&r.log)),
                    Artifact::new("v_final.csv", v_final),
                    Artifact::json("normalized.json", &summary),
                ],
            })
        }
    }
}

/// Per-suite results of a suite scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn run_suite_job(p: &SuitePayload, seed: u64) -> Report {
    let names = p.selected();
    let results: Vec<SuiteResult> = parallel::map(&names, |name| {
        let checks = match suites::run_suite(name, seed) {
            Ok(checks) => checks,
            Err(e) => vec![Check::new("engine", false, e.to_string())],
        };
        SuiteResult { name: name.to_string(), passed: checks.iter().all(|c| c.passed), checks }
    });
    let checks = results
        .iter()
        .flat_map(|r| {
            r.checks.iter().map(move |c| Check::new(format!("{}/{}", r.name, c.name), c.passed, c.detail.clone()))
        })
        .collect();
    Report { checks, artifacts: vec![Artifact::json("suites.json", &results)] }
}
