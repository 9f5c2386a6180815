//! Scenario files: a versioned envelope plus a kind-specific payload, both
//! parsed strictly.

use std::fmt;
use std::path::{Path, PathBuf};

use ricci_mmp_core::density::DensitySpec;
use ricci_mmp_core::flow::FlowConfig;
use ricci_mmp_core::grid::LaplacianKind;
use ricci_mmp_core::mmp::MmpPair;
use ricci_mmp_core::sphere::{SphereConfig, SphereMode};
use ricci_mmp_core::toric::{parse_exact, FanDocument};
use ricci_mmp_core::Rational;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::suites;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0}, expected {SCHEMA_VERSION}")]
    Version(u32),
    #[error("scenario name {0:?} must be non-empty and use only [A-Za-z0-9_-]")]
    Name(String),
    #[error("invalid {kind} payload: {message}")]
    Payload { kind: ScenarioKind, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Mmp,
    Flow,
    Elliptic,
    Sphere,
    Suite,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ScenarioKind::Mmp => "mmp",
            ScenarioKind::Flow => "flow",
            ScenarioKind::Elliptic => "elliptic",
            ScenarioKind::Sphere => "sphere",
            ScenarioKind::Suite => "suite",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub kind: ScenarioKind,
    /// Seeds every randomized part of the run.
    #[serde(default)]
    pub seed: u64,
    /// Free-form note on what the scenario exercises; echoed into outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paper_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub payload: Value,
}

/// A parsed and validated payload.
#[derive(Debug, Clone)]
pub enum Job {
    Mmp(MmpPayload),
    Flow(Box<FlowPayload>),
    Elliptic(Box<EllipticPayload>),
    Sphere(SphereConfig<f64>),
    Suite(SuitePayload),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        if scenario.schema != SCHEMA_VERSION {
            return Err(SchemaError::Version(scenario.schema));
        }
        let ok = !scenario.name.is_empty()
            && scenario.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !ok {
            return Err(SchemaError::Name(scenario.name));
        }
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| SchemaError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    /// Parses and validates the payload for the declared kind.
    pub fn job(&self) -> Result<Job, SchemaError> {
        let kind = self.kind;
        let bad = |message: String| SchemaError::Payload { kind, message };
        match kind {
            ScenarioKind::Mmp => {
                let p: MmpPayload = payload(self, kind)?;
                p.pair().map_err(bad)?;
                p.expectation().map_err(bad)?;
                Ok(Job::Mmp(p))
            }
            ScenarioKind::Flow => {
                let p: FlowPayload = payload(self, kind)?;
                p.validate().map_err(bad)?;
                Ok(Job::Flow(Box::new(p)))
            }
            ScenarioKind::Elliptic => {
                let p: EllipticPayload = payload(self, kind)?;
                p.validate().map_err(bad)?;
                Ok(Job::Elliptic(Box::new(p)))
            }
            ScenarioKind::Sphere => {
                let p: SphereConfig<f64> = payload(self, kind)?;
                validate_sphere(&p).map_err(bad)?;
                Ok(Job::Sphere(p))
            }
            ScenarioKind::Suite => {
                let p: SuitePayload = payload(self, kind)?;
                if let Some(unknown) = p.names.iter().find(|n| suites::find(n).is_none()) {
                    return Err(bad(format!("unknown suite {unknown:?}")));
                }
                Ok(Job::Suite(p))
            }
        }
    }
}

fn payload<P: DeserializeOwned>(scenario: &Scenario, kind: ScenarioKind) -> Result<P, SchemaError> {
    P::deserialize(&scenario.payload).map_err(|e| SchemaError::Payload { kind, message: e.to_string() })
}

fn default_divisor() -> String {
    "H".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmpPayload {
    pub fan: FanDocument,
    /// Name of the divisor in `fan.divisors` to run with.
    #[serde(default = "default_divisor")]
    pub divisor: String,
    #[serde(default)]
    pub expect: Option<MmpExpectation>,
}

/// Golden values; rationals are `"p/q"` strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmpExpectation {
    #[serde(default)]
    pub lambdas: Option<Vec<String>>,
    #[serde(default, rename = "T")]
    pub times: Option<Vec<String>>,
    #[serde(default)]
    pub kinds: Option<Vec<String>>,
    #[serde(default)]
    pub terminal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedExpectation {
    pub lambdas: Option<Vec<Rational>>,
    pub times: Option<Vec<Rational>>,
    pub kinds: Option<Vec<String>>,
    pub terminal: Option<String>,
}

impl MmpPayload {
    pub fn pair(&self) -> Result<MmpPair<Rational>, String> {
        let fan = self.fan.fan().map_err(|e| e.to_string())?;
        let h = self.fan.divisor(&self.divisor).map_err(|e| e.to_string())?;
        MmpPair::new(fan, h).map_err(|e| e.to_string())
    }

    pub fn expectation(&self) -> Result<ParsedExpectation, String> {
        let Some(e) = &self.expect else {
            return Ok(ParsedExpectation::default());
        };
        let parse = |v: &Option<Vec<String>>| -> Result<Option<Vec<Rational>>, String> {
            v.as_ref().map(|xs| xs.iter().map(|s| parse_exact(s).map_err(|e| e.to_string())).collect()).transpose()
        };
        Ok(ParsedExpectation {
            lambdas: parse(&e.lambdas)?,
            times: parse(&e.times)?,
            kinds: e.kinds.clone(),
            terminal: e.terminal.clone(),
        })
    }
}

fn default_solve_tol() -> f64 {
    1e-10
}

/// Initial potential for a flow run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPotential {
    #[default]
    Zero,
    /// Bounded potential whose metric density is `c * target`.
    Rough {
        target: DensitySpec<f64>,
        #[serde(default = "default_solve_tol")]
        tol: f64,
    },
    /// Seeded random trigonometric polynomial with zero constant term.
    Random { amplitude: f64, max_mode: i32, terms: usize },
}

fn default_class_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowChecks {
    /// Allowed class defect relative to `int g0`.
    #[serde(default = "default_class_tol")]
    pub class_tol: f64,
    #[serde(default)]
    pub band: Option<RefinementCheck>,
    #[serde(default)]
    pub smoothing: Option<SmoothingCheck>,
    #[serde(default)]
    pub curvature: Option<RefinementCheck>,
}

impl Default for FlowChecks {
    fn default() -> Self {
        Self { class_tol: default_class_tol(), band: None, smoothing: None, curvature: None }
    }
}

/// A quantity measured for `t >= t_min` that must agree between
/// consecutive grids to relative tolerance `rel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementCheck {
    pub t_min: f64,
    pub rel: f64,
}

/// `sup |(1/2) Delta phi|` at `t_sample` varies by less than `spread`
/// across grids while the initial value grows by more than `initial_growth`
/// from the coarsest to the finest grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingCheck {
    pub t_sample: f64,
    pub spread: f64,
    pub initial_growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowPayload {
    pub config: FlowConfig<f64>,
    #[serde(default)]
    pub initial: InitialPotential,
    /// Grid sizes to sweep; empty runs `config.n` only.
    #[serde(default)]
    pub grids: Vec<usize>,
    #[serde(default)]
    pub checks: FlowChecks,
}

impl FlowPayload {
    pub fn grids(&self) -> Vec<usize> {
        if self.grids.is_empty() {
            vec![self.config.n]
        } else {
            self.grids.clone()
        }
    }

    /// Per-grid configurations with the sampling times added as checkpoints.
    pub fn configs(&self) -> Vec<FlowConfig<f64>> {
        let mut base = self.config.clone();
        if let Some(s) = self.checks.smoothing {
            if !base.checkpoints.contains(&s.t_sample) {
                base.checkpoints.push(s.t_sample);
                base.checkpoints.sort_by(f64::total_cmp);
            }
        }
        self.grids().into_iter().map(|n| base.clone().with_grid(n)).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        for cfg in self.configs() {
            cfg.validate().map_err(|e| e.to_string())?;
        }
        if let InitialPotential::Rough { target, tol } = &self.initial {
            target.validate().map_err(|e| e.to_string())?;
            if !(*tol > 0.0) {
                return Err("rough start tolerance must be positive".into());
            }
        }
        if let InitialPotential::Random { amplitude, max_mode, terms } = &self.initial {
            if !(amplitude.is_finite() && *amplitude >= 0.0) || *max_mode < 1 || *terms == 0 {
                return Err("random start needs amplitude >= 0, max_mode >= 1 and terms >= 1".into());
            }
        }
        let c = &self.checks;
        if !(c.class_tol > 0.0) {
            return Err("class_tol must be positive".into());
        }
        if let Some(s) = c.smoothing {
            if !(s.t_sample > 0.0 && s.t_sample <= self.config.t_end) {
                return Err("smoothing t_sample must lie in (0, t_end]".into());
            }
        }
        let multi = c.band.is_some() || c.smoothing.is_some() || c.curvature.is_some();
        if multi && self.grids().len() < 2 {
            return Err("refinement checks need at least two grids".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EllipticProblem {
    /// `g0 + (1/2) Delta phi = c F`.
    Linear { g0: DensitySpec<f64>, f: DensitySpec<f64> },
    /// `chi + (1/2) Delta phi = e^phi F`.
    Semilinear { chi: DensitySpec<f64>, f: DensitySpec<f64> },
}

/// Random pairs `(f, g)` sharing `g0` from a linear problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySweep {
    pub pairs: usize,
    pub epsilon: f64,
    pub amplitude: f64,
    pub max_mode: i32,
    pub terms: usize,
    /// Repeat on the doubled grid and require the fitted constants to agree
    /// within this relative tolerance.
    #[serde(default)]
    pub refine_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticPayload {
    pub n: usize,
    #[serde(default)]
    pub laplacian: LaplacianKind,
    #[serde(default = "default_solve_tol")]
    pub tol: f64,
    pub problem: EllipticProblem,
    #[serde(default)]
    pub stability: Option<StabilitySweep>,
}

impl EllipticPayload {
    pub fn validate(&self) -> Result<(), String> {
        ricci_mmp_core::grid::PeriodicGrid::new(self.n).map_err(|e| e.to_string())?;
        if !(self.tol > 0.0) {
            return Err("tol must be positive".into());
        }
        let specs = match &self.problem {
            EllipticProblem::Linear { g0, f } => [g0, f],
            EllipticProblem::Semilinear { chi, f } => [chi, f],
        };
        for s in specs {
            s.validate().map_err(|e| e.to_string())?;
        }
        if let Some(s) = &self.stability {
            if !matches!(self.problem, EllipticProblem::Linear { .. }) {
                return Err("stability sweeps need a linear problem".into());
            }
            if s.pairs == 0 || s.terms == 0 || s.max_mode < 1 || !(s.epsilon > 0.0) {
                return Err("stability sweep needs pairs, terms, max_mode >= 1 and epsilon > 0".into());
            }
            if !(s.amplitude > 0.0 && s.amplitude < 2.0) {
                // random polys have lower bound >= 1 - amplitude / 2
                return Err("stability amplitude must lie in (0, 2)".into());
            }
        }
        Ok(())
    }
}

fn validate_sphere(cfg: &SphereConfig<f64>) -> Result<(), String> {
    ricci_mmp_core::sphere::LatitudeGrid::<f64>::new(cfg.m).map_err(|e| e.to_string())?;
    if cfg.v0.is_empty() {
        return Err("v0 needs at least one coefficient".into());
    }
    match cfg.mode {
        SphereMode::Unnormalized => {
            if cfg.t_end.is_some() || cfg.t0.is_some() {
                return Err("t_end and t0 apply to normalized runs only".into());
            }
        }
        SphereMode::Normalized => {
            if !cfg.t_end.is_some_and(|t| t > 0.0) {
                return Err("normalized runs need t_end > 0".into());
            }
            if cfg.extinction_tol.is_some() {
                return Err("extinction_tol applies to unnormalized runs only".into());
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuitePayload {
    /// Suites to run; empty runs all of them.
    #[serde(default)]
    pub names: Vec<String>,
}

impl SuitePayload {
    pub fn selected(&self) -> Vec<&'static str> {
        if self.names.is_empty() {
            suites::SUITES.iter().map(|s| s.name).collect()
        } else {
            self.names.iter().filter_map(|n| suites::find(n)).map(|s| s.name).collect()
        }
    }
}
