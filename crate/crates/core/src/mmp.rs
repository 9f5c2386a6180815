//! Minimal model program with scaling on toric surface pairs `(X, H)`.
//!
//! Each step computes the nef threshold `T0 = sup { t : H + tK nef }`,
//! collects the K-negative curves on which `H + T0 K` vanishes, classifies
//! the contraction they span, and either replaces the pair by
//! `(Y, pi_*(H + T0 K))` or stops at a Mori fibre space / point. The scaling
//! parameter reported per step is `lambda = 1 / T0` and the cumulative
//! singular time obeys `T_i = T_{i-1} + 1 / lambda_i`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::ExactField;
use crate::toric::{FanDocument, NefThreshold, ToricError, ToricSurfaceFan, WeilDivisor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MmpError {
    #[error(transparent)]
    Toric(#[from] ToricError),
    #[error("simultaneous (-1) and 0 curves in extremal set {extremal:?}")]
    AmbiguousContraction { extremal: Vec<usize> },
    #[error("extremal set is empty")]
    EmptyExtremalSet,
    #[error("contracted rays {rays:?} include an adjacent pair")]
    AdjacentContractedRays { rays: Vec<usize> },
    #[error("pushed-forward divisor is not ample on the contracted surface: {0}")]
    ResultNotAmple(String),
}

pub type Result<T> = std::result::Result<T, MmpError>;

/// Smooth toric surface with an ample divisor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmpPair<Q> {
    pub fan: ToricSurfaceFan,
    pub h: WeilDivisor<Q>,
}

impl<Q: ExactField> MmpPair<Q> {
    pub fn new(fan: ToricSurfaceFan, h: WeilDivisor<Q>) -> Result<Self> {
        if !fan.is_ample(&h)? {
            let pairings = fan.pairings(&h)?;
            let index = pairings.iter().position(|p| !p.is_positive()).unwrap_or(0);
            return Err(ToricError::NotAmple { index, pairing: pairings[index].to_string() }.into());
        }
        Ok(Self { fan, h })
    }

    pub fn scaled(&self, c: &Q) -> Self {
        Self { fan: self.fan.clone(), h: self.h.scaled(c) }
    }

    pub fn document(&self) -> FanDocument {
        FanDocument::from_fan(&self.fan).with_divisor("H", &self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractionKind {
    /// Blow-down of the listed pairwise disjoint (-1)-curves.
    Divisorial(Vec<usize>),
    /// Collapse of a ruling; the listed rays are fibres.
    MoriFiber(Vec<usize>),
    /// The whole surface collapses (Picard rank one end).
    PointContraction,
    /// Reserved for dimension three and higher; never constructed on surfaces.
    Flip,
}

impl ContractionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ContractionKind::Divisorial(_) => "Divisorial",
            ContractionKind::MoriFiber(_) => "MoriFiber",
            ContractionKind::PointContraction => "PointContraction",
            ContractionKind::Flip => "Flip",
        }
    }

    pub fn rays(&self) -> &[usize] {
        match self {
            ContractionKind::Divisorial(r) | ContractionKind::MoriFiber(r) => r,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SurgeryOutcome<Q> {
    Continue(MmpPair<Q>),
    Terminal(TerminalKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalKind {
    MinimalModel,
    MoriFiberSpace,
    Point,
}

/// Step at which the scaling program could not continue unambiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffendingStep<Q> {
    pub lambda: Q,
    pub t: Q,
    pub extremal: Vec<usize>,
    pub self_intersections: Vec<i64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MmpTerminal<Q> {
    Reached(TerminalKind),
    NotGoodDivisor(OffendingStep<Q>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmpStep<Q> {
    pub lambda: Q,
    /// Cumulative singular time.
    pub t: Q,
    pub kind: ContractionKind,
    /// `None` when the step ends the program.
    pub pair_after: Option<MmpPair<Q>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmpTrace<Q> {
    pub initial: MmpPair<Q>,
    pub steps: Vec<MmpStep<Q>>,
    pub terminal: MmpTerminal<Q>,
}

/// `lambda_0 = inf { lambda > 0 : lambda H + K nef } = 1 / T0`; zero if K is nef.
pub fn scaling_threshold<Q: ExactField>(pair: &MmpPair<Q>) -> Result<Q> {
    Ok(match pair.fan.nef_threshold(&pair.h)? {
        NefThreshold::Finite(t) => Q::one() / t,
        NefThreshold::Infinity => Q::zero(),
    })
}

/// K-negative curves on which `H + T0 K` vanishes.
pub fn extremal_set<Q: ExactField>(pair: &MmpPair<Q>) -> Result<Vec<usize>> {
    let Some(t0) = pair.fan.nef_threshold(&pair.h)?.finite() else {
        return Ok(Vec::new());
    };
    let limit = limit_divisor(pair, &t0);
    let pairings = pair.fan.pairings(&limit)?;
    Ok((0..pair.fan.len()).filter(|&i| pair.fan.canonical_pairing(i) < 0 && pairings[i].is_zero()).collect())
}

/// `H + t K`.
pub fn limit_divisor<Q: ExactField>(pair: &MmpPair<Q>, t: &Q) -> WeilDivisor<Q> {
    pair.h.plus_scaled(t, &pair.fan.canonical_divisor())
}

pub fn classify_contraction<Q: ExactField>(pair: &MmpPair<Q>, extremal: &[usize]) -> Result<ContractionKind> {
    if extremal.is_empty() {
        return Err(MmpError::EmptyExtremalSet);
    }
    let squares: Vec<i64> = extremal.iter().map(|&i| pair.fan.self_intersection(i)).collect();
    if squares.iter().any(|&s| s >= 1) {
        return Ok(ContractionKind::PointContraction);
    }
    let has_exceptional = squares.contains(&-1);
    let has_fibre = squares.contains(&0);
    match (has_exceptional, has_fibre) {
        (true, true) => Err(MmpError::AmbiguousContraction { extremal: extremal.to_vec() }),
        (false, true) => Ok(ContractionKind::MoriFiber(extremal.to_vec())),
        // adjunction leaves only -1 for K-negative curves below zero
        _ => Ok(ContractionKind::Divisorial(extremal.to_vec())),
    }
}

pub fn execute_surgery<Q: ExactField>(pair: &MmpPair<Q>, kind: &ContractionKind) -> Result<SurgeryOutcome<Q>> {
    match kind {
        ContractionKind::Divisorial(rays) => {
            for (a, &i) in rays.iter().enumerate() {
                if rays[a + 1..].iter().any(|&j| pair.fan.are_adjacent(i, j)) {
                    return Err(MmpError::AdjacentContractedRays { rays: rays.clone() });
                }
            }
            let t0 = pair.fan.nef_threshold(&pair.h)?.finite().expect("divisorial step has a finite threshold");
            let mut fan = pair.fan.clone();
            let mut h = limit_divisor(pair, &t0);
            let mut order = rays.clone();
            order.sort_unstable_by(|a, b| b.cmp(a));
            for i in order {
                h = fan.pushforward(&h, i)?;
                fan = fan.blow_down(i)?;
            }
            if !fan.is_ample(&h)? {
                return Err(MmpError::ResultNotAmple(format!("{:?} on {:?}", h.to_strings(), fan.rays())));
            }
            Ok(SurgeryOutcome::Continue(MmpPair { fan, h }))
        }
        ContractionKind::MoriFiber(_) => Ok(SurgeryOutcome::Terminal(TerminalKind::MoriFiberSpace)),
        ContractionKind::PointContraction => Ok(SurgeryOutcome::Terminal(TerminalKind::Point)),
        ContractionKind::Flip => unreachable!("flips are never constructed on surfaces"),
    }
}

pub fn run_mmp_with_scaling<Q: ExactField>(initial: &MmpPair<Q>) -> Result<MmpTrace<Q>> {
    let mut pair = initial.clone();
    let mut t_cum = Q::zero();
    let mut steps = Vec::new();
    let terminal = loop {
        let Some(t0) = pair.fan.nef_threshold(&pair.h)?.finite() else {
            break MmpTerminal::Reached(TerminalKind::MinimalModel);
        };
        let lambda = Q::one() / t0.clone();
        t_cum = t_cum + t0;
        let extremal = extremal_set(&pair)?;
        let offending = |reason: String| OffendingStep {
            lambda: lambda.clone(),
            t: t_cum.clone(),
            extremal: extremal.clone(),
            self_intersections: extremal.iter().map(|&i| pair.fan.self_intersection(i)).collect(),
            reason,
        };
        let kind = match classify_contraction(&pair, &extremal) {
            Ok(kind) => kind,
            Err(e @ MmpError::AmbiguousContraction { .. }) => {
                break MmpTerminal::NotGoodDivisor(offending(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        match execute_surgery(&pair, &kind) {
            Ok(SurgeryOutcome::Continue(next)) => {
                steps.push(MmpStep { lambda, t: t_cum.clone(), kind, pair_after: Some(next.clone()) });
                pair = next;
            }
            Ok(SurgeryOutcome::Terminal(end)) => {
                steps.push(MmpStep { lambda, t: t_cum.clone(), kind, pair_after: None });
                break MmpTerminal::Reached(end);
            }
            Err(e @ MmpError::AdjacentContractedRays { .. }) => {
                break MmpTerminal::NotGoodDivisor(offending(e.to_string()))
            }
            Err(e) => return Err(e),
        }
    };
    Ok(MmpTrace { initial: initial.clone(), steps, terminal })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoodDivisorReport<Q> {
    pub good: bool,
    pub trace: MmpTrace<Q>,
    pub offending: Option<OffendingStep<Q>>,
}

/// A divisor is good when every divisorial step contracts exactly one ray
/// and no step is ambiguous.
pub fn is_good_initial_divisor<Q: ExactField>(pair: &MmpPair<Q>) -> Result<GoodDivisorReport<Q>> {
    let trace = run_mmp_with_scaling(pair)?;
    if let MmpTerminal::NotGoodDivisor(step) = &trace.terminal {
        let offending = Some(step.clone());
        return Ok(GoodDivisorReport { good: false, trace, offending });
    }
    let mut current = &trace.initial;
    for step in &trace.steps {
        if let ContractionKind::Divisorial(rays) = &step.kind {
            if rays.len() != 1 {
                let offending = OffendingStep {
                    lambda: step.lambda.clone(),
                    t: step.t.clone(),
                    extremal: rays.clone(),
                    self_intersections: rays.iter().map(|&i| current.fan.self_intersection(i)).collect(),
                    reason: format!("{} rays contracted in one step", rays.len()),
                };
                return Ok(GoodDivisorReport { good: false, trace: trace.clone(), offending: Some(offending) });
            }
        }
        if let Some(next) = &step.pair_after {
            current = next;
        }
    }
    Ok(GoodDivisorReport { good: true, trace, offending: None })
}

impl<Q: ExactField> MmpTrace<Q> {
    pub fn times(&self) -> Vec<Q> {
        self.steps.iter().map(|s| s.t.clone()).collect()
    }

    pub fn lambdas(&self) -> Vec<Q> {
        self.steps.iter().map(|s| s.lambda.clone()).collect()
    }

    pub fn terminal_name(&self) -> String {
        match &self.terminal {
            MmpTerminal::Reached(kind) => format!("{kind:?}"),
            MmpTerminal::NotGoodDivisor(_) => "NotGoodDivisor".to_string(),
        }
    }

    /// Checks the trace invariants exactly; returns the list of violations.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut prev_t = Q::zero();
        let mut pair = &self.initial;
        let divisorial = self.steps.iter().filter(|s| matches!(s.kind, ContractionKind::Divisorial(_))).count();
        if divisorial + 3 > self.initial.fan.len() {
            out.push(format!("{divisorial} divisorial steps on {} rays", self.initial.fan.len()));
        }
        for (k, step) in self.steps.iter().enumerate() {
            if !step.lambda.is_positive() {
                out.push(format!("step {k}: lambda {} not positive", step.lambda));
            }
            if step.t != prev_t.clone() + Q::one() / step.lambda.clone() {
                out.push(format!("step {k}: T = {} breaks T_prev + 1/lambda", step.t));
            }
            if step.t <= prev_t {
                out.push(format!("step {k}: T not increasing"));
            }
            if let (ContractionKind::Divisorial(rays), Some(next)) = (&step.kind, &step.pair_after) {
                if next.fan.len() + rays.len() != pair.fan.len() {
                    out.push(format!("step {k}: ray count did not drop by {}", rays.len()));
                }
                match next.fan.is_ample(&next.h) {
                    Ok(true) => {}
                    _ => out.push(format!("step {k}: pushed-forward divisor not ample")),
                }
                let limit = limit_divisor(pair, &(Q::one() / step.lambda.clone()));
                let before = pair.fan.intersect(&limit, &limit);
                let after = next.fan.intersect(&next.h, &next.h);
                match (before, after) {
                    (Ok(b), Ok(a)) if b == a && a.is_positive() => {}
                    (b, a) => out.push(format!("step {k}: limit volume {b:?} vs pushed-forward volume {a:?}")),
                }
            }
            if let Some(next) = &step.pair_after {
                pair = next;
            }
            prev_t = step.t.clone();
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4}  {:>10}  {:>10}  {:<18}  {:<10}  rays after",
            "step", "lambda", "T", "kind", "contracted"
        );
        for (k, step) in self.steps.iter().enumerate() {
            let after = step
                .pair_after
                .as_ref()
                .map(|p| p.fan.rays().iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:>4}  {:>10}  {:>10}  {:<18}  {:<10}  {}",
                k + 1,
                step.lambda.to_string(),
                step.t.to_string(),
                step.kind.name(),
                format!("{:?}", step.kind.rays()),
                after
            );
        }
        let _ = writeln!(s, "terminal: {}", self.terminal_name());
        s
    }

    pub fn document(&self) -> TraceDocument {
        TraceDocument {
            initial: self.initial.document(),
            steps: self
                .steps
                .iter()
                .map(|s| StepDocument {
                    lambda: s.lambda.to_string(),
                    t: s.t.to_string(),
                    kind: s.kind.name().to_string(),
                    contracted_rays: s.kind.rays().to_vec(),
                    successor: s.pair_after.as_ref().map(MmpPair::document),
                })
                .collect(),
            terminal: self.terminal_name(),
            offending: match &self.terminal {
                MmpTerminal::NotGoodDivisor(o) => Some(OffendingDocument {
                    lambda: o.lambda.to_string(),
                    t: o.t.to_string(),
                    extremal: o.extremal.clone(),
                    self_intersections: o.self_intersections.clone(),
                    reason: o.reason.clone(),
                }),
                MmpTerminal::Reached(_) => None,
            },
        }
    }
}

/// JSON form of a trace; rationals are `"p/q"` strings and ray indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub initial: FanDocument,
    pub steps: Vec<StepDocument>,
    pub terminal: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offending: Option<OffendingDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDocument {
    pub lambda: String,
    #[serde(rename = "T")]
    pub t: String,
    pub kind: String,
    pub contracted_rays: Vec<usize>,
    pub successor: Option<FanDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffendingDocument {
    pub lambda: String,
    #[serde(rename = "T")]
    pub t: String,
    pub extremal: Vec<usize>,
    pub self_intersections: Vec<i64>,
    pub reason: String,
}
