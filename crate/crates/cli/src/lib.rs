//! Scenario runner for the ricci-mmp engines: strict JSON scenarios,
//! atomic output writing and the named check suites.

pub mod bundled;
pub mod output;
pub mod parallel;
pub mod runner;
pub mod scenario;
pub mod suites;

pub use runner::{run_scenario, Check, RunError, RunOutcome, Summary};
pub use scenario::{Job, Scenario, ScenarioKind, SchemaError};
