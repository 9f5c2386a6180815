use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ricci_mmp::runner::error_document;
use ricci_mmp::{run_scenario, suites, RunError, Scenario};

#[derive(Parser)]
#[command(name = "ricci-mmp", version, about = "Run toric MMP and Monge-Ampere flow scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its outputs.
    Run {
        scenario: PathBuf,
        /// Output directory (default: the scenario's output_dir, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sweeps and suites.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the check suites.
    Suites,
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Suites => {
            print!("{}", suites::list_suites());
            code(0)
        }
        Command::Validate { scenario } => match Scenario::load(&scenario).and_then(|s| s.job().map(|_| s)) {
            Ok(s) => {
                println!("ok: {} ({})", s.name, s.kind);
                code(0)
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(2)
            }
        },
        Command::Run { scenario, out, jobs } => {
            let s = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(2);
                }
            };
            match run_scenario(&s, out.as_deref(), jobs) {
                Ok(outcome) => {
                    for c in &outcome.summary.checks {
                        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    }
                    println!("outputs in {}", outcome.dir.display());
                    code(outcome.exit_code())
                }
                Err(e @ RunError::Schema(_)) => {
                    eprintln!("error: {e}");
                    code(e.exit_code())
                }
                Err(e) => {
                    eprintln!("{}", serde_json::to_string_pretty(&error_document(&s, &e)).unwrap_or_default());
                    code(e.exit_code())
                }
            }
        }
    }
}
