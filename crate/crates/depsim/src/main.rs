use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use depsim::dependsched::Policy;
use depsim::scenario::{self, RunOverrides, ScenarioError};

/// Discrete-event simulator for dependability and security of large
/// distributed systems.
#[derive(Parser)]
#[command(name = "depsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and export trace.csv, metrics.csv and report.csv.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop at this simulated time instead of the scenario horizon.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario's scheduling policy (baseline, etf, mcp).
        #[arg(long, value_parser = Policy::from_str)]
        policy: Option<Policy>,
        /// Fail interrupted jobs instead of requeueing them.
        #[arg(long)]
        no_reschedule: bool,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Run a scenario once per seed in an inclusive range.
    Sweep {
        scenario: PathBuf,
        /// Seed range, e.g. 1..10
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string())
}

fn parse_seed_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.parse().map_err(|_| format!("bad seed `{a}`"))?;
    let b: u64 = b.parse().map_err(|_| format!("bad seed `{b}`"))?;
    if b < a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok((a, b))
}

fn exit_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Parse { .. } | ScenarioError::Validate(_) => 2,
        ScenarioError::Io(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { scenario, seed, until, out, policy, no_reschedule } => {
            let ov = RunOverrides { seed, until, policy, no_reschedule };
            scenario::load_scenario(&scenario).and_then(|cfg| {
                let out_run = scenario::run_scenario(&cfg, &run_id_of(&scenario), &ov)?;
                scenario::export(&out, &out_run)?;
                println!(
                    "{}: seed={} submitted={} finished={} failed={} rescheduled={} attacks={}",
                    out_run.report.run_id,
                    out_run.report.seed,
                    out_run.report.submitted,
                    out_run.report.finished,
                    out_run.report.failed,
                    out_run.report.rescheduled,
                    out_run.report.attacks_detected
                );
                Ok(())
            })
        }
        Cmd::Validate { scenario } => scenario::load_scenario(&scenario)
            .and_then(|cfg| cfg.validate())
            .map(|()| println!("ok")),
        Cmd::Sweep { scenario, seeds, out } => match parse_seed_range(&seeds) {
            Err(msg) => {
                eprintln!("error: {msg}");
                return ExitCode::from(2);
            }
            Ok((a, b)) => scenario::load_scenario(&scenario).and_then(|cfg| {
                let id = run_id_of(&scenario);
                for seed in a..=b {
                    let ov = RunOverrides { seed: Some(seed), ..Default::default() };
                    let run = scenario::run_scenario(&cfg, &id, &ov)?;
                    scenario::export(&out.join(format!("seed-{seed}")), &run)?;
                    println!(
                        "seed {seed}: submitted={} finished={} failed={}",
                        run.report.submitted, run.report.finished, run.report.failed
                    );
                }
                Ok(())
            }),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
