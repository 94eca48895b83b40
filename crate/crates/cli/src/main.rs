//! `cachemm`: analyze, simulate and run cache-blocked matrix multiplication.
//!
//! Exit codes: 0 success, 1 a check or validation failed, 2 bad usage or
//! configuration.

mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{AnalyzeArgs, ParetoArgs, PlanArgs, RooflineArgs, RunArgs, SimulateArgs};
use report::{CheckFailed, OutputArgs};

#[derive(Parser)]
#[command(name = "cachemm", version, about = "Multilevel cache-blocked matrix multiplication toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Predict the traffic across every cache boundary.
    Analyze(AnalyzeArgs),
    /// Replay the access trace through an LRU hierarchy and compare with the model.
    Simulate(SimulateArgs),
    /// Execute the loop nest on random matrices and check it against a naive product.
    Run(RunArgs),
    /// Recommend a descriptor and blocksizes for a shape and hierarchy.
    Plan(PlanArgs),
    /// Place algorithms on a roofline given their arithmetic intensity.
    Roofline(RooflineArgs),
    /// Sweep the capacity ratio of two adjacent caches.
    Pareto(ParetoArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Run(a) => commands::run(a),
        Command::Plan(a) => commands::plan(a),
        Command::Roofline(a) => commands::roofline(a),
        Command::Pareto(a) => commands::pareto(a),
    };
    let outcome = result.and_then(|report| {
        report::emit(&report, &cli.output)?;
        report.verdict()
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<CheckFailed>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
