use std::fmt;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Human,
}

#[derive(Args)]
pub struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE", global = true)]
    pub out: Option<PathBuf>,
}

/// A check on the results did not hold (exit code 1). Everything else that
/// goes wrong is a usage or configuration error (exit code 2).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Classifies a library error: rejected descriptors and blocksizes are
/// check failures, anything else is a configuration problem.
pub fn classify(e: cachemm::Error) -> anyhow::Error {
    match e {
        cachemm::Error::Structure(_) | cachemm::Error::Blocksizes(_) | cachemm::Error::Infeasible { .. } => {
            CheckFailed(e.to_string()).into()
        }
        other => other.into(),
    }
}

/// One command's result in every format, plus an optional failed check that
/// turns into exit code 1 after the report is written.
pub struct Report {
    pub json: serde_json::Value,
    pub csv: String,
    pub human: String,
    pub failure: Option<String>,
}

impl Report {
    pub fn verdict(&self) -> Result<()> {
        match &self.failure {
            Some(msg) => Err(CheckFailed(msg.clone()).into()),
            None => Ok(()),
        }
    }
}

pub fn emit(report: &Report, args: &OutputArgs) -> Result<()> {
    let text = match args.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report.json).context("serializing the report")?;
            s.push('\n');
            s
        }
        Format::Csv => report.csv.clone(),
        Format::Human => report.human.clone(),
    };
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
