use thiserror::Error;

use crate::algo::{BlocksizeViolation, StructureViolation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid cache hierarchy: {0}")]
    Hierarchy(String),

    #[error("cannot parse algorithm name {text:?}: {reason}")]
    Parse { text: String, reason: String },

    #[error("descriptor violates {} structural rule(s): {}", .0.len(), join(.0))]
    Structure(Vec<StructureViolation>),

    #[error("blocksizes violate {} fit condition(s): {}", .0.len(), join(.0))]
    Blocksizes(Vec<BlocksizeViolation>),

    #[error("missing blocksize for level {level}, dimension {dim}")]
    MissingBlocksize { level: usize, dim: crate::Dim },

    #[error("infeasible blocking at level {level}: {reason}{}", skip_hint(*.level))]
    Infeasible { level: usize, reason: String },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("index ({i}, {j}) out of range for a {rows}x{cols} matrix")]
    OutOfRange { i: usize, j: usize, rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parallel configuration: {0}")]
    Parallel(String),

    #[error("cannot compare simulation and model: {0}")]
    Provenance(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn skip_hint(level: usize) -> String {
    if level == 0 {
        String::new()
    } else {
        format!("; consider skipping L{level}")
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
