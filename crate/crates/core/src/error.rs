use std::fmt;

use crate::model::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported scenario version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("invalid scenario: {}", DiagList(.0))]
    Invalid(Vec<Diagnostic>),

    #[error("unknown node id {0}")]
    UnknownNode(u32),

    #[error("records line {line}: {message}")]
    Records { line: usize, message: String },

    #[error("sample {sample} has no entry for layer {layer}")]
    MissingBranch { sample: u64, layer: usize },

    #[error("empty record set")]
    EmptyRecords,

    #[error("threshold grid for layer {layer} is empty or unsorted")]
    BadGrid { layer: usize },

    #[error("threshold {value} is not on the grid of layer {layer}")]
    OffGrid { layer: usize, value: f64 },

    #[error("exit table does not match scenario: {0}")]
    TableMismatch(String),

    #[error("node {node} is saturated (load {load} >= capacity {mu})")]
    Saturated { node: u32, load: f64, mu: f64 },

    #[error("total arrival rate is zero")]
    NoArrivals,

    #[error("accuracy bounds are equal; utility is undefined")]
    FlatAccuracy,

    #[error("branch at layer {layer} has no surviving flow")]
    DeadBranch { layer: usize },

    #[error("finite-difference step {step} leaves [0, 1] at p = {p}")]
    StepOutOfRange { step: f64, p: f64 },

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

struct DiagList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, d) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}
