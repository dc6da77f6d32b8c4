use std::fmt;

use thiserror::Error;

/// A single violated model invariant, with the field path it was found at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub locus: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.locus, self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("model has {} invariant violation(s):\n{}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("{what} index {index} out of range (size {size})")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("budget exceeded at {locus}: {needed} evaluations requested, cap is {cap}")]
    Budget {
        locus: String,
        needed: u128,
        cap: u64,
    },

    #[error("common state `{0}` is not reachable in this model")]
    Unreachable(String),

    #[error("private history {history} is not admissible under common state `{fcs}`")]
    Inadmissible { fcs: String, history: String },

    #[error("common observation {o0} has zero probability after `{fcs}`")]
    ZeroBranch { fcs: String, o0: usize },

    #[error("prescription domain mismatch at `{locus}`: {message}")]
    DomainMismatch { locus: String, message: String },

    #[error("compression `{id}` is not recursive: {count} violating edge(s), first {first}")]
    NotRecursive {
        id: String,
        count: usize,
        first: String,
    },

    #[error("compression `{id}`: {message}")]
    Compression { id: String, message: String },

    #[error("map `{id}` fails {conditions}; value guarantees would not hold")]
    SpiRejected { id: String, conditions: String },

    #[error("distributions have different supports ({0} vs {1} entries)")]
    Support(usize, usize),

    #[error("unknown bound kind `{0}`")]
    UnknownBound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::Budget { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
