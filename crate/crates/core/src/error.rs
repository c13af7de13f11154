use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("UnlabeledFact: fact {0} has no abstract/grounding kind")]
    UnlabeledFact(String),

    #[error("MissingTuples: fact {0} has no SPO tuple")]
    MissingTuples(String),

    #[error("ZeroVector: adapted embedding has vanishing norm")]
    ZeroVector,

    #[error("EmptyGraph: no retrieved fact shares a term with any hypothesis")]
    EmptyGraph,

    #[error("InfeasibleCardinality: m + 1 = {needed} exceeds node count {nodes}")]
    InfeasibleCardinality { needed: usize, nodes: usize },

    #[error("Infeasible: {0}")]
    Infeasible(String),

    #[error("MaxIters: solver stopped after {0} iterations")]
    MaxIters(usize),

    #[error("TooLarge: {nodes} nodes exceeds the enumeration guard of {limit}")]
    TooLarge { nodes: usize, limit: usize },

    #[error("SingularKKT: linearized optimality system is singular")]
    SingularKkt,

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 input/validation, 3 numerical/solver, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::UnlabeledFact(_)
            | Error::MissingTuples(_) => 2,
            Error::ZeroVector
            | Error::EmptyGraph
            | Error::InfeasibleCardinality { .. }
            | Error::Infeasible(_)
            | Error::MaxIters(_)
            | Error::TooLarge { .. }
            | Error::SingularKkt => 3,
            Error::Internal(_) => 4,
        }
    }

    /// Solver-side failures that training/evaluation skip and count.
    pub fn is_numerical(&self) -> bool {
        self.exit_code() == 3
    }
}
