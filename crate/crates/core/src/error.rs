use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate distribution: all entries are zero")]
    DegenerateDistribution,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stage mismatch: expected stage {expected}, got {found} ({what})")]
    StageMismatch {
        expected: usize,
        found: usize,
        what: &'static str,
    },

    #[error("control {control} is unreachable in context {context} (zero output probability)")]
    UnreachableOutput { context: usize, control: usize },

    #[error("numerical consistency violated: {0}")]
    NumericalConsistency(String),

    #[error("objective rose by {rise:e} at iteration {iteration} with the continuation frozen")]
    NumericalRegression { iteration: usize, rise: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration invalid:\n{}", format_violations(.0))]
    Config(Vec<ConfigViolation>),

    #[error("training failed at stage {stage}: {flagged} of {total} grid solves did not converge")]
    TrainingFailure {
        stage: usize,
        flagged: usize,
        total: usize,
    },

    #[error("stale artifact: fingerprint {found} does not match configuration {expected}")]
    StaleArtifact { expected: String, found: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("enumeration budget exceeded: {count} evaluations requested, limit {limit}")]
    BudgetExceeded { count: u128, limit: u128 },

    #[error("propagation failed at stage {stage}: {source}")]
    Propagation {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bench fit failed: {0}")]
    BenchFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One violated constraint in a configuration file, addressed by field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn format_violations(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(|c| format!("  - {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
