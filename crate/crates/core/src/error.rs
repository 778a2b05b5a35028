use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("functional `{functional}` cannot be evaluated on a {kind} distribution")]
    VariantMismatch {
        functional: String,
        kind: &'static str,
    },

    #[error("invalid functional: {0}")]
    InvalidFunctional(String),

    #[error("grid mismatch: expected {expected} points, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("no prior on this grid satisfies the moment constraints{}", describe_rows(.violated))]
    Infeasible { violated: Vec<usize> },

    #[error("problem too large for the brute-force oracle: {0}")]
    SizeLimit(String),

    #[error("invalid linear program: {0}")]
    InvalidProblem(String),

    #[error("estimator does not accept this input: {0}")]
    RepresentationMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown baseline `{0}`")]
    UnknownBaseline(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("MCMC target is not finite at {0}")]
    NonFiniteTarget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn describe_rows(rows: &[usize]) -> String {
    if rows.is_empty() {
        String::new()
    } else {
        let list: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
        format!(" (violated constraint rows: {})", list.join(", "))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
