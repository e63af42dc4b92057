//! Error types shared across the toolkit.

use crate::model::LearnerId;

/// A single rejected input row: where it was and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source file (header counts as line 1).
    pub line: u64,
    /// Field that failed validation.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, field `{}`: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input rows failed validation. Parsing is a hard gate: no partial log
    /// is ever returned.
    #[error("{} row(s) rejected:\n{}", .0.len(), format_rows(.0))]
    RejectedRows(Vec<RowError>),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("duplicate survey row for learner(s): {}", .0.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", "))]
    DuplicateSurveyRows(Vec<LearnerId>),

    #[error("seed node `{0}` not in network")]
    SeedNotInNetwork(LearnerId),

    #[error("coders `{0}` and `{1}` share no jointly coded posts")]
    NoJointlyCodedPosts(String, String),

    #[error("traces mix scopes or transmission probabilities; summaries require a homogeneous replicate set")]
    MixedTraceScopes,

    #[error("network has no nodes")]
    EmptyNetwork,

    #[error("significance results do not cover edge ({0}, {1})")]
    UncoveredEdge(LearnerId, LearnerId),

    #[error("graph has {nodes} nodes; exact search refuses above {max} (exponential)")]
    OracleTooLarge { nodes: usize, max: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_rows(rows: &[RowError]) -> String {
    let mut out: Vec<String> = rows.iter().take(20).map(|r| format!("  {r}")).collect();
    if rows.len() > 20 {
        out.push(format!("  ... and {} more", rows.len() - 20));
    }
    out.join("\n")
}
