//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A realized token was assigned probability zero by the policy.
    #[error("token {token} at step {step} has zero probability under the policy")]
    ZeroProbabilityToken { token: u32, step: usize },

    /// A recorded predictive distribution disagrees with the policy's
    /// computed predictive at the same prefix.
    #[error("recorded predictive for teacher {teacher} differs from the policy's computed predictive (max abs diff {max_diff:e})")]
    PredictiveMismatch { teacher: usize, max_diff: f64 },

    /// KL(p || q) is undefined: p puts mass where q has none.
    #[error("absolute continuity violation: p({index}) = {p} > 0 but q({index}) = 0")]
    AbsoluteContinuityViolation { index: usize, p: f64 },

    #[error("invalid categorical distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    /// A drift event targets a teacher index outside the ensemble.
    #[error("drift event targets teacher {teacher} but the ensemble has {n_teachers} teachers")]
    UnknownTeacherIndex { teacher: usize, n_teachers: usize },

    /// Two stream windows share no context buckets.
    #[error("stream windows share no context buckets")]
    NoSharedContexts,

    /// Not enough history records to fill both detection windows.
    #[error("teacher {teacher}: {available} records in [{from}, {to}) but 2W = {required} required")]
    InsufficientHistory {
        teacher: String,
        available: usize,
        required: usize,
        from: i64,
        to: i64,
    },

    /// No (context, prefix) alignment points could be harvested from the corpus.
    #[error("no alignment points could be built from the corpus")]
    EmptyAlignmentSet,

    /// The encoded self-distillation conditioning cannot fit the context cap.
    #[error("encoded conditioning needs at least {required} tokens but the cap is {cap}")]
    ContextOverflow { required: usize, cap: usize },

    /// Training loss blew past 10x its initial value.
    #[error("training diverged at step {step}: loss {loss:e} exceeds 10x initial {initial:e}")]
    DivergenceDetected { step: usize, loss: f64, initial: f64 },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema error at {path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },

    /// Metric rows passed to the CSV exporter do not share one key set.
    #[error("metric row {row} has keys {actual:?}, expected {expected:?}")]
    HeterogeneousRows {
        row: usize,
        expected: Vec<String>,
        actual: Vec<String>,
    },

    /// A pipeline stage requires an artifact an earlier stage did not produce.
    #[error("missing stage artifact: {0}")]
    MissingStageArtifact(String),

    /// Checkpoint and task vocabularies differ.
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    /// A manifest-referenced artifact no longer matches its recorded hash.
    #[error("artifact {name} at {path} hashes to {actual}, manifest records {expected}")]
    HashMismatch {
        name: String,
        path: String,
        expected: String,
        actual: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidVocab(_) | Error::UnknownTeacherIndex { .. } => 2,
            Error::DivergenceDetected { .. } => 4,
            _ => 3,
        }
    }
}
