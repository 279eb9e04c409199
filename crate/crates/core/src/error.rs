use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty: no document has any token left after vocabulary filtering")]
    EmptyCorpus,

    #[error("duplicate document id `{0}`")]
    DuplicateDocumentId(String),

    #[error("category name `{0}` is not in the vocabulary")]
    NameNotInVocabulary(String),

    #[error(
        "category name `{0}` normalizes to more than one token; join it into a single token \
         (e.g. `federal_budget`) in both the corpus and the scenario"
    )]
    MultiTokenName(String),

    #[error("category names `{0}` and `{1}` resolve to the same vocabulary token")]
    DuplicateCategoryToken(String, String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("confident set is empty ({0})")]
    EmptyConfidentSet(String),

    #[error("document has no tokens after encoding")]
    EmptyInput,

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("category `{0}` is not matched by any document")]
    CategoryUncovered(String),

    #[error("missing artifact from stage `{0}`")]
    MissingArtifact(String),

    #[error("stale artifact from stage `{stage}`: {reason}")]
    StaleArtifact { stage: String, reason: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// Process exit code: 2 config error, 3 data error, 4 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::InvalidConfig(_) => 2,
            Error::TrainingDiverged(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
