use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, attached to errors surfaced by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Manifest,
    Discovery,
    Grounding,
    Refinement,
    Classifier,
    Classify,
    Evaluate,
    Artifacts,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Manifest => "manifest",
            Stage::Discovery => "discovery",
            Stage::Grounding => "grounding",
            Stage::Refinement => "refinement",
            Stage::Classifier => "classifier",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
            Stage::Artifacts => "artifacts",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm is zero or below epsilon")]
    ZeroNormVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("image unreadable: {path}: {reason}")]
    ImageUnreadable { path: PathBuf, reason: String },

    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("no bracketed name list found in model output")]
    UnparseableNameList,
    #[error("insufficient contexts for {class}: {got} valid sentences, {needed} required")]
    InsufficientContexts {
        class: String,
        got: usize,
        needed: usize,
    },
    #[error("no support images for class {0}")]
    EmptySupportSet(String),
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("missing ground truth for: {}", .0.join(", "))]
    MissingGroundTruth(Vec<String>),
    #[error("classifier artifact corrupt: {0}")]
    ClassifierArtifactCorrupt(String),
    #[error("embedder fingerprint mismatch: artifact built with {artifact}, classifying with {current}")]
    FingerprintMismatch { artifact: String, current: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport failures and 5xx responses are worth retrying; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Innermost error beneath any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Tag an error with the stage it came from. Already-tagged errors keep their original tag.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| match e {
            tagged @ Error::Stage { .. } => tagged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
