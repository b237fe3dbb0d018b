use std::path::PathBuf;

/// Errors raised anywhere in the preference-data and training pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("{}line {line}: {msg}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    /// No connected component of the thresholded map reached `min_area`.
    #[error("no region for hypothesis `{hypothesis_id}`")]
    NoRegion { hypothesis_id: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed on input `{input}`: {source}")]
    Stage {
        stage: &'static str,
        input: String,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: Option<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path,
            line,
            msg: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str, input: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            input: input.into(),
            source: Box::new(self),
        }
    }

    pub fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Precondition(_) => 1,
            Error::Shape(_)
            | Error::Parse { .. }
            | Error::NoRegion { .. }
            | Error::Lookup(_)
            | Error::Data(_)
            | Error::Io { .. } => 2,
            Error::ContractViolation(_)
            | Error::State(_)
            | Error::Numeric(_)
            | Error::Pipeline(_)
            | Error::Invariant(_) => 3,
            Error::Stage { source, .. } | Error::Round { source, .. } => source.exit_code(),
        }
    }
}
