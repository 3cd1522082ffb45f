use riskstrat_core::eval::EvalError;
use riskstrat_core::explain::ExplainError;
use riskstrat_core::ingest::IngestError;
use riskstrat_core::model::ModelError;
use riskstrat_core::synth::SynthError;
use thiserror::Error;

/// Failure classes reported on the single error line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    File,
    Schema,
    Training,
    Evaluation,
    Explanation,
    Rendering,
    Internal,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Usage => "usage",
            Self::File => "file",
            Self::Schema => "schema",
            Self::Training => "training",
            Self::Evaluation => "evaluation",
            Self::Explanation => "explanation",
            Self::Rendering => "rendering",
            Self::Internal => "internal",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("IndexOutOfRange(instance {index}, cohort has {len} rows)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("SchemaMismatch(model features {model:?}, cohort features {cohort:?})")]
    SchemaMismatch { model: Vec<String>, cohort: Vec<String> },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Usage(_) | Self::IndexOutOfRange { .. } | Self::Synth(_) => ErrorClass::Usage,
            Self::Read { .. } | Self::Json { .. } => ErrorClass::File,
            Self::Write { .. } => ErrorClass::Rendering,
            Self::SchemaMismatch { .. } => ErrorClass::Schema,
            Self::Ingest(e) => match e {
                IngestError::FileNotFound(_) | IngestError::Io(_) => ErrorClass::File,
                _ => ErrorClass::Schema,
            },
            Self::Model(e) => match e {
                ModelError::UnsupportedVersion(_) | ModelError::Json(_) => ErrorClass::File,
                _ => ErrorClass::Training,
            },
            Self::Eval(_) => ErrorClass::Evaluation,
            Self::Explain(_) => ErrorClass::Explanation,
        }
    }

    /// Variant name of the underlying error, e.g. `MissingColumn`.
    pub fn kind(&self) -> String {
        let debug = match self {
            Self::Usage(_) => return "Usage".into(),
            Self::Read { .. } => return "Read".into(),
            Self::Write { .. } => return "Write".into(),
            Self::Json { .. } => return "InvalidJson".into(),
            Self::IndexOutOfRange { .. } => return "IndexOutOfRange".into(),
            Self::SchemaMismatch { .. } => return "SchemaMismatch".into(),
            Self::Ingest(e) => format!("{e:?}"),
            Self::Model(e) => format!("{e:?}"),
            Self::Eval(e) => format!("{e:?}"),
            Self::Explain(e) => format!("{e:?}"),
            Self::Synth(e) => format!("{e:?}"),
        };
        debug
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or_default()
            .to_string()
    }

    /// 2 for bad input or usage, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage | ErrorClass::File | ErrorClass::Schema => 2,
            ErrorClass::Training => match self {
                Self::Model(ModelError::SingleClass | ModelError::TooFewPerClass { .. } | ModelError::TooFewRows(_) | ModelError::InvalidConfig(_)) => 2,
                _ => 1,
            },
            _ => 1,
        }
    }

    /// The one line printed to stderr.
    pub fn line(&self) -> String {
        let detail = self.to_string().replace('\n', " ");
        format!(
            "error: class={} kind={} detail={:?}",
            self.class().as_str(),
            self.kind(),
            detail
        )
    }
}
