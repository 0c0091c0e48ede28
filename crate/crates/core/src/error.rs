use thiserror::Error;

use crate::event::RelationLabel;

pub type Result<T, E = SsrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SsrError {
    #[error("malformed argument role {0:?}")]
    MalformedRole(String),

    #[error("target index {0} is not one of 1, 2, 4, 5")]
    TargetIndex(usize),

    #[error("parse error at token offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("max_len {max_len} cannot hold the {required} tokens that must be kept")]
    Capacity { max_len: usize, required: usize },

    #[error("label {0} never occurs, class weights are undefined")]
    ZeroFrequency(RelationLabel),

    #[error("cannot balance a corpus with fewer than two labels present")]
    CannotBalance,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("record {id}: needs at least 2 before/intent and 2 intent/after inferences")]
    InsufficientInferences { id: String },

    #[error("unknown relation label {0:?}")]
    UnknownLabel(String),

    #[error("label {label} is outside label space {space}")]
    LabelOutsideSpace { label: RelationLabel, space: String },

    #[error("label space mismatch: expected {expected}, found {found}")]
    LabelSpaceMismatch { expected: String, found: String },

    #[error("expected {expected} predictions, got {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("underdetermined synthetic spec: {0}")]
    Underdetermined(String),

    #[error("no sequence has all four relations annotated ({skipped} skipped)")]
    IncompleteAnnotation { skipped: usize },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("line {line}: {code}: {message}")]
    Schema { line: usize, code: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SsrError {
    /// True for errors caused by the content of input data rather than by
    /// how an operation was invoked.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            SsrError::Schema { .. }
                | SsrError::Json(_)
                | SsrError::UnknownLabel(_)
                | SsrError::LabelOutsideSpace { .. }
                | SsrError::LabelSpaceMismatch { .. }
                | SsrError::InsufficientData(_)
                | SsrError::InsufficientInferences { .. }
                | SsrError::IncompleteAnnotation { .. }
                | SsrError::ZeroFrequency(_)
                | SsrError::CannotBalance
                | SsrError::CountMismatch { .. }
                | SsrError::ModelFormat(_)
                | SsrError::VocabMismatch(_)
                | SsrError::Underdetermined(_)
        )
    }
}
