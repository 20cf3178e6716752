//! Crate-wide error type.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two tensor shapes that an op requires to agree do not.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An op was called with an argument outside its contract.
    BadArgument { op: &'static str, msg: String },
    /// Non-finite value where a finite one is required.
    NonFinite { context: &'static str },
    /// A corpus-level operation needs at least one instance.
    EmptyCorpus,
    /// An utterance id the alignment filter needs is absent from the report.
    MissingAlignment { utt_id: String },
    /// No ratio bin reaches the requested minimum count.
    ThresholdTooHigh { min_bin_count: usize },
    /// Vocabulary fingerprints that must agree do not.
    VocabMismatch { expected: String, found: String },
    /// A named parameter failed a load/average compatibility check.
    ParamMismatch { name: String, msg: String },
    /// Gradient for a named parameter is non-finite.
    NonFiniteGrad { name: String },
    /// backward() was called twice on one tape without a reset.
    BackwardAlreadyRun,
    /// Training aborted on a non-finite loss.
    TrainingDiverged { epoch: usize, batch: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            Error::BadArgument { op, msg } => write!(f, "{op}: {msg}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::EmptyCorpus => write!(f, "corpus is empty"),
            Error::MissingAlignment { utt_id } => {
                write!(f, "alignment report has no entry for utterance '{utt_id}'")
            }
            Error::ThresholdTooHigh { min_bin_count } => {
                write!(
                    f,
                    "threshold exceeds corpus density: no ratio bin holds {min_bin_count} items"
                )
            }
            Error::VocabMismatch { expected, found } => {
                write!(
                    f,
                    "vocabulary fingerprint mismatch: expected {expected}, found {found}"
                )
            }
            Error::ParamMismatch { name, msg } => write!(f, "parameter '{name}': {msg}"),
            Error::NonFiniteGrad { name } => {
                write!(f, "non-finite gradient for parameter '{name}'")
            }
            Error::BackwardAlreadyRun => {
                write!(
                    f,
                    "backward() already ran on this tape; reset gradients first"
                )
            }
            Error::TrainingDiverged { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
