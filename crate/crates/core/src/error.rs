use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("input too short: {0}")]
    EmptyInput(String),

    #[error("need at least {need} frames, got {got}")]
    InsufficientFrames { need: usize, got: usize },

    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("infeasible CTC alignment: {labels} labels ({repeats} adjacent repeats) need {need} frames, got {frames}")]
    InfeasibleAlignment {
        labels: usize,
        repeats: usize,
        need: usize,
        frames: usize,
    },

    #[error("utterance too short: {frames} frames for prediction shift {shift}")]
    UtteranceTooShort { frames: usize, shift: usize },

    #[error("no speech frames detected")]
    NoSpeech,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("misaligned trial lists at row {row}: {left} vs {right}")]
    Misaligned {
        row: usize,
        left: String,
        right: String,
    },

    #[error("frozen encoder was modified: checksum {before} became {after}")]
    FreezeViolation { before: String, after: String },

    #[error("empty data set: {0}")]
    EmptyData(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
