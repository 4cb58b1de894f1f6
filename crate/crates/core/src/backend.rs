//! Embedding back end: LDA, length normalization, two-covariance PLDA,
//! trial scoring and score fusion.

mod lda;
mod linalg;
mod persist;
mod plda;
mod scoring;
mod trials;

pub use lda::{lda_train, length_normalize, scatter_matrices, LdaTransform, LDA_RIDGE};
pub use linalg::EIGEN_FLOOR;
pub use plda::{plda_adapt, plda_llr, plda_train, PldaModel, PldaScorer, PldaTrainOptions, DEFAULT_ADAPT_ALPHA};
pub use scoring::{fuse_scores, fuse_train, preprocess, FusionModel, ScoredTrials, SidBackend};
pub use trials::{
    format_enrollment, format_scores, format_skipped, format_trials, label_scores, parse_enrollment, parse_scores,
    parse_trials, read_enrollment, read_scores, read_trials, write_enrollment, write_scores, write_trials,
    EnrollmentModel, ScoreRecord, SkippedTrial, Trial, TrialType,
};
