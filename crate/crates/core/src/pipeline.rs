//! Manifests, configuration, the synthetic corpus and the staged pipeline
//! that ties the modules together.

mod config;
mod manifest;
mod stages;
mod synth;

pub use config::{BackendConfig, PathsConfig, PipelineConfig};
pub use manifest::{validate_manifest, Manifest, ManifestRow, ValidationLimits, Violation, MANIFEST_HEADER, MAX_PHRASE_ID};
pub use stages::{evaluate_score_file, parse_report, pid_trial_scores, Layout, Pipeline, Stage, StageOutcome};
pub use synth::{
    enrollment_model_id, nearest_centroid_accuracy, speaker_id, synth_corpus, CorpusDesign, SpeakerVoice,
    SyntheticCorpus, SyntheticCorpusSpec, DESIGN_FILE, DEV_MANIFEST, ENROLL_FILE, MAX_PHRASES, TEST_MANIFEST,
    TRAIN_MANIFEST, TRIALS_FILE,
};

#[cfg(test)]
mod tests;
