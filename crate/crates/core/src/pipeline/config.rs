//! Flat `section.key = value` configuration. Every key has a default;
//! a file only lists what it changes. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::synth::SyntheticCorpusSpec;
use crate::apc::{ApcConfig, LayerCombination};
use crate::backend::DEFAULT_ADAPT_ALPHA;
use crate::decoders::{PidConfig, SidConfig};
use crate::error::{Error, Result};
use crate::frontend::{FrontendConfig, WindowKind};
use crate::io_util::{read_to_string, sha256_bytes};
use crate::metrics::DcfParams;
use crate::tensor::OptimizerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct PathsConfig {
    /// Artifact directory; relative paths resolve against the config file.
    pub stage_dir: PathBuf,
    /// Existing corpus directory in the layout written by the synthetic
    /// generator; empty means generate one.
    pub corpus: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendConfig {
    pub lda_dim: usize,
    pub plda_alpha: f64,
    pub plda_em_iterations: usize,
    /// Adapt the PLDA model on the dev split.
    pub adapt: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: SyntheticCorpusSpec,
    pub frontend: FrontendConfig,
    pub apc: ApcConfig,
    pub pid: PidConfig,
    pub sid: SidConfig,
    pub backend: BackendConfig,
    pub fusion_weights: Vec<f64>,
    pub metrics: DcfParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: PathsConfig { stage_dir: PathBuf::from("work"), corpus: PathBuf::new() },
            corpus: SyntheticCorpusSpec::default(),
            frontend: FrontendConfig::default(),
            apc: ApcConfig::default(),
            pid: PidConfig::default(),
            sid: SidConfig::default(),
            backend: BackendConfig { lda_dim: 200, plda_alpha: DEFAULT_ADAPT_ALPHA, plda_em_iterations: 0, adapt: true },
            fusion_weights: vec![0.5, 0.5],
            metrics: DcfParams::default(),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("cannot parse {s:?} as {}", stringify!($t)))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_value!(usize, u64, f64, bool);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|w| f64::parse_value(w.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for LayerCombination {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        LayerCombination::from_str(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl ConfigValue for WindowKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "povey" => Ok(WindowKind::Povey),
            "hamming" => Ok(WindowKind::Hamming),
            _ => Err(format!("unknown window {s:?} (expected povey or hamming)")),
        }
    }
    fn render(&self) -> String {
        match self {
            WindowKind::Povey => "povey",
            WindowKind::Hamming => "hamming",
        }
        .to_string()
    }
}

impl ConfigValue for OptimizerKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("unknown optimizer {s:?} (expected adam or sgd)")),
        }
    }
    fn render(&self) -> String {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
        .to_string()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        impl PipelineConfig {
            /// Every recognized key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn set_key(&mut self, key: &str, value: &str) -> Option<std::result::Result<(), String>> {
                match key {
                    $($key => Some(ConfigValue::parse_value(value).map(|v| self.$($field).+ = v)),)*
                    _ => None,
                }
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, ConfigValue::render(&self.$($field).+))),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed;
    "paths.stage_dir" => paths.stage_dir;
    "paths.corpus" => paths.corpus;
    "corpus.speakers" => corpus.speakers;
    "corpus.trial_speakers" => corpus.trial_speakers;
    "corpus.phrases" => corpus.phrases;
    "corpus.utts_per_speaker_phrase" => corpus.utts_per_speaker_phrase;
    "corpus.phonemes" => corpus.phonemes;
    "corpus.enroll_utts" => corpus.enroll_utts;
    "corpus.trials_per_type" => corpus.trials_per_type;
    "corpus.noise_floor" => corpus.noise_floor;
    "frontend.num_mel_bins" => frontend.num_mel_bins;
    "frontend.pre_emphasis" => frontend.pre_emphasis;
    "frontend.window" => frontend.window;
    "frontend.fft_size" => frontend.fft_size;
    "frontend.mel_low_hz" => frontend.mel_low_hz;
    "frontend.mel_high_hz" => frontend.mel_high_hz;
    "frontend.energy_floor" => frontend.energy_floor;
    "frontend.sad_energy_offset" => frontend.sad_energy_offset;
    "frontend.sad_context_frames" => frontend.sad_context_frames;
    "apc.prenet_dim" => apc.arch.prenet_dim;
    "apc.hidden" => apc.arch.hidden;
    "apc.layers" => apc.arch.layers;
    "apc.dropout" => apc.arch.dropout;
    "apc.shift_n" => apc.shift_n;
    "apc.layer_combination" => apc.layer_combination;
    "apc.epochs" => apc.train.epochs;
    "apc.learning_rate" => apc.train.learning_rate;
    "apc.anneal" => apc.train.anneal;
    "apc.batch_size" => apc.train.batch_size;
    "apc.optimizer" => apc.train.optimizer;
    "pid.blstm_hidden" => pid.arch.blstm_hidden;
    "pid.blstm_layers" => pid.arch.blstm_layers;
    "pid.phonemes" => pid.arch.phonemes;
    "pid.fc_dim" => pid.arch.fc_dim;
    "pid.phrases" => pid.arch.phrases;
    "pid.lambda" => pid.lambda;
    "pid.epochs" => pid.train.epochs;
    "pid.learning_rate" => pid.train.learning_rate;
    "pid.anneal" => pid.train.anneal;
    "pid.batch_size" => pid.train.batch_size;
    "pid.optimizer" => pid.train.optimizer;
    "sid.blstm_hidden" => sid.arch.blstm_hidden;
    "sid.blstm_layers" => sid.arch.blstm_layers;
    "sid.embedding_dim" => sid.arch.embedding_dim;
    "sid.speakers" => sid.arch.speakers;
    "sid.segment_frames" => sid.segment_frames;
    "sid.min_tail_frames" => sid.min_tail_frames;
    "sid.epochs" => sid.train.epochs;
    "sid.learning_rate" => sid.train.learning_rate;
    "sid.anneal" => sid.train.anneal;
    "sid.batch_size" => sid.train.batch_size;
    "sid.optimizer" => sid.train.optimizer;
    "backend.lda_dim" => backend.lda_dim;
    "backend.plda_alpha" => backend.plda_alpha;
    "backend.plda_em_iterations" => backend.plda_em_iterations;
    "backend.adapt" => backend.adapt;
    "fusion.weights" => fusion_weights;
    "metrics.p_target" => metrics.p_target;
    "metrics.c_miss" => metrics.c_miss;
    "metrics.c_fa" => metrics.c_fa;
}

impl PipelineConfig {
    /// Defaults overridden by the `key = value` lines of `text`; `#` starts
    /// a comment. Errors name the line and key.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { path: path.to_string(), line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("key {key} set twice")));
            }
            match cfg.set_key(key, value) {
                None => return Err(err(format!("unknown key {key}"))),
                Some(Err(msg)) => return Err(err(format!("{key}: {msg}"))),
                Some(Ok(())) => seen.push(key),
            }
        }
        cfg.apc.arch.input_dim = cfg.frontend.num_mel_bins;
        cfg.corpus.seed = cfg.seed;
        Ok(cfg)
    }

    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&read_to_string(path)?, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.paths.stage_dir.is_relative() {
            cfg.paths.stage_dir = base.join(&cfg.paths.stage_dir);
        }
        if !cfg.paths.corpus.as_os_str().is_empty() && cfg.paths.corpus.is_relative() {
            cfg.paths.corpus = base.join(&cfg.paths.corpus);
        }
        Ok(cfg)
    }

    /// Sets the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = seed;
        self
    }

    pub fn synthetic(&self) -> bool {
        self.paths.corpus.as_os_str().is_empty()
    }

    /// Canonical text of every key; parsing it gives back this config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hash of the keys under the given section prefixes plus the seed.
    pub fn section_hash(&self, sections: &[&str]) -> String {
        let text: String = self
            .entries()
            .into_iter()
            .filter(|(k, _)| *k == "seed" || sections.iter().any(|s| k.starts_with(&format!("{s}."))))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        sha256_bytes(text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.apc.validate()?;
        if self.apc.arch.input_dim != self.frontend.num_mel_bins {
            return Err(Error::InvalidArgument("apc input dim must equal frontend.num_mel_bins".into()));
        }
        for (name, t) in [("pid", &self.pid.train), ("sid", &self.sid.train)] {
            t.validate().map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))?;
        }
        if self.pid.arch.phrases == 0 || self.pid.arch.phrases > super::manifest::MAX_PHRASE_ID + 1 {
            return Err(Error::InvalidArgument(format!("pid.phrases {} not in 1..=11", self.pid.arch.phrases)));
        }
        if self.synthetic() {
            self.corpus.validate()?;
            if self.corpus.phonemes != self.pid.arch.phonemes {
                return Err(Error::InvalidArgument(format!(
                    "pid.phonemes {} must equal corpus.phonemes {}",
                    self.pid.arch.phonemes, self.corpus.phonemes
                )));
            }
            if self.corpus.phrases > self.pid.arch.phrases {
                return Err(Error::InvalidArgument("corpus.phrases exceeds pid.phrases".into()));
            }
            if self.corpus.train_speakers() != self.sid.arch.speakers {
                return Err(Error::InvalidArgument(format!(
                    "sid.speakers {} must equal the {} training speakers",
                    self.sid.arch.speakers,
                    self.corpus.train_speakers()
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.backend.plda_alpha) {
            return Err(Error::InvalidArgument("backend.plda_alpha must be in [0, 1]".into()));
        }
        if self.backend.lda_dim == 0 || self.backend.lda_dim > self.sid.arch.embedding_dim {
            return Err(Error::InvalidArgument("backend.lda_dim must be in 1..=sid.embedding_dim".into()));
        }
        if self.fusion_weights.len() != 2 {
            return Err(Error::InvalidArgument("fusion.weights needs one weight per system (sid, pid)".into()));
        }
        self.metrics.validate()
    }
}
