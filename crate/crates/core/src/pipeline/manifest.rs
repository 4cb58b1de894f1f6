//! Utterance manifests: one tab-separated row per utterance behind a fixed
//! header, `-` marking an absent optional field.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::frontend::{num_frames, SAMPLE_RATE};
use crate::io_util::{read_to_string, write_atomic};

pub const MANIFEST_HEADER: &str = "utt_id\twav_path\tspeaker_id\tphrase_id\tphonemes\tduration_s";
/// Phrase labels index an 11-way head.
pub const MAX_PHRASE_ID: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub utt_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub wav_path: PathBuf,
    pub speaker_id: Option<String>,
    pub phrase_id: Option<usize>,
    pub phonemes: Option<Vec<usize>>,
    pub duration_s: f64,
}

impl ManifestRow {
    /// Frames the front end will produce for this duration.
    pub fn expected_frames(&self) -> usize {
        num_frames((self.duration_s * SAMPLE_RATE as f64).round() as usize)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for r in &self.rows {
            let phon = r.phonemes.as_ref().map_or_else(
                || "-".to_string(),
                |p| p.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            );
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.utt_id,
                r.wav_path.display(),
                opt(&r.speaker_id),
                opt(&r.phrase_id),
                phon,
                r.duration_s
            ));
        }
        out
    }

    /// Parses rows; semantic checks are left to [`validate_manifest`].
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_string(), line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
            Some((i, _)) => return Err(err(i + 1, format!("expected header {MANIFEST_HEADER:?}"))),
            None => return Ok(Self::default()),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if cols.len() != 6 {
                return Err(err(n, format!("expected 6 tab-separated fields, got {}", cols.len())));
            }
            let absent = |s: &str| s == "-";
            let phrase_id = if absent(cols[3]) {
                None
            } else {
                Some(cols[3].parse().map_err(|_| err(n, format!("phrase_id {:?} is not an integer", cols[3])))?)
            };
            let phonemes = if absent(cols[4]) {
                None
            } else {
                Some(
                    cols[4]
                        .split_whitespace()
                        .map(|p| p.parse().map_err(|_| err(n, format!("phoneme {p:?} is not an integer"))))
                        .collect::<Result<Vec<usize>>>()?,
                )
            };
            let duration_s: f64 = cols[5]
                .parse()
                .map_err(|_| err(n, format!("duration {:?} is not a number", cols[5])))?;
            rows.push(ManifestRow {
                utt_id: cols[0].to_string(),
                wav_path: PathBuf::from(cols[1]),
                speaker_id: (!absent(cols[2])).then(|| cols[2].to_string()),
                phrase_id,
                phonemes,
                duration_s,
            });
        }
        Ok(Self { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if let Some(s) = &r.speaker_id {
                if !out.contains(s) {
                    out.push(s.clone());
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DuplicateId { utt_id: String, first_line: usize, line: usize },
    MissingFile { line: usize, path: PathBuf },
    PhraseOutOfRange { line: usize, phrase: usize, max: usize },
    PhonemeOutOfRange { line: usize, phoneme: usize, inventory: usize },
    CtcInfeasible { line: usize, need: usize, frames: usize },
    TooShortForShift { line: usize, frames: usize, shift: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { utt_id, first_line, line } => {
                write!(f, "line {line}: duplicate utt_id {utt_id} (first on line {first_line})")
            }
            Violation::MissingFile { line, path } => write!(f, "line {line}: missing audio file {}", path.display()),
            Violation::PhraseOutOfRange { line, phrase, max } => {
                write!(f, "line {line}: phrase_id {phrase} outside 0..={max}")
            }
            Violation::PhonemeOutOfRange { line, phoneme, inventory } => {
                write!(f, "line {line}: phoneme {phoneme} outside inventory of {inventory}")
            }
            Violation::CtcInfeasible { line, need, frames } => {
                write!(f, "line {line}: CTC-infeasible transcript needs {need} frames, utterance has {frames}")
            }
            Violation::TooShortForShift { line, frames, shift } => {
                write!(f, "line {line}: {frames} frames is too short for prediction shift {shift}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidationLimits {
    pub phoneme_inventory: usize,
    pub apc_shift: usize,
    pub max_phrase_id: usize,
}

/// Lists every violation; an empty list means the manifest is usable.
/// Line numbers count the header as line 1.
pub fn validate_manifest(manifest: &Manifest, base_dir: &Path, limits: &ValidationLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        let line = i + 2;
        if let Some(&first_line) = seen.get(r.utt_id.as_str()) {
            out.push(Violation::DuplicateId { utt_id: r.utt_id.clone(), first_line, line });
        } else {
            seen.insert(&r.utt_id, line);
        }
        let path = base_dir.join(&r.wav_path);
        if !path.is_file() {
            out.push(Violation::MissingFile { line, path });
        }
        if let Some(p) = r.phrase_id.filter(|&p| p > limits.max_phrase_id) {
            out.push(Violation::PhraseOutOfRange { line, phrase: p, max: limits.max_phrase_id });
        }
        let frames = r.expected_frames();
        if let Some(ph) = &r.phonemes {
            if let Some(&bad) = ph.iter().find(|&&p| p >= limits.phoneme_inventory) {
                out.push(Violation::PhonemeOutOfRange { line, phoneme: bad, inventory: limits.phoneme_inventory });
            } else if let Ok(labels) = LabelSequence::new(ph.clone(), limits.phoneme_inventory) {
                if labels.check_feasible(frames).is_err() {
                    out.push(Violation::CtcInfeasible { line, need: labels.min_frames(), frames });
                }
            }
        }
        if frames <= limits.apc_shift {
            out.push(Violation::TooShortForShift { line, frames, shift: limits.apc_shift });
        }
    }
    out
}
