//! Trial lists, enrollment maps and score files (tab-separated text).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};

/// Speaker (target/imposter) crossed with phrase (correct/wrong). Only
/// `TC` is a target trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialType {
    TC,
    TW,
    IC,
    IW,
}

impl TrialType {
    pub const ALL: [TrialType; 4] = [TrialType::TC, TrialType::TW, TrialType::IC, TrialType::IW];

    pub fn is_target(self) -> bool {
        self == TrialType::TC
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialType::TC => "TC",
            TrialType::TW => "TW",
            TrialType::IC => "IC",
            TrialType::IW => "IW",
        }
    }

    pub fn classify(same_speaker: bool, same_phrase: bool) -> Self {
        match (same_speaker, same_phrase) {
            (true, true) => TrialType::TC,
            (true, false) => TrialType::TW,
            (false, true) => TrialType::IC,
            (false, false) => TrialType::IW,
        }
    }
}

impl fmt::Display for TrialType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrialType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trial type {s:?} (expected TC, TW, IC or IW)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    /// Absent for blind scoring.
    pub kind: Option<TrialType>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnrollmentModel {
    pub id: String,
    pub utts: Vec<String>,
    pub phrase: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedTrial {
    pub enroll: String,
    pub test: String,
    pub reason: String,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, msg: msg.into() }
}

/// Non-blank lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn check_id(path: &str, line: usize, what: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(parse_err(path, line, format!("{what} {id:?} is empty or contains whitespace")));
    }
    Ok(())
}

pub fn parse_trials(text: &str, path: &str) -> Result<Vec<Trial>> {
    lines(text)
        .map(|(n, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(parse_err(path, n, format!("expected 2 or 3 tab-separated fields, got {}", cols.len())));
            }
            check_id(path, n, "enroll id", cols[0])?;
            check_id(path, n, "test id", cols[1])?;
            let kind = match cols.get(2) {
                Some(t) => Some(t.parse().map_err(|e: Error| parse_err(path, n, e.to_string()))?),
                None => None,
            };
            Ok(Trial { enroll: cols[0].to_string(), test: cols[1].to_string(), kind })
        })
        .collect()
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.enroll);
        out.push('\t');
        out.push_str(&t.test);
        if let Some(k) = t.kind {
            out.push('\t');
            out.push_str(k.as_str());
        }
        out.push('\n');
    }
    out
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    parse_trials(&read_to_string(path)?, &path.display().to_string())
}

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    write_atomic(path, format_trials(trials).as_bytes())
}

pub fn parse_enrollment(text: &str, path: &str) -> Result<Vec<EnrollmentModel>> {
    let mut models: Vec<EnrollmentModel> = Vec::new();
    for (n, l) in lines(text) {
        let cols: Vec<&str> = l.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(path, n, format!("expected 3 tab-separated fields, got {}", cols.len())));
        }
        check_id(path, n, "model id", cols[0])?;
        let utts: Vec<String> = cols[1].split(',').map(str::to_string).collect();
        for u in &utts {
            check_id(path, n, "utterance id", u)?;
        }
        let phrase = cols[2]
            .parse()
            .map_err(|_| parse_err(path, n, format!("phrase id {:?} is not a non-negative integer", cols[2])))?;
        if models.iter().any(|m| m.id == cols[0]) {
            return Err(parse_err(path, n, format!("duplicate model id {}", cols[0])));
        }
        models.push(EnrollmentModel { id: cols[0].to_string(), utts, phrase });
    }
    Ok(models)
}

pub fn format_enrollment(models: &[EnrollmentModel]) -> String {
    models
        .iter()
        .map(|m| format!("{}\t{}\t{}\n", m.id, m.utts.join(","), m.phrase))
        .collect()
}

pub fn read_enrollment(path: &Path) -> Result<Vec<EnrollmentModel>> {
    parse_enrollment(&read_to_string(path)?, &path.display().to_string())
}

pub fn write_enrollment(path: &Path, models: &[EnrollmentModel]) -> Result<()> {
    write_atomic(path, format_enrollment(models).as_bytes())
}

pub fn parse_scores(text: &str, path: &str) -> Result<Vec<ScoreRecord>> {
    lines(text)
        .map(|(n, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(path, n, format!("expected 3 tab-separated fields, got {}", cols.len())));
            }
            let score: f64 = cols[2]
                .parse()
                .map_err(|_| parse_err(path, n, format!("score {:?} is not a number", cols[2])))?;
            if !score.is_finite() {
                return Err(parse_err(path, n, "score is not finite"));
            }
            Ok(ScoreRecord { enroll: cols[0].to_string(), test: cols[1].to_string(), score })
        })
        .collect()
}

/// `Display` for `f64` is the shortest decimal that parses back exactly.
pub fn format_scores(scores: &[ScoreRecord]) -> String {
    scores.iter().map(|s| format!("{}\t{}\t{}\n", s.enroll, s.test, s.score)).collect()
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    parse_scores(&read_to_string(path)?, &path.display().to_string())
}

pub fn write_scores(path: &Path, scores: &[ScoreRecord]) -> Result<()> {
    write_atomic(path, format_scores(scores).as_bytes())
}

pub fn format_skipped(skipped: &[SkippedTrial]) -> String {
    skipped.iter().map(|s| format!("{}\t{}\t{}\n", s.enroll, s.test, s.reason)).collect()
}

/// Scores paired with the trial types of the key list, row by row.
pub fn label_scores(scores: &[ScoreRecord], key: &[Trial]) -> Result<Vec<(TrialType, f64)>> {
    if scores.len() != key.len() {
        return Err(Error::Misaligned {
            row: scores.len().min(key.len()),
            left: format!("{} scores", scores.len()),
            right: format!("{} trials", key.len()),
        });
    }
    scores
        .iter()
        .zip(key)
        .enumerate()
        .map(|(row, (s, t))| {
            if s.enroll != t.enroll || s.test != t.test {
                return Err(Error::Misaligned {
                    row,
                    left: format!("{}/{}", s.enroll, s.test),
                    right: format!("{}/{}", t.enroll, t.test),
                });
            }
            let kind = t
                .kind
                .ok_or_else(|| Error::InvalidArgument(format!("trial {row} ({}/{}) has no trial type", t.enroll, t.test)))?;
            Ok((kind, s.score))
        })
        .collect()
}
