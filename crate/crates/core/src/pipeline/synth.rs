//! Tone-sequence toy corpus. Each "phoneme" is a harmonic tone at a fixed
//! base frequency; a phrase is a fixed sequence of 3 to 5 such tones; a
//! speaker shifts pitch slightly and colours the harmonics with a spectral
//! tilt and a formant-like resonance. Transcripts are therefore exact.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::manifest::{Manifest, ManifestRow};
use crate::backend::{write_enrollment, write_trials, EnrollmentModel, Trial, TrialType};
use crate::error::{Error, Result};
use crate::frontend::{write_wav, AudioBuffer, SAMPLE_RATE};
use crate::io_util::write_atomic;
use crate::{seeded_rng, ModelRng};

pub const MAX_PHRASES: usize = 10;
const LOWEST_TONE_HZ: f64 = 180.0;
/// Ratio between adjacent phoneme tones; wider than the speaker pitch range
/// so a pitch shift never turns one phoneme into its neighbour.
const TONE_RATIO: f64 = 1.3;
const TOP_HARMONIC_HZ: f64 = 7000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpusSpec {
    /// All speakers, including the held-out trial speakers.
    pub speakers: usize,
    pub trial_speakers: usize,
    pub phrases: usize,
    pub utts_per_speaker_phrase: usize,
    pub phonemes: usize,
    pub enroll_utts: usize,
    /// Trials sampled per enrollment model and trial type.
    pub trials_per_type: usize,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            speakers: 25,
            trial_speakers: 5,
            phrases: 5,
            utts_per_speaker_phrase: 6,
            phonemes: 8,
            enroll_utts: 3,
            trials_per_type: 3,
            noise_floor: 0.003,
            seed: 7,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn train_speakers(&self) -> usize {
        self.speakers.saturating_sub(self.trial_speakers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synthetic corpus: {m}")));
        if !(2..=MAX_PHRASES).contains(&self.phrases) {
            return bad(format!("phrases must be in 2..={MAX_PHRASES} (wrong-phrase trials need 2), got {}", self.phrases));
        }
        if self.trial_speakers < 2 {
            return bad("imposter trials need at least 2 trial speakers".into());
        }
        if self.train_speakers() < 2 {
            return bad(format!("{} speakers leave fewer than 2 for training", self.speakers));
        }
        if self.utts_per_speaker_phrase < 2 {
            return bad("need at least 2 utterances per speaker and phrase (one goes to dev)".into());
        }
        if self.enroll_utts == 0 || self.enroll_utts >= self.utts_per_speaker_phrase {
            return bad(format!(
                "enroll_utts {} leaves no test utterance out of {}",
                self.enroll_utts, self.utts_per_speaker_phrase
            ));
        }
        if self.phonemes < 3 {
            return bad("need at least 3 phoneme tones".into());
        }
        if LOWEST_TONE_HZ * TONE_RATIO.powi(self.phonemes as i32 - 1) * 1.1 > SAMPLE_RATE as f64 / 2.0 {
            return bad(format!("{} tones do not fit below Nyquist", self.phonemes));
        }
        if self.trials_per_type == 0 {
            return bad("trials_per_type must be positive".into());
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor < 0.1) {
            return bad(format!("noise_floor {} not in [0, 0.1)", self.noise_floor));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerVoice {
    pub pitch: f64,
    /// Harmonic `h` has amplitude `h^-tilt` before the resonance.
    pub tilt: f64,
    pub formant_hz: f64,
    /// Onset time constant of each tone, seconds.
    pub attack_s: f64,
}

/// The fixed phrase and speaker definitions drawn from the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusDesign {
    pub tone_hz: Vec<f64>,
    pub phrases: Vec<Vec<usize>>,
    pub voices: Vec<SpeakerVoice>,
}

/// Values evenly spread over `[lo, hi]` with in-stratum jitter, shuffled:
/// distinct by construction.
fn stratified(rng: &mut ModelRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let width = (hi - lo) / n as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + width * (i as f64 + 0.25 + 0.5 * rng.random::<f64>())).collect();
    v.shuffle(rng);
    v
}

impl CorpusDesign {
    pub fn new(spec: &SyntheticCorpusSpec, rng: &mut ModelRng) -> Result<Self> {
        spec.validate()?;
        let tone_hz = (0..spec.phonemes).map(|k| LOWEST_TONE_HZ * TONE_RATIO.powi(k as i32)).collect();
        let mut phrases: Vec<Vec<usize>> = Vec::with_capacity(spec.phrases);
        let mut attempts = 0;
        while phrases.len() < spec.phrases {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidArgument(format!(
                    "cannot draw {} distinct phrases from {} tones",
                    spec.phrases, spec.phonemes
                )));
            }
            let len = rng.random_range(3..=5);
            let mut tones: Vec<usize> = Vec::with_capacity(len);
            while tones.len() < len {
                let t = rng.random_range(0..spec.phonemes);
                if tones.last() != Some(&t) {
                    tones.push(t);
                }
            }
            // the tone multiset must differ, so even order-blind features separate phrases
            let mut key = tones.clone();
            key.sort_unstable();
            if phrases.iter().all(|p| {
                let mut k = p.clone();
                k.sort_unstable();
                k != key
            }) {
                phrases.push(tones);
            }
        }
        let n = spec.speakers;
        let pitch = stratified(rng, n, 0.94, 1.06);
        let tilt = stratified(rng, n, 0.5, 2.2);
        let formant = stratified(rng, n, 900.0, 3400.0);
        let attack = stratified(rng, n, 0.005, 0.04);
        let voices = (0..n)
            .map(|s| SpeakerVoice { pitch: pitch[s], tilt: tilt[s], formant_hz: formant[s], attack_s: attack[s] })
            .collect();
        Ok(Self { tone_hz, phrases, voices })
    }

    /// One rendition of `phrase` by `speaker` with per-utterance jitter in
    /// timing, pitch and level.
    pub fn render(&self, speaker: usize, phrase: usize, noise_floor: f64, rng: &mut ModelRng) -> Result<AudioBuffer> {
        let voice = &self.voices[speaker];
        let sr = SAMPLE_RATE as f64;
        let lead = ((0.18 + 0.05 * rng.random::<f64>()) * sr) as usize;
        let trail = ((0.18 + 0.05 * rng.random::<f64>()) * sr) as usize;
        let gap = (0.02 * sr) as usize;
        let gain = 0.25 * (0.8 + 0.4 * rng.random::<f64>());
        let mut samples = vec![0.0; lead];
        for &tone in &self.phrases[phrase] {
            let len = (0.16 * (0.85 + 0.3 * rng.random::<f64>()) * sr) as usize;
            let jitter: f64 = StandardNormal.sample(rng);
            let f0 = self.tone_hz[tone] * voice.pitch * (1.0 + 0.005 * jitter);
            let harmonics: Vec<(f64, f64, f64)> = (1..)
                .map(|h| h as f64)
                .take_while(|h| h * f0 < TOP_HARMONIC_HZ)
                .map(|h| {
                    let resonance = 1.0 + 3.0 * (-((h * f0 - voice.formant_hz) / 400.0).powi(2)).exp();
                    (h * f0, h.powf(-voice.tilt) * resonance, 2.0 * PI * rng.random::<f64>())
                })
                .collect();
            let norm: f64 = harmonics.iter().map(|(_, a, _)| a).sum();
            let release = (0.02 * sr) as usize;
            for i in 0..len {
                let t = i as f64 / sr;
                let onset = 1.0 - (-t / voice.attack_s).exp();
                let offset = ((len - i) as f64 / release as f64).min(1.0);
                let v: f64 = harmonics.iter().map(|(f, a, ph)| a * (2.0 * PI * f * t + ph).sin()).sum();
                samples.push(gain * onset * offset * v / norm);
            }
            samples.extend(std::iter::repeat_n(0.0, gap));
        }
        samples.extend(std::iter::repeat_n(0.0, trail));
        for s in samples.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *s += noise_floor * n;
        }
        AudioBuffer::new(samples, SAMPLE_RATE)
    }
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:02}")
}

fn utt_id(s: usize, p: usize, u: usize) -> String {
    format!("{}_p{p}_u{u}", speaker_id(s))
}

pub fn enrollment_model_id(s: usize, p: usize) -> String {
    format!("m_{}_p{p}", speaker_id(s))
}

/// Paths written by [`synth_corpus`], relative to its output directory.
pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const DEV_MANIFEST: &str = "dev.tsv";
pub const TEST_MANIFEST: &str = "test.tsv";
pub const TRIALS_FILE: &str = "trials.tsv";
pub const ENROLL_FILE: &str = "enroll.tsv";
pub const DESIGN_FILE: &str = "design.txt";

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub design: CorpusDesign,
    pub train: Manifest,
    pub dev: Manifest,
    pub test: Manifest,
    pub enrollment: Vec<EnrollmentModel>,
    pub trials: Vec<Trial>,
}

/// Writes WAVs, speaker-disjoint train/dev/test manifests, the enrollment
/// map and a balanced TC/TW/IC/IW trial list under `out_dir`.
///
/// Training speakers put their last utterance of each phrase in dev; trial
/// speakers enroll with their first `enroll_utts` utterances of a phrase and
/// are tested on the rest.
pub fn synth_corpus(spec: &SyntheticCorpusSpec, out_dir: &Path) -> Result<SyntheticCorpus> {
    let mut rng = seeded_rng(spec.seed);
    let design = CorpusDesign::new(spec, &mut rng)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let n_train = spec.train_speakers();
    for s in 0..spec.speakers {
        for p in 0..spec.phrases {
            for u in 0..spec.utts_per_speaker_phrase {
                let id = utt_id(s, p, u);
                let audio = design.render(s, p, spec.noise_floor, &mut rng)?;
                let rel = format!("wav/{id}.wav");
                write_wav(&out_dir.join(&rel), &audio)?;
                let row = ManifestRow {
                    utt_id: id,
                    wav_path: rel.into(),
                    speaker_id: Some(speaker_id(s)),
                    phrase_id: Some(p),
                    phonemes: Some(design.phrases[p].clone()),
                    duration_s: audio.duration_s(),
                };
                if s >= n_train {
                    test.push(row);
                } else if u + 1 == spec.utts_per_speaker_phrase {
                    dev.push(row);
                } else {
                    train.push(row);
                }
            }
        }
    }
    let mut enrollment = Vec::new();
    for s in n_train..spec.speakers {
        for p in 0..spec.phrases {
            enrollment.push(EnrollmentModel {
                id: enrollment_model_id(s, p),
                utts: (0..spec.enroll_utts).map(|u| utt_id(s, p, u)).collect(),
                phrase: p,
            });
        }
    }
    let test_utts: Vec<(usize, usize, String)> = (n_train..spec.speakers)
        .flat_map(|s| {
            (0..spec.phrases)
                .flat_map(move |p| (spec.enroll_utts..spec.utts_per_speaker_phrase).map(move |u| (s, p, utt_id(s, p, u))))
        })
        .collect();
    let mut trials = Vec::new();
    for (m, model) in enrollment.iter().enumerate() {
        let (ms, mp) = (n_train + m / spec.phrases, model.phrase);
        for kind in TrialType::ALL {
            let mut pool: Vec<&String> = test_utts
                .iter()
                .filter(|(s, p, _)| TrialType::classify(*s == ms, *p == mp) == kind)
                .map(|(_, _, id)| id)
                .collect();
            if pool.is_empty() {
                return Err(Error::InvalidArgument(format!("corpus too small to form {kind} trials")));
            }
            pool.shuffle(&mut rng);
            pool.truncate(spec.trials_per_type);
            pool.sort();
            trials.extend(pool.into_iter().map(|id| Trial { enroll: model.id.clone(), test: id.clone(), kind: Some(kind) }));
        }
    }
    let corpus = SyntheticCorpus {
        design,
        train: Manifest { rows: train },
        dev: Manifest { rows: dev },
        test: Manifest { rows: test },
        enrollment,
        trials,
    };
    corpus.train.write(&out_dir.join(TRAIN_MANIFEST))?;
    corpus.dev.write(&out_dir.join(DEV_MANIFEST))?;
    corpus.test.write(&out_dir.join(TEST_MANIFEST))?;
    write_enrollment(&out_dir.join(ENROLL_FILE), &corpus.enrollment)?;
    write_trials(&out_dir.join(TRIALS_FILE), &corpus.trials)?;
    write_atomic(&out_dir.join(DESIGN_FILE), corpus.design.describe().as_bytes())?;
    Ok(corpus)
}

impl CorpusDesign {
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (k, hz) in self.tone_hz.iter().enumerate() {
            out.push_str(&format!("tone\t{k}\t{hz}\n"));
        }
        for (p, tones) in self.phrases.iter().enumerate() {
            let t: Vec<String> = tones.iter().map(usize::to_string).collect();
            out.push_str(&format!("phrase\t{p}\t{}\n", t.join(" ")));
        }
        for (s, v) in self.voices.iter().enumerate() {
            out.push_str(&format!(
                "speaker\t{}\tpitch={} tilt={} formant_hz={} attack_s={}\n",
                speaker_id(s),
                v.pitch,
                v.tilt,
                v.formant_hz,
                v.attack_s
            ));
        }
        out
    }
}

/// Nearest-centroid accuracy of per-utterance vectors:
/// centroids from `train`, accuracy on `test`.
pub fn nearest_centroid_accuracy(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)]) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyData("nearest-centroid sets".into()));
    }
    let classes = train.iter().map(|(_, c)| c + 1).max().unwrap_or(0);
    let d = train[0].0.len();
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (v, c) in train {
        counts[*c] += 1;
        sums[*c].iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    let centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    let correct = test
        .iter()
        .filter(|(v, c)| {
            let dist = |m: &Vec<f64>| m.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = centroids
                .iter()
                .enumerate()
                .filter_map(|(k, m)| m.as_ref().map(|m| (k, dist(m))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            best == Some(*c)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
