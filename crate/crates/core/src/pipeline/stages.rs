//! Pipeline stages over a stage directory.
//!
//! Each stage reads and writes fixed artifact paths. A stage's stamp is the
//! hash of its config sections and the bytes of its inputs; a rerun with an
//! unchanged stamp and all outputs present does nothing. Artifacts are
//! written to a temp file and renamed, and the stamp is written last, so an
//! interrupted stage simply runs again.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::PipelineConfig;
use super::manifest::{validate_manifest, Manifest, ValidationLimits, MAX_PHRASE_ID};
use super::synth::{
    nearest_centroid_accuracy, synth_corpus, DEV_MANIFEST, ENROLL_FILE, TEST_MANIFEST, TRAIN_MANIFEST, TRIALS_FILE,
};
use crate::apc::{extract_representations, train_apc, ApcModel};
use crate::archive::{Archive, ArchiveWriter, Entry};
use crate::backend::{
    fuse_scores, label_scores, lda_train, plda_adapt, plda_train, preprocess, read_enrollment, read_scores, read_trials,
    write_scores, format_skipped, EnrollmentModel, PldaScorer, PldaTrainOptions, ScoreRecord,
    SidBackend, SkippedTrial,
};
use crate::ctc::LabelSequence;
use crate::decoders::{
    chunk_segments, embed, pid_log_posteriors, train_pid, train_sid, verify_frozen, EncoderShape, PidExample, PidModel,
    SidExample, SidModel,
};
use crate::error::{Error, Result};
use crate::frontend::{apply_cmvn, compute_fbank, energy_sad, read_wav, FeatureMatrix, SadMask};
use crate::io_util::{read_to_string, sha256_bytes, sha256_file, write_atomic};
use crate::metrics::{evaluate, render_table, Report, TableRow};
use crate::tensor::{ParamStore, Tensor};
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Prep,
    TrainApc,
    TrainPid,
    TrainSid,
    Extract,
    ScoreSid,
    ScorePid,
    Fuse,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Prep,
        Stage::TrainApc,
        Stage::TrainPid,
        Stage::TrainSid,
        Stage::Extract,
        Stage::ScoreSid,
        Stage::ScorePid,
        Stage::Fuse,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prep => "prep",
            Stage::TrainApc => "train-apc",
            Stage::TrainPid => "train-pid",
            Stage::TrainSid => "train-sid",
            Stage::Extract => "extract",
            Stage::ScoreSid => "score-sid",
            Stage::ScorePid => "score-pid",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Config sections whose values feed this stage's stamp.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Prep => &["paths", "corpus", "frontend"],
            Stage::TrainApc => &["apc"],
            Stage::TrainPid => &["apc", "pid"],
            Stage::TrainSid => &["apc", "sid"],
            Stage::Extract => &["apc", "pid", "sid"],
            Stage::ScoreSid => &["backend"],
            Stage::ScorePid => &[],
            Stage::Fuse => &["fusion"],
            Stage::Evaluate => &["metrics"],
        }
    }

    /// Seeds differ per stage so a stage rerun alone draws the same numbers.
    fn seed_salt(self) -> u64 {
        (Stage::ALL.iter().position(|s| *s == self).unwrap_or(0) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// Artifact paths under a stage directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub corpus: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let root = cfg.paths.stage_dir.clone();
        let corpus = if cfg.synthetic() { root.join("corpus") } else { cfg.paths.corpus.clone() };
        Self { root, corpus }
    }

    pub fn corpus_file(&self, name: &str) -> PathBuf {
        self.corpus.join(name)
    }

    pub fn archive(&self, name: &str) -> (PathBuf, PathBuf) {
        let dir = self.root.join("archives");
        (dir.join(format!("{name}.ark")), dir.join(format!("{name}.idx")))
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.ckpt"))
    }

    pub fn scores(&self, name: &str) -> PathBuf {
        self.root.join("scores").join(format!("{name}.scores"))
    }

    pub fn skipped(&self, name: &str) -> PathBuf {
        self.root.join("scores").join(format!("{name}.scores.skipped"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.report"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("reports").join("summary.txt")
    }

    pub fn log(&self, stage: Stage) -> PathBuf {
        self.root.join("logs").join(format!("{stage}.log"))
    }

    pub fn stamp(&self, stage: Stage) -> PathBuf {
        self.root.join("stamps").join(format!("{stage}.stamp"))
    }

    fn manifests(&self) -> [PathBuf; 3] {
        [TRAIN_MANIFEST, DEV_MANIFEST, TEST_MANIFEST].map(|m| self.corpus_file(m))
    }

    fn pair(&self, name: &str) -> [PathBuf; 2] {
        let (a, i) = self.archive(name);
        [a, i]
    }

    pub fn inputs(&self, stage: Stage, synthetic: bool) -> Vec<PathBuf> {
        let mut v = Vec::new();
        match stage {
            Stage::Prep => {
                if !synthetic {
                    v.extend(self.manifests());
                }
            }
            Stage::TrainApc => {
                v.extend(self.manifests());
                v.extend(self.pair("feats"));
            }
            Stage::TrainPid | Stage::TrainSid => {
                v.extend(self.manifests());
                v.extend(self.pair("feats"));
                v.push(self.model("apc"));
            }
            Stage::Extract => {
                v.extend(self.manifests());
                v.extend(self.pair("feats"));
                v.extend(self.pair("sad"));
                v.extend(["apc", "pid", "sid"].map(|m| self.model(m)));
            }
            Stage::ScoreSid => {
                v.extend(self.manifests());
                v.extend([TRIALS_FILE, ENROLL_FILE].map(|f| self.corpus_file(f)));
                v.extend(self.pair("sid_embeddings"));
            }
            Stage::ScorePid => {
                v.extend([TRIALS_FILE, ENROLL_FILE].map(|f| self.corpus_file(f)));
                v.extend(self.pair("pid_posteriors"));
            }
            Stage::Fuse => v.extend([self.scores("sid"), self.scores("pid")]),
            Stage::Evaluate => {
                v.push(self.corpus_file(TRIALS_FILE));
                v.extend(["sid", "pid", "fused"].map(|s| self.scores(s)));
            }
        }
        v
    }

    pub fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Prep => {
                let mut v: Vec<PathBuf> = self.manifests().into();
                v.extend([TRIALS_FILE, ENROLL_FILE].map(|f| self.corpus_file(f)));
                v.extend(self.pair("feats"));
                v.extend(self.pair("sad"));
                v
            }
            Stage::TrainApc => vec![self.model("apc")],
            Stage::TrainPid => vec![self.model("pid")],
            Stage::TrainSid => vec![self.model("sid")],
            Stage::Extract => {
                let mut v: Vec<PathBuf> = self.pair("sid_embeddings").into();
                v.extend(self.pair("pid_posteriors"));
                v
            }
            Stage::ScoreSid => vec![self.model("lda"), self.model("plda"), self.scores("sid"), self.skipped("sid")],
            Stage::ScorePid => vec![self.scores("pid"), self.skipped("pid")],
            Stage::Fuse => vec![self.scores("fused")],
            Stage::Evaluate => vec![self.report("sid"), self.report("pid"), self.report("fused"), self.summary()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran { log: Vec<String> },
    UpToDate,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    /// Echo log lines to stderr.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        Ok(Self { cfg, layout, verbose: false })
    }

    fn stamp_key(&self, stage: Stage) -> Result<String> {
        let mut text = format!("stage={stage}\nconfig={}\n", self.cfg.section_hash(stage.sections()));
        for p in self.layout.inputs(stage, self.cfg.synthetic()) {
            let name = p.strip_prefix(&self.layout.root).unwrap_or(&p).display().to_string();
            text.push_str(&format!("{name}={}\n", sha256_file(&p)?));
        }
        Ok(sha256_bytes(text.as_bytes()))
    }

    pub fn is_up_to_date(&self, stage: Stage) -> Result<bool> {
        let stamp = self.layout.stamp(stage);
        if !stamp.is_file() || !self.layout.outputs(stage).iter().all(|p| p.is_file()) {
            return Ok(false);
        }
        Ok(read_to_string(&stamp)?.trim() == self.stamp_key(stage)?)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        for p in self.layout.inputs(stage, self.cfg.synthetic()) {
            if !p.is_file() {
                return Err(Error::InvalidArgument(format!(
                    "stage {stage} needs {} (run the earlier stages first)",
                    p.display()
                )));
            }
        }
        if self.is_up_to_date(stage)? {
            return Ok(StageOutcome::UpToDate);
        }
        let mut log = Vec::new();
        match stage {
            Stage::Prep => self.prep(&mut log)?,
            Stage::TrainApc => self.train_apc(&mut log)?,
            Stage::TrainPid => self.train_pid(&mut log)?,
            Stage::TrainSid => self.train_sid(&mut log)?,
            Stage::Extract => self.extract(&mut log)?,
            Stage::ScoreSid => self.score_sid(&mut log)?,
            Stage::ScorePid => self.score_pid(&mut log)?,
            Stage::Fuse => self.fuse(&mut log)?,
            Stage::Evaluate => self.evaluate(&mut log)?,
        }
        let mut text: String = log.iter().map(|l| format!("{l}\n")).collect();
        if text.is_empty() {
            text.push('\n');
        }
        write_atomic(&self.layout.log(stage), text.as_bytes())?;
        write_atomic(&self.layout.stamp(stage), format!("{}\n", self.stamp_key(stage)?).as_bytes())?;
        Ok(StageOutcome::Ran { log })
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageOutcome)>> {
        Stage::ALL.into_iter().map(|s| self.run_stage(s).map(|o| (s, o))).collect()
    }

    fn say(&self, line: &str) {
        if self.verbose {
            eprintln!("{line}");
        }
    }

    fn note(&self, log: &mut Vec<String>, line: String) {
        self.say(&line);
        log.push(line);
    }

    fn rng(&self, stage: Stage) -> crate::ModelRng {
        seeded_rng(self.cfg.seed ^ stage.seed_salt())
    }

    fn manifest(&self, name: &str) -> Result<Manifest> {
        Manifest::read(&self.layout.corpus_file(name))
    }

    fn archive(&self, name: &str) -> Result<Archive> {
        let (ark, idx) = self.layout.archive(name);
        Archive::read(&ark, &idx)
    }

    fn encoder(&self) -> Result<ApcModel> {
        let mut enc = ApcModel::load(&self.layout.model("apc"))?;
        enc.freeze();
        Ok(enc)
    }

    fn encoder_shape(&self, enc: &ApcModel) -> EncoderShape {
        EncoderShape::of(enc, self.cfg.apc.layer_combination)
    }

    // -- stages -------------------------------------------------------------

    fn prep(&self, log: &mut Vec<String>) -> Result<()> {
        if self.cfg.synthetic() {
            let corpus = synth_corpus(&self.cfg.corpus, &self.layout.corpus)?;
            self.note(
                log,
                format!(
                    "corpus: train={} dev={} test={} enrollment_models={} trials={}",
                    corpus.train.len(),
                    corpus.dev.len(),
                    corpus.test.len(),
                    corpus.enrollment.len(),
                    corpus.trials.len()
                ),
            );
        }
        let limits = ValidationLimits {
            phoneme_inventory: self.cfg.pid.arch.phonemes,
            apc_shift: self.cfg.apc.shift_n,
            max_phrase_id: MAX_PHRASE_ID.min(self.cfg.pid.arch.phrases - 1),
        };
        let mut feats = ArchiveWriter::new();
        let mut sad = ArchiveWriter::new();
        let mut means: HashMap<String, (Vec<f64>, Option<usize>)> = HashMap::new();
        for name in [TRAIN_MANIFEST, DEV_MANIFEST, TEST_MANIFEST] {
            let m = self.manifest(name)?;
            let violations = validate_manifest(&m, &self.layout.corpus, &limits);
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                return Err(Error::InvalidArgument(format!("{name}:\n  {}", list.join("\n  "))));
            }
            for row in &m.rows {
                let audio = read_wav(&self.layout.corpus.join(&row.wav_path))?;
                let raw = compute_fbank(&audio, &self.cfg.frontend)?;
                let f = apply_cmvn(&raw)?;
                feats.push(&row.utt_id, &Entry::from_rows(f.num_frames(), f.dim(), f.data()))?;
                let mask = energy_sad(&audio, &self.cfg.frontend)?;
                let flags: Vec<f64> = mask.flags().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                sad.push(&row.utt_id, &Entry::from_rows(flags.len(), 1, &flags))?;
                means.insert(row.utt_id.clone(), (column_means(&raw), row.phrase_id));
            }
            self.note(log, format!("{name}: {} utterances, no violations", m.len()));
        }
        let (ark, idx) = self.layout.archive("feats");
        feats.finish(&ark, &idx)?;
        let (ark, idx) = self.layout.archive("sad");
        sad.finish(&ark, &idx)?;

        // nearest-centroid phrase accuracy on un-normalized fbank means; CMVN
        // would zero the means
        let labelled = |m: &Manifest| -> Vec<(Vec<f64>, usize)> {
            m.rows
                .iter()
                .filter_map(|r| means.get(&r.utt_id).and_then(|(v, p)| p.map(|p| (v.clone(), p))))
                .collect()
        };
        let train = labelled(&self.manifest(TRAIN_MANIFEST)?);
        let test = labelled(&self.manifest(TEST_MANIFEST)?);
        if !train.is_empty() && !test.is_empty() {
            let acc = nearest_centroid_accuracy(&train, &test)?;
            self.note(log, format!("phrase_nearest_centroid_accuracy={acc}"));
        }
        Ok(())
    }

    fn features(&self, feats: &Archive, m: &Manifest) -> Result<Vec<FeatureMatrix>> {
        m.rows.iter().map(|r| load_features(feats, &r.utt_id)).collect()
    }

    fn train_apc(&self, log: &mut Vec<String>) -> Result<()> {
        let feats = self.archive("feats")?;
        let train = self.features(&feats, &self.manifest(TRAIN_MANIFEST)?)?;
        let dev = self.features(&feats, &self.manifest(DEV_MANIFEST)?)?;
        let mut rng = self.rng(Stage::TrainApc);
        let (model, tlog) = train_apc(&train, &dev, &self.cfg.apc, &mut rng)?;
        for e in &tlog.epochs {
            self.note(log, e.line());
        }
        self.note(log, format!("best_epoch={} skipped_short={}", tlog.best_epoch, tlog.skipped_short));
        model.save(&self.layout.model("apc"))?;
        self.note(log, format!("encoder_checksum={}", model.checksum()));
        Ok(())
    }

    fn reps(&self, enc: &ApcModel, feats: &Archive, id: &str) -> Result<Tensor> {
        Ok(extract_representations(enc, &load_features(feats, id)?)?.concat())
    }

    fn pid_examples(&self, enc: &ApcModel, feats: &Archive, m: &Manifest) -> Result<Vec<PidExample>> {
        m.rows
            .iter()
            .map(|r| {
                let phrase = r
                    .phrase_id
                    .ok_or_else(|| Error::InvalidArgument(format!("{} has no phrase label", r.utt_id)))?;
                let phonemes = match &r.phonemes {
                    Some(p) => Some(LabelSequence::new(p.clone(), self.cfg.pid.arch.phonemes)?),
                    None => None,
                };
                Ok(PidExample { reps: self.reps(enc, feats, &r.utt_id)?, phonemes, phrase })
            })
            .collect()
    }

    fn train_pid(&self, log: &mut Vec<String>) -> Result<()> {
        let enc = self.encoder()?;
        let before = enc.checksum();
        let feats = self.archive("feats")?;
        let train = self.pid_examples(&enc, &feats, &self.manifest(TRAIN_MANIFEST)?)?;
        let dev = self.pid_examples(&enc, &feats, &self.manifest(DEV_MANIFEST)?)?;
        let mut rng = self.rng(Stage::TrainPid);
        let (model, tlog) = train_pid(&train, &dev, self.encoder_shape(&enc), &self.cfg.pid, &mut rng)?;
        for e in &tlog.epochs {
            self.note(log, e.line());
        }
        verify_frozen(&before, &enc)?;
        self.note(log, format!("encoder_checksum_before={before}"));
        self.note(log, format!("encoder_checksum_after={}", enc.checksum()));
        model.params.save(&self.layout.model("pid"))
    }

    fn sid_examples(
        &self,
        enc: &ApcModel,
        feats: &Archive,
        m: &Manifest,
        speakers: &[String],
    ) -> Result<Vec<SidExample>> {
        let mut out = Vec::new();
        for r in &m.rows {
            let spk = r
                .speaker_id
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no speaker label", r.utt_id)))?;
            let Some(speaker) = speakers.iter().position(|s| s == spk) else {
                continue;
            };
            let f = load_features(feats, &r.utt_id)?;
            for (start, len) in chunk_segments(f.num_frames(), self.cfg.sid.segment_frames, self.cfg.sid.min_tail_frames) {
                let reps = extract_representations(enc, &f.slice(start, len))?.concat();
                out.push(SidExample { reps, speaker });
            }
        }
        Ok(out)
    }

    fn train_sid(&self, log: &mut Vec<String>) -> Result<()> {
        let enc = self.encoder()?;
        let before = enc.checksum();
        let feats = self.archive("feats")?;
        let train_m = self.manifest(TRAIN_MANIFEST)?;
        let speakers = train_m.speakers();
        if speakers.len() != self.cfg.sid.arch.speakers {
            return Err(Error::InvalidArgument(format!(
                "training manifest has {} speakers, sid.speakers is {}",
                speakers.len(),
                self.cfg.sid.arch.speakers
            )));
        }
        let train = self.sid_examples(&enc, &feats, &train_m, &speakers)?;
        let dev = self.sid_examples(&enc, &feats, &self.manifest(DEV_MANIFEST)?, &speakers)?;
        let mut rng = self.rng(Stage::TrainSid);
        let (model, tlog) = train_sid(&train, &dev, self.encoder_shape(&enc), &self.cfg.sid, &mut rng)?;
        for e in &tlog.epochs {
            self.note(log, e.line());
        }
        verify_frozen(&before, &enc)?;
        self.note(log, format!("segments={}", train.len()));
        self.note(log, format!("encoder_checksum_before={before}"));
        self.note(log, format!("encoder_checksum_after={}", enc.checksum()));
        model.params.save(&self.layout.model("sid"))
    }

    fn extract(&self, log: &mut Vec<String>) -> Result<()> {
        let enc = self.encoder()?;
        let shape = self.encoder_shape(&enc);
        let sid = SidModel::from_params(ParamStore::load(&self.layout.model("sid"))?, shape)?;
        let pid = PidModel::from_params(ParamStore::load(&self.layout.model("pid"))?, shape)?;
        let feats = self.archive("feats")?;
        let sad = self.archive("sad")?;
        let mut emb = ArchiveWriter::new();
        let mut post = ArchiveWriter::new();
        let (mut done, mut skipped) = (0, 0);
        for name in [TRAIN_MANIFEST, DEV_MANIFEST, TEST_MANIFEST] {
            for r in &self.manifest(name)?.rows {
                let reps = self.reps(&enc, &feats, &r.utt_id)?;
                let mask = load_sad(&sad, &r.utt_id)?;
                if mask.num_speech() == 0 {
                    emb.push(&r.utt_id, &Entry::Skip { reason: Error::NoSpeech.to_string() })?;
                    skipped += 1;
                } else {
                    let v = embed(&sid, &reps, Some(&mask))?;
                    emb.push(&r.utt_id, &Entry::from_rows(1, v.len(), &v))?;
                    done += 1;
                }
                if name == TEST_MANIFEST {
                    let lp = pid_log_posteriors(&pid, &reps)?;
                    post.push(&r.utt_id, &Entry::from_rows(1, lp.len(), &lp))?;
                }
            }
        }
        let (a, i) = self.layout.archive("sid_embeddings");
        emb.finish(&a, &i)?;
        let (a, i) = self.layout.archive("pid_posteriors");
        post.finish(&a, &i)?;
        self.note(log, format!("embeddings={done} skipped_no_speech={skipped}"));
        Ok(())
    }

    fn embeddings(&self, arch: &Archive, m: &Manifest) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut vs = Vec::new();
        let mut labels = Vec::new();
        for r in &m.rows {
            if let (Some(t), Some(s)) = (arch.tensor(&r.utt_id), &r.speaker_id) {
                vs.push(t.data().to_vec());
                labels.push(s.clone());
            }
        }
        (vs, labels)
    }

    fn score_sid(&self, log: &mut Vec<String>) -> Result<()> {
        let arch = self.archive("sid_embeddings")?;
        let (train_v, train_l) = self.embeddings(&arch, &self.manifest(TRAIN_MANIFEST)?);
        let lda = lda_train(&train_v, &train_l, self.cfg.backend.lda_dim)?;
        let projected = train_v.iter().map(|v| preprocess(&lda, v)).collect::<Result<Vec<_>>>()?;
        let opts = PldaTrainOptions { em_iterations: self.cfg.backend.plda_em_iterations };
        let mut plda = plda_train(&projected, &train_l, &opts)?;
        if self.cfg.backend.adapt {
            let (dev_v, dev_l) = self.embeddings(&arch, &self.manifest(DEV_MANIFEST)?);
            let dev_p = dev_v.iter().map(|v| preprocess(&lda, v)).collect::<Result<Vec<_>>>()?;
            plda = plda_adapt(&plda, &dev_p, &dev_l, self.cfg.backend.plda_alpha, &opts)?;
            self.note(log, format!("plda adapted on {} dev vectors, alpha={}", dev_p.len(), self.cfg.backend.plda_alpha));
        }
        lda.save(&self.layout.model("lda"))?;
        plda.save(&self.layout.model("plda"))?;
        self.note(log, format!("lda {} -> {}, plda trained on {} vectors", lda.in_dim(), lda.out_dim(), projected.len()));

        let scorer = PldaScorer::new(&plda)?;
        let embeddings: HashMap<String, Vec<f64>> = arch
            .ids()
            .iter()
            .filter_map(|id| arch.tensor(id).map(|t| (id.clone(), t.data().to_vec())))
            .collect();
        let trials = read_trials(&self.layout.corpus_file(TRIALS_FILE))?;
        let enrollment = read_enrollment(&self.layout.corpus_file(ENROLL_FILE))?;
        let out = SidBackend { lda: &lda, plda: &scorer }.score_trials(&trials, &enrollment, &embeddings)?;
        write_scores(&self.layout.scores("sid"), &out.scores)?;
        write_atomic(&self.layout.skipped("sid"), format_skipped(&out.skipped).as_bytes())?;
        self.note(log, format!("scored={} skipped={}", out.scores.len(), out.skipped.len()));
        Ok(())
    }

    fn score_pid(&self, log: &mut Vec<String>) -> Result<()> {
        let post = self.archive("pid_posteriors")?;
        let trials = read_trials(&self.layout.corpus_file(TRIALS_FILE))?;
        let enrollment = read_enrollment(&self.layout.corpus_file(ENROLL_FILE))?;
        let (scores, skipped) = pid_trial_scores(&trials, &enrollment, &post);
        write_scores(&self.layout.scores("pid"), &scores)?;
        write_atomic(&self.layout.skipped("pid"), format_skipped(&skipped).as_bytes())?;
        self.note(log, format!("scored={} skipped={}", scores.len(), skipped.len()));
        Ok(())
    }

    fn fuse(&self, log: &mut Vec<String>) -> Result<()> {
        let sid = read_scores(&self.layout.scores("sid"))?;
        let pid = read_scores(&self.layout.scores("pid"))?;
        let fused = fuse_scores(&[&sid, &pid], &self.cfg.fusion_weights)?;
        write_scores(&self.layout.scores("fused"), &fused)?;
        self.note(log, format!("fused {} trials with weights {:?}", fused.len(), self.cfg.fusion_weights));
        Ok(())
    }

    fn evaluate(&self, log: &mut Vec<String>) -> Result<()> {
        let key = read_trials(&self.layout.corpus_file(TRIALS_FILE))?;
        let mut rows = Vec::new();
        for (name, title) in [("sid", "SID"), ("pid", "PID"), ("fused", "SID+PID fusion")] {
            let report = evaluate_score_file(&self.layout.scores(name), &key, &self.cfg.metrics)?;
            write_atomic(&self.layout.report(name), report.render(title).as_bytes())?;
            rows.push(TableRow { system: title.to_string(), min_dcf: report.min_dcf, eer: report.eer });
            self.note(log, format!("{name}: eer={} min_dcf={}", report.eer, report.min_dcf));
        }
        write_atomic(&self.layout.summary(), render_table(&rows).as_bytes())
    }
}

fn column_means(f: &FeatureMatrix) -> Vec<f64> {
    let mut m = vec![0.0; f.dim()];
    for t in 0..f.num_frames() {
        m.iter_mut().zip(f.frame(t)).for_each(|(a, x)| *a += x);
    }
    m.iter().map(|v| v / f.num_frames() as f64).collect()
}

fn load_features(feats: &Archive, id: &str) -> Result<FeatureMatrix> {
    let t = feats
        .tensor(id)
        .ok_or_else(|| Error::InvalidArgument(format!("no features for {id}")))?;
    FeatureMatrix::from_tensor(&t)
}

fn load_sad(sad: &Archive, id: &str) -> Result<SadMask> {
    let t = sad
        .tensor(id)
        .ok_or_else(|| Error::InvalidArgument(format!("no SAD mask for {id}")))?;
    Ok(SadMask::new(t.data().iter().map(|v| *v > 0.5).collect()))
}

/// PID score per trial: the test utterance's log posterior of the
/// enrollment model's phrase.
pub fn pid_trial_scores(
    trials: &[crate::backend::Trial],
    enrollment: &[EnrollmentModel],
    posteriors: &Archive,
) -> (Vec<ScoreRecord>, Vec<SkippedTrial>) {
    let phrases: HashMap<&str, usize> = enrollment.iter().map(|m| (m.id.as_str(), m.phrase)).collect();
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for t in trials {
        let skip = |reason: String| SkippedTrial { enroll: t.enroll.clone(), test: t.test.clone(), reason };
        let Some(&phrase) = phrases.get(t.enroll.as_str()) else {
            skipped.push(skip(format!("unknown enrollment model {}", t.enroll)));
            continue;
        };
        match posteriors.tensor(&t.test) {
            Some(lp) if phrase < lp.len() => scores.push(ScoreRecord {
                enroll: t.enroll.clone(),
                test: t.test.clone(),
                score: lp.data()[phrase],
            }),
            Some(lp) => skipped.push(skip(format!("phrase {phrase} outside {}-way posteriors", lp.len()))),
            None => skipped.push(skip(format!("no phrase posteriors for {}", t.test))),
        }
    }
    (scores, skipped)
}

/// Metrics for a score file keyed by a labelled trial list.
pub fn evaluate_score_file(
    scores: &Path,
    key: &[crate::backend::Trial],
    params: &crate::metrics::DcfParams,
) -> Result<Report> {
    let labelled = label_scores(&read_scores(scores)?, key)?;
    evaluate(&labelled, params)
}

/// `key=value` lines of a report; other lines are ignored.
pub fn parse_report(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .filter(|(k, _)| !k.contains(char::is_whitespace) && !k.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
