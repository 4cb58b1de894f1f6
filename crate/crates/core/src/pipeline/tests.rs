use std::fs;
use std::path::Path;

use super::*;
use crate::backend::TrialType;
use crate::frontend::{compute_fbank, read_wav, FrontendConfig};
use crate::Error;

fn parse_err_line(text: &str) -> (usize, String) {
    match PipelineConfig::parse(text, "t.cfg") {
        Err(Error::Parse { line, msg, .. }) => (line, msg),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn config_errors_name_the_line() {
    let (line, msg) = parse_err_line("seed = 3\n\n# note\napc.hiden = 4\n");
    assert_eq!(line, 4);
    assert!(msg.contains("apc.hiden"), "{msg}");
    let (line, msg) = parse_err_line("seed = 3\nseed = 4\n");
    assert_eq!(line, 2);
    assert!(msg.contains("twice"), "{msg}");
    let (line, _) = parse_err_line("apc.layers = four\n");
    assert_eq!(line, 1);
    let (line, _) = parse_err_line("just words\n");
    assert_eq!(line, 1);
}

#[test]
fn config_text_roundtrip() {
    let cfg = PipelineConfig::parse("seed = 11\napc.hidden = 32 # trailing comment\nfusion.weights = 0.25, 0.75\n", "t")
        .unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.corpus.seed, 11);
    assert_eq!(cfg.apc.arch.hidden, 32);
    assert_eq!(cfg.fusion_weights, vec![0.25, 0.75]);
    let back = PipelineConfig::parse(&cfg.to_text(), "t").unwrap();
    assert_eq!(back, cfg);
    assert_eq!(PipelineConfig::parse(&PipelineConfig::default().to_text(), "t").unwrap(), PipelineConfig::default());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = PipelineConfig::load(&root.join("default.cfg")).unwrap();
    desk.validate().unwrap();
    assert_eq!(desk.corpus.train_speakers(), 20);
    assert!(desk.paths.stage_dir.starts_with(&root));
    let full = PipelineConfig::load(&root.join("paper.cfg")).unwrap();
    assert_eq!(full.apc.arch.hidden, 512);
    assert_eq!(full.sid.arch.embedding_dim, 600);
}

#[test]
fn section_hash_tracks_only_its_sections() {
    let a = PipelineConfig::default();
    let mut b = a.clone();
    b.backend.lda_dim = 7;
    assert_eq!(a.section_hash(&["apc"]), b.section_hash(&["apc"]));
    assert_ne!(a.section_hash(&["backend"]), b.section_hash(&["backend"]));
    assert_ne!(a.section_hash(&["apc"]), a.clone().with_seed(8).section_hash(&["apc"]));
}

#[test]
fn config_validation_cross_checks() {
    let mut cfg = PipelineConfig::default();
    cfg.sid.arch.speakers = 20;
    cfg.pid.arch.phonemes = 8;
    cfg.validate().unwrap();
    let mut bad = cfg.clone();
    bad.sid.arch.speakers = 19;
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.backend.lda_dim = 601;
    assert!(bad.validate().is_err());
    let mut bad = cfg;
    bad.fusion_weights = vec![1.0];
    assert!(bad.validate().is_err());
}

const LIMITS: ValidationLimits = ValidationLimits { phoneme_inventory: 4, apc_shift: 3, max_phrase_id: 10 };

#[test]
fn manifest_violations_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["a.wav", "b.wav", "c.wav", "d.wav"] {
        fs::write(dir.path().join(f), b"").unwrap();
    }
    let text = format!(
        "{MANIFEST_HEADER}\n\
         u1\ta.wav\tspk1\t0\t0 1 2\t1.0\n\
         u2\tb.wav\tspk1\t11\t0 1\t1.0\n\
         u1\tc.wav\tspk2\t1\t1\t1.0\n\
         u3\tmissing.wav\t-\t-\t-\t1.0\n\
         u4\td.wav\tspk2\t2\t0 0 0 0\t0.07\n\
         u5\td.wav\tspk2\t2\t3 7\t1.0\n\
         u6\td.wav\t-\t-\t-\t0.05\n"
    );
    let m = Manifest::parse(&text, "m.tsv").unwrap();
    let v = validate_manifest(&m, dir.path(), &LIMITS);
    assert!(v.contains(&Violation::DuplicateId { utt_id: "u1".into(), first_line: 2, line: 4 }), "{v:?}");
    assert!(v.contains(&Violation::PhraseOutOfRange { line: 3, phrase: 11, max: 10 }));
    assert!(v.iter().any(|x| matches!(x, Violation::MissingFile { line: 5, .. })));
    // 70 ms gives 5 frames; four equal labels need 7
    assert!(v.contains(&Violation::CtcInfeasible { line: 6, need: 7, frames: 5 }), "{v:?}");
    assert!(v.contains(&Violation::PhonemeOutOfRange { line: 7, phoneme: 7, inventory: 4 }));
    assert!(v.contains(&Violation::TooShortForShift { line: 8, frames: 3, shift: 3 }), "{v:?}");
    assert_eq!(v.len(), 6);
    let shown = v[0].to_string();
    assert!(shown.starts_with("line "), "{shown}");
}

#[test]
fn clean_manifest_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.wav"), b"").unwrap();
    let text = format!("{MANIFEST_HEADER}\nu1\ta.wav\tspk1\t0\t0 1 2\t1\nu2\ta.wav\t-\t-\t-\t2.5\n");
    let m = Manifest::parse(&text, "m.tsv").unwrap();
    assert!(validate_manifest(&m, dir.path(), &LIMITS).is_empty());
    assert_eq!(m.to_text(), text);
    assert_eq!(m.rows[1].speaker_id, None);
    assert_eq!(m.speakers(), vec!["spk1".to_string()]);
    assert!(Manifest::parse("wrong header\n", "m.tsv").is_err());
}

fn small_spec(seed: u64) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        speakers: 10,
        trial_speakers: 3,
        phrases: 5,
        utts_per_speaker_phrase: 4,
        enroll_utts: 2,
        seed,
        ..SyntheticCorpusSpec::default()
    }
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthetic_corpus_shape_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(&small_spec(3), a.path()).unwrap();
    synth_corpus(&small_spec(3), b.path()).unwrap();
    let wavs = fs::read_dir(a.path().join("wav")).unwrap().count();
    assert_eq!(wavs, 200);
    assert_eq!(corpus.train.len() + corpus.dev.len() + corpus.test.len(), 200);
    for kind in TrialType::ALL {
        assert!(corpus.trials.iter().any(|t| t.kind == Some(kind)), "no {kind} trials");
    }
    let train_spk = corpus.train.speakers();
    assert!(corpus.test.speakers().iter().all(|s| !train_spk.contains(s)));
    for row in corpus.train.rows.iter().chain(&corpus.test.rows) {
        let labels = crate::ctc::LabelSequence::new(row.phonemes.clone().unwrap(), 8).unwrap();
        labels.check_feasible(row.expected_frames()).unwrap();
    }
    assert!(tree_bytes(a.path()) == tree_bytes(b.path()), "same seed gave different bytes");
    let c = tempfile::tempdir().unwrap();
    synth_corpus(&small_spec(4), c.path()).unwrap();
    assert!(tree_bytes(a.path()) != tree_bytes(c.path()));
}

#[test]
fn phrases_are_separable_by_mean_fbank() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(&small_spec(5), dir.path()).unwrap();
    let cfg = FrontendConfig::default();
    let means = |m: &Manifest| -> Vec<(Vec<f64>, usize)> {
        m.rows
            .iter()
            .map(|r| {
                let f = compute_fbank(&read_wav(&dir.path().join(&r.wav_path)).unwrap(), &cfg).unwrap();
                let mut mean = vec![0.0; f.dim()];
                for t in 0..f.num_frames() {
                    mean.iter_mut().zip(f.frame(t)).for_each(|(a, x)| *a += x / f.num_frames() as f64);
                }
                (mean, r.phrase_id.unwrap())
            })
            .collect()
    };
    let acc = nearest_centroid_accuracy(&means(&corpus.train), &means(&corpus.test)).unwrap();
    assert!(acc >= 0.99, "nearest-centroid accuracy {acc}");
}

fn tiny_pipeline(stage_dir: &Path, extra: &str) -> Pipeline {
    let text = format!(
        "corpus.speakers = 4\ncorpus.trial_speakers = 2\ncorpus.phrases = 2\n\
         corpus.utts_per_speaker_phrase = 2\ncorpus.enroll_utts = 1\ncorpus.trials_per_type = 1\n\
         pid.phonemes = 8\nsid.speakers = 2\n{extra}"
    );
    let mut cfg = PipelineConfig::parse(&text, "tiny.cfg").unwrap();
    cfg.paths.stage_dir = stage_dir.to_path_buf();
    Pipeline::new(cfg).unwrap()
}

#[test]
fn stages_skip_when_inputs_and_config_are_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let p = tiny_pipeline(dir.path(), "");
    assert!(!p.is_up_to_date(Stage::Prep).unwrap());
    assert!(matches!(p.run_stage(Stage::Prep).unwrap(), StageOutcome::Ran { .. }));
    let feats = fs::read(p.layout.archive("feats").0).unwrap();
    assert!(matches!(p.run_stage(Stage::Prep).unwrap(), StageOutcome::UpToDate));

    // a setting outside the stage's sections leaves it current
    let q = tiny_pipeline(dir.path(), "backend.lda_dim = 3\n");
    assert!(q.is_up_to_date(Stage::Prep).unwrap());
    let r = tiny_pipeline(dir.path(), "corpus.noise_floor = 0.004\n");
    assert!(!r.is_up_to_date(Stage::Prep).unwrap());

    // a missing output forces a rerun that reproduces the same bytes
    fs::remove_file(p.layout.archive("feats").0).unwrap();
    assert!(!p.is_up_to_date(Stage::Prep).unwrap());
    p.run_stage(Stage::Prep).unwrap();
    assert_eq!(fs::read(p.layout.archive("feats").0).unwrap(), feats);
}

#[test]
fn later_stages_need_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = tiny_pipeline(dir.path(), "");
    let err = p.run_stage(Stage::TrainPid).unwrap_err();
    assert!(err.to_string().contains("earlier stages"), "{err}");
}

#[test]
fn stage_names_parse() {
    for s in Stage::ALL {
        assert_eq!(s.name().parse::<Stage>().unwrap(), s);
    }
    assert!("train".parse::<Stage>().is_err());
}
