//! Contract tests for the command-line surface, run against the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apc_tdsv::backend::read_scores;
use apc_tdsv::pipeline::parse_report;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cli").join(name)
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.cfg")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apc-tdsv")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn evaluate_reports_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sid.report");
    let cfg = default_config();
    let scores = fixture("sid.scores");
    let trials = fixture("trials.tsv");
    let o = run(&[
        "--config", path(&cfg), "evaluate",
        "--scores", path(&scores), "--trials", path(&trials), "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv = parse_report(&fs::read_to_string(&out).unwrap());
    // targets {3, 1} against {2, 0, -1, -2}
    assert_eq!(kv["eer"], "0.25");
    assert_eq!(kv["min_dcf"], "0.5");
    assert_eq!(kv["n_target"], "2");
    assert_eq!(kv["n_nontarget"], "4");
    assert_eq!(kv["eer_tc_vs_tw"], "0.5");

    // a balanced cost moves the minimum to the (0, 1/4) point
    let o = run(&[
        "--config", path(&cfg), "evaluate", "--p-target", "0.5",
        "--scores", path(&scores), "--trials", path(&trials),
    ]);
    assert!(o.status.success());
    let kv = parse_report(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(kv["min_dcf"], "0.25");
}

#[test]
fn evaluate_rejects_misaligned_scores() {
    let cfg = default_config();
    let o = run(&[
        "--config", path(&cfg), "evaluate",
        "--scores", path(&fixture("shuffled.scores")), "--trials", path(&fixture("trials.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row"), "{err}");
}

#[test]
fn fuse_is_the_weighted_sum() {
    let dir = tempfile::tempdir().unwrap();
    let scores_dir = dir.path().join("scores");
    fs::create_dir_all(&scores_dir).unwrap();
    fs::copy(fixture("sid.scores"), scores_dir.join("sid.scores")).unwrap();
    fs::copy(fixture("pid.scores"), scores_dir.join("pid.scores")).unwrap();
    let cfg = default_config();
    let o = run(&["--config", path(&cfg), "--stage-dir", path(dir.path()), "-q", "fuse", "--weights", "0.5,0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sid = read_scores(&fixture("sid.scores")).unwrap();
    let pid = read_scores(&fixture("pid.scores")).unwrap();
    let fused = read_scores(&scores_dir.join("fused.scores")).unwrap();
    assert_eq!(fused.len(), sid.len());
    for ((f, s), p) in fused.iter().zip(&sid).zip(&pid) {
        assert_eq!((f.enroll.as_str(), f.test.as_str()), (s.enroll.as_str(), s.test.as_str()));
        assert_eq!(f.score, 0.5 * s.score + 0.5 * p.score);
    }
    assert_eq!(fused[1].score, -2.0);

    // same inputs and weights: nothing to do; new weights: rerun
    let o = run(&["--config", path(&cfg), "--stage-dir", path(dir.path()), "fuse", "--weights", "0.5,0.5"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("up to date"));
    let o = run(&["--config", path(&cfg), "--stage-dir", path(dir.path()), "-q", "fuse", "--weights", "1,0"]);
    assert!(o.status.success());
    assert_eq!(read_scores(&scores_dir.join("fused.scores")).unwrap(), sid);
}

#[test]
fn validate_manifest_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.wav"), b"").unwrap();
    let manifest = dir.path().join("m.tsv");
    fs::write(
        &manifest,
        "utt_id\twav_path\tspeaker_id\tphrase_id\tphonemes\tduration_s\n\
         u1\ta.wav\ts1\t0\t0 1\t1\n\
         u1\ta.wav\ts1\t0\t0 1\t1\n\
         u2\tnone.wav\ts1\t0\t0 1\t1\n",
    )
    .unwrap();
    let cfg = default_config();
    let o = run(&["--config", path(&cfg), "validate-manifest", path(&manifest)]);
    assert_eq!(o.status.code(), Some(1));
    let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(text.contains("line 3: duplicate utt_id u1 (first on line 2)"), "{text}");
    assert!(text.contains("line 4: missing audio file"), "{text}");

    fs::write(&manifest, "utt_id\twav_path\tspeaker_id\tphrase_id\tphonemes\tduration_s\nu1\ta.wav\ts1\t0\t0 1\t1\n").unwrap();
    let o = run(&["--config", path(&cfg), "validate-manifest", path(&manifest)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\napc.hidden = 8\napc.hiden = 9\n").unwrap();
    let o = run(&["--config", path(&cfg), "prep"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains(":3") || err.contains("line 3"), "{err}");
    assert!(err.contains("apc.hiden"), "{err}");
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let o = run(&["--config", path(&cfg), "--stage-dir", path(dir.path()), "score-sid"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("earlier stages"));
}
