use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use apc_tdsv::backend::read_trials;
use apc_tdsv::io_util::write_atomic;
use apc_tdsv::pipeline::{
    evaluate_score_file, validate_manifest, Manifest, Pipeline, PipelineConfig, Stage, StageOutcome,
    ValidationLimits, MAX_PHRASE_ID,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apc-tdsv", version, about = "Text-dependent speaker verification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (flat key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `paths.stage_dir` from the config.
    #[arg(long, global = true)]
    stage_dir: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or import the corpus, validate manifests, extract features.
    Prep,
    /// Pre-train the autoregressive predictive coding encoder.
    TrainApc,
    /// Train the phrase decoder on the frozen encoder.
    TrainPid,
    /// Train the speaker decoder on the frozen encoder.
    TrainSid,
    /// Speaker embeddings and phrase posteriors for every utterance.
    Extract,
    /// LDA, PLDA and speaker scores for the trial list.
    ScoreSid,
    /// Phrase scores for the trial list.
    ScorePid,
    /// Weighted sum of the speaker and phrase scores.
    Fuse {
        /// Comma-separated weights for (sid, pid).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// EER and minDCF reports.
    Evaluate(EvaluateArgs),
    /// Every stage in order; finished stages are skipped.
    RunAll,
    /// Check a manifest and list every violation.
    ValidateManifest {
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    p_target: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    /// Evaluate this score file instead of the pipeline's (needs --trials).
    #[arg(long, requires = "trials")]
    scores: Option<PathBuf>,
    /// Labelled trial list matching --scores row by row.
    #[arg(long, requires = "scores")]
    trials: Option<PathBuf>,
    /// Write the report here instead of stdout (with --scores).
    #[arg(long, requires = "scores")]
    out: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let path = common.config.as_ref().context("--config is required")?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &common.stage_dir {
        cfg.paths.stage_dir = dir.clone();
    }
    Ok(cfg)
}

fn run_stage(pipe: &Pipeline, stage: Stage, quiet: bool) -> Result<()> {
    let outcome = pipe.run_stage(stage).with_context(|| format!("stage {stage} failed"))?;
    if !quiet {
        match outcome {
            StageOutcome::Ran { .. } => eprintln!("{stage}: done"),
            StageOutcome::UpToDate => eprintln!("{stage}: up to date, nothing to do"),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.common.quiet;
    let mut cfg = load_config(&cli.common)?;
    let stage = match &cli.command {
        Command::Prep => Stage::Prep,
        Command::TrainApc => Stage::TrainApc,
        Command::TrainPid => Stage::TrainPid,
        Command::TrainSid => Stage::TrainSid,
        Command::Extract => Stage::Extract,
        Command::ScoreSid => Stage::ScoreSid,
        Command::ScorePid => Stage::ScorePid,
        Command::Fuse { weights } => {
            if let Some(w) = weights {
                cfg.fusion_weights = w.clone();
            }
            Stage::Fuse
        }
        Command::Evaluate(args) => {
            if let Some(p) = args.p_target {
                cfg.metrics.p_target = p;
            }
            if let Some(c) = args.c_miss {
                cfg.metrics.c_miss = c;
            }
            if let Some(c) = args.c_fa {
                cfg.metrics.c_fa = c;
            }
            if let (Some(scores), Some(trials)) = (&args.scores, &args.trials) {
                cfg.metrics.validate()?;
                let key = read_trials(trials)?;
                let report = evaluate_score_file(scores, &key, &cfg.metrics)?;
                let text = report.render(&scores.display().to_string());
                match &args.out {
                    Some(out) => write_atomic(out, text.as_bytes())?,
                    None => print!("{text}"),
                }
                return Ok(());
            }
            Stage::Evaluate
        }
        Command::RunAll => {
            let mut pipe = Pipeline::new(cfg)?;
            pipe.verbose = !quiet;
            for stage in Stage::ALL {
                run_stage(&pipe, stage, quiet)?;
            }
            if !quiet {
                print!("{}", std::fs::read_to_string(pipe.layout.summary())?);
            }
            return Ok(());
        }
        Command::ValidateManifest { manifest } => {
            let m = Manifest::read(manifest)?;
            let limits = ValidationLimits {
                phoneme_inventory: cfg.pid.arch.phonemes,
                apc_shift: cfg.apc.shift_n,
                max_phrase_id: MAX_PHRASE_ID.min(cfg.pid.arch.phrases.saturating_sub(1)),
            };
            let base = manifest.parent().unwrap_or(std::path::Path::new(""));
            let violations = validate_manifest(&m, base, &limits);
            for v in &violations {
                println!("{v}");
            }
            if !violations.is_empty() {
                bail!("{} violation(s) in {}", violations.len(), manifest.display());
            }
            if !quiet {
                eprintln!("{}: {} rows, no violations", manifest.display(), m.len());
            }
            return Ok(());
        }
    };
    let mut pipe = Pipeline::new(cfg)?;
    pipe.verbose = !quiet;
    run_stage(&pipe, stage, quiet)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
