use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use choreo_core::align::{AlignmentSpace, EmbedKind};
use choreo_core::bank::{retrieval_stats, Bank};
use choreo_core::conditions::{canonical_clip, motion_tokens, text_tokens};
use choreo_core::diffusion::{cfg_sample, Backbone, ControlBranch, NoiseSchedule, SampleOptions};
use choreo_core::kps::{self, KpsConfig, MusicOnlyGenerator, OracleGenerator};
use choreo_core::linalg::Mat;
use choreo_core::motion::io::{read_joint_sequence, write_motion_clip};
use choreo_core::pipeline::{
    load_generator, paths, read_music, read_paired_corpus, run_stages, PipelineConfig, Stage, StageStatus,
};
use choreo_core::report::{emit_report, render, write_report, ReportKind};
use choreo_core::{seed, Error, Result};

#[derive(Parser)]
#[command(name = "choreo", version, about = "Text-steerable music-to-dance generation on synthetic data")]
struct Cli {
    /// Pipeline configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration. `gen sample` uses it as the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every artifact.
    #[arg(long, global = true, default_value = "choreo-out")]
    out_dir: PathBuf,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the music–dance and text–motion corpora.
    Synth,
    /// Train the alignment space.
    Align,
    /// Retrieval banks. Without an action, builds both banks and the retrieval report.
    Bank {
        #[command(subcommand)]
        action: Option<BankAction>,
    },
    /// Generator training and sampling.
    Gen {
        #[command(subcommand)]
        action: GenAction,
    },
    /// Kinematic primitive success. Without an action, evaluates the trained model and the guidance grid.
    Kps {
        #[command(subcommand)]
        action: Option<KpsAction>,
    },
    /// Render a report from its JSON data.
    Report {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Report data, or a previously emitted report.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every stage enabled in the configuration.
    Pipeline,
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Subcommand)]
enum GenAction {
    TrainBackbone,
    Finetune,
    Sample {
        /// Music feature file, or `null`.
        #[arg(long)]
        music: String,
        /// Text instruction, or `null`.
        #[arg(long, default_value = "null")]
        text: String,
        #[arg(long, default_value_t = 3.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BankAction {
    /// Build both banks and the retrieval report.
    Build,
    /// Top-1 retrieval for one motion file.
    Retrieve {
        #[arg(long, value_enum)]
        bank: BankChoice,
        /// Joint-sequence motion file.
        #[arg(long)]
        query: PathBuf,
    },
    /// Retrieval statistics of both corpora against the built banks.
    Stats {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BankChoice {
    Md,
    Tm,
}

#[derive(Subcommand)]
enum KpsAction {
    /// Prompted versus null protocol for one generator.
    Run {
        #[arg(long, value_enum, default_value = "model")]
        generator: GeneratorChoice,
        /// One prompt per line; defaults to the eight primitive names.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Directory of music feature files; defaults to the music–dance corpus.
        #[arg(long)]
        music_pool: Option<PathBuf>,
        #[arg(short = 'R', long = "replicates")]
        r: Option<usize>,
        #[arg(short = 'G', long = "groups")]
        g: Option<usize>,
        /// Report path; defaults to `reports/kps-<generator>.json` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one predicate on a motion file.
    Predicate {
        #[arg(long)]
        name: String,
        #[arg(long)]
        motion: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorChoice {
    /// The trained diffusion generator in the output directory.
    Model,
    /// Calibrated primitive for the prompt, idle for null text.
    Oracle,
    /// Ignores text.
    MusicOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Kps,
    Retrieval,
    Tradeoff,
}

impl From<Kind> for ReportKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Kps => ReportKind::Kps,
            Kind::Retrieval => ReportKind::Retrieval,
            Kind::Tradeoff => ReportKind::Tradeoff,
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn stages(config: &PipelineConfig, out: &Path, which: &[Stage]) -> Result<()> {
    let outcome = run_stages(config, out, which)?;
    for (stage, status) in outcome.stages {
        let word = match status {
            StageStatus::Ran => "done",
            StageStatus::Skipped => "up to date",
        };
        println!("{:<9} {word}", stage.name());
    }
    println!("config {}", outcome.config_digest);
    Ok(())
}

fn null_or<T>(arg: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if arg == "null" {
        Ok(None)
    } else {
        f(arg).map(Some)
    }
}

fn sample(cli: &Cli, config: &PipelineConfig, music: &str, text: &str, scale: f64, seed: u64, out: &Path) -> Result<()> {
    let bb_path = cli.out_dir.join(paths::BACKBONE);
    let bb_text = std::fs::read_to_string(&bb_path)
        .map_err(|_| Error::MissingArtifact { stage: "sample".into(), path: bb_path.display().to_string() })?;
    let bb = Backbone::from_json(&bb_text)?;
    let music = null_or(music, |p| read_music(Path::new(p)))?;
    let text = null_or(text, text_tokens)?;
    let branch_path = cli.out_dir.join(paths::BRANCH);
    let branch = match std::fs::read_to_string(&branch_path) {
        Ok(t) => Some(ControlBranch::from_json(&t, &bb)?),
        Err(_) if text.is_none() => None,
        Err(_) => {
            return Err(Error::MissingArtifact { stage: "sample".into(), path: branch_path.display().to_string() });
        }
    };
    let schedule = NoiseSchedule::cosine(config.train.diffusion_steps)?;
    let options = SampleOptions { music_scale: scale, allow_unconditional: false };
    let clip = cfg_sample(&bb, branch.as_ref(), music.as_ref(), text.as_ref(), &schedule, &options, seed)?;
    write_motion_clip(out, &clip)?;
    info!("wrote {} frames to {}", clip.frames(), out.display());
    Ok(())
}

fn report(cli: &Cli, config: &PipelineConfig, kind: Kind, input: &Path) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(input)?)?;
    let (data, digest) = match (value.get("data"), value.get("config_digest").and_then(|d| d.as_str())) {
        (Some(d), Some(digest)) => (d.clone(), digest.to_string()),
        _ => (value.clone(), config.digest()),
    };
    let (json, txt) = emit_report(&cli.out_dir.join(paths::REPORTS), kind.into(), &data, &digest)?;
    print!("{}", std::fs::read_to_string(&txt)?);
    println!("wrote {} and {}", json.display(), txt.display());
    Ok(())
}

fn need(cli: &Cli, stage: &str, rel: &str) -> Result<String> {
    let p = cli.out_dir.join(rel);
    std::fs::read_to_string(&p).map_err(|_| Error::MissingArtifact { stage: stage.into(), path: p.display().to_string() })
}

fn bank_action(cli: &Cli, config: &PipelineConfig, action: &BankAction) -> Result<()> {
    match action {
        BankAction::Build => stages(config, &cli.out_dir, &[Stage::Bank]),
        BankAction::Retrieve { bank, query } => {
            let space = AlignmentSpace::load(&cli.out_dir.join(paths::ALIGN))
                .map_err(|_| Error::MissingArtifact { stage: "bank".into(), path: paths::ALIGN.into() })?;
            let rel = match bank {
                BankChoice::Md => paths::BANK_MD,
                BankChoice::Tm => paths::BANK_TM,
            };
            let bank = Bank::from_json(&need(cli, "bank", rel)?)?;
            let clip = canonical_clip(&read_joint_sequence(query)?)?;
            let q = space.embed(EmbedKind::MotionKey, &motion_tokens(&clip, space.config.token_stride))?;
            let hit = bank.top1(&q)?;
            let out = serde_json::json!({
                "source_id": hit.source_id,
                "similarity": hit.similarity,
                "accepted": hit.similarity >= bank.threshold(),
                "payload": hit.payload,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        BankAction::Stats { out } => {
            let space = AlignmentSpace::load(&cli.out_dir.join(paths::ALIGN))
                .map_err(|_| Error::MissingArtifact { stage: "bank".into(), path: paths::ALIGN.into() })?;
            let bank_md = Bank::from_json(&need(cli, "bank", paths::BANK_MD)?)?;
            let bank_tm = Bank::from_json(&need(cli, "bank", paths::BANK_TM)?)?;
            let md = read_paired_corpus(&cli.out_dir.join(paths::MD_DIR))?;
            let td = read_paired_corpus(&cli.out_dir.join(paths::TD_DIR))?;
            let q_td = td.iter().map(|i| space.embed_motion(i)).collect::<Result<Vec<_>>>()?;
            let q_md = md.iter().map(|i| space.embed_motion(i)).collect::<Result<Vec<_>>>()?;
            let stats = retrieval_stats(&bank_md, &bank_tm, &q_td, &q_md, bank_md.threshold())?;
            let data = serde_json::to_value(&stats)?;
            match out {
                Some(dest) => {
                    let (json, txt) = write_report(dest, ReportKind::Retrieval, &data, &config.digest())?;
                    print!("{}", std::fs::read_to_string(&txt)?);
                    info!("wrote {}", json.display());
                }
                None => println!("{}", render(ReportKind::Retrieval, &data)?),
            }
            Ok(())
        }
    }
}

fn music_pool(cli: &Cli, dir: Option<&Path>) -> Result<Vec<Mat>> {
    match dir {
        Some(d) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(d)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.extension().is_some_and(|e| e == "json"));
            files.sort();
            files.iter().map(|p| read_music(p)).collect()
        }
        None => {
            let dir = cli.out_dir.join(paths::MD_DIR);
            if !dir.join("pairs.json").exists() {
                return Err(Error::MissingArtifact { stage: "kps".into(), path: dir.join("pairs.json").display().to_string() });
            }
            read_paired_corpus(&dir)?
                .into_iter()
                .map(|i| i.music.ok_or(Error::Empty("music pool entry")))
                .collect()
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn kps_run(
    cli: &Cli,
    config: &PipelineConfig,
    generator: GeneratorChoice,
    prompts: Option<&Path>,
    pool_dir: Option<&Path>,
    r: Option<usize>,
    g: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let prompts = match prompts {
        Some(p) => std::fs::read_to_string(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        None => kps::default_prompts(),
    };
    let pool = music_pool(cli, pool_dir)?;
    let cfg = KpsConfig {
        r: r.unwrap_or(config.eval.r),
        g: g.unwrap_or(config.eval.g),
        seed: seed::derive(config.seed, &[7]),
        thresholds: config.eval.thresholds.clone(),
    };
    let report = match generator {
        GeneratorChoice::Model => {
            let gen = load_generator(&cli.out_dir, config.sampling.music_scale, config.train.diffusion_steps)?;
            kps::run_kps(&gen, &prompts, &pool, &cfg)?
        }
        GeneratorChoice::Oracle => kps::run_kps(&OracleGenerator::default(), &prompts, &pool, &cfg)?,
        GeneratorChoice::MusicOnly => kps::run_kps(&MusicOnlyGenerator::default(), &prompts, &pool, &cfg)?,
    };
    let stem = match generator {
        GeneratorChoice::Model => "kps-model",
        GeneratorChoice::Oracle => "kps-oracle",
        GeneratorChoice::MusicOnly => "kps-music-only",
    };
    let dest = out.map(Path::to_path_buf).unwrap_or_else(|| cli.out_dir.join(paths::REPORTS).join(format!("{stem}.json")));
    let (json, txt) = write_report(&dest, ReportKind::Kps, &serde_json::to_value(&report)?, &config.digest())?;
    print!("{}", std::fs::read_to_string(&txt)?);
    info!("wrote {}", json.display());
    Ok(())
}

fn kps_action(cli: &Cli, config: &PipelineConfig, action: &KpsAction) -> Result<()> {
    match action {
        KpsAction::Run { generator, prompts, music_pool, r, g, out } => {
            kps_run(cli, config, *generator, prompts.as_deref(), music_pool.as_deref(), *r, *g, out.as_deref())
        }
        KpsAction::Predicate { name, motion } => {
            let seq = read_joint_sequence(motion)?;
            let result = kps::eval_predicate(name, &seq, &config.eval.thresholds)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let out = &cli.out_dir;
    match &cli.command {
        Command::Synth => stages(&config, out, &[Stage::Synth]),
        Command::Align => stages(&config, out, &[Stage::Align]),
        Command::Bank { action: None } => stages(&config, out, &[Stage::Bank]),
        Command::Bank { action: Some(a) } => bank_action(cli, &config, a),
        Command::Gen { action: GenAction::TrainBackbone } => stages(&config, out, &[Stage::Train]),
        Command::Gen { action: GenAction::Finetune } => stages(&config, out, &[Stage::Finetune]),
        Command::Gen { action: GenAction::Sample { music, text, scale, out: dest } } => {
            sample(cli, &config, music, text, *scale, cli.seed.unwrap_or(0), dest)
        }
        Command::Kps { action: Some(a) } => kps_action(cli, &config, a),
        Command::Kps { action: None } => {
            stages(&config, out, &[Stage::Evaluate])?;
            print!("{}", std::fs::read_to_string(out.join(paths::REPORTS).join("kps.txt"))?);
            Ok(())
        }
        Command::Report { kind, input } => report(cli, &config, *kind, input),
        Command::Pipeline => {
            stages(&config, out, &config.stages.enabled())?;
            let kps = out.join(paths::REPORTS).join("kps.txt");
            if let Ok(t) = std::fs::read_to_string(kps) {
                print!("{t}");
            }
            Ok(())
        }
        Command::ShowConfig => {
            println!("{}", config.to_json()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
