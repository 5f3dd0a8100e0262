//! Staged end-to-end run: synthesize → align → bank → train → finetune → evaluate.
//!
//! Every stage reads and writes files under one output directory. A manifest
//! records, per stage, a digest of its configuration section and input files
//! together with digests of its outputs; a stage whose record still matches is
//! skipped.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{self, AlignConfig, AlignmentSpace};
use crate::bank::{build_bank, make_pseudo_triplets, retrieval_stats, Bank, BankKind};
use crate::conditions::{canonical_clip, music_beats, paired_corpus, CorpusConfig, CorpusKind, PairedItem};
use crate::diffusion::{
    finetune_control, train_backbone, Backbone, ControlBranch, DiffusionGenerator, FinetuneConfig, ModelConfig,
    NoiseSchedule, TrainConfig,
};
use crate::error::{Error, Result};
use crate::kps::{self, beat_alignment_score, diversity, kinematic_beats, ConditionedGenerator, KpsConfig, PredicateThresholds};
use crate::linalg::Mat;
use crate::motion::{decode_compact, JointSequence, MotionClip};
use crate::report::{emit_report, ReportKind, TradeoffReport, TradeoffRow, VERSION};
use crate::seed;
use crate::synth::{read_corpus, write_corpus, CorpusItem, Primitive};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Align,
    Bank,
    Train,
    Finetune,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Synth, Stage::Align, Stage::Bank, Stage::Train, Stage::Finetune, Stage::Evaluate];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Align => "align",
            Stage::Bank => "bank",
            Stage::Train => "train",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
        }
    }

    fn inputs(&self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &[],
            Stage::Align => &[paths::MD_PAIRS, paths::TD_PAIRS],
            Stage::Bank => &[paths::MD_PAIRS, paths::TD_PAIRS, paths::ALIGN],
            Stage::Train => &[paths::MD_PAIRS],
            Stage::Finetune => &[paths::MD_PAIRS, paths::TD_PAIRS, paths::ALIGN, paths::BANK_MD, paths::BANK_TM, paths::BACKBONE],
            Stage::Evaluate => &[paths::MD_PAIRS, paths::BACKBONE, paths::BRANCH],
        }
    }
}

/// Artifact locations relative to the output directory.
pub mod paths {
    pub const MD_DIR: &str = "corpora/md";
    pub const TD_DIR: &str = "corpora/td";
    pub const MD_PAIRS: &str = "corpora/md/pairs.json";
    pub const TD_PAIRS: &str = "corpora/td/pairs.json";
    pub const ALIGN: &str = "checkpoints/align.json";
    pub const BANK_MD: &str = "banks/md.json";
    pub const BANK_TM: &str = "banks/tm.json";
    pub const BACKBONE: &str = "checkpoints/backbone.json";
    pub const BRANCH: &str = "checkpoints/branch.json";
    pub const ALIGN_TRACE: &str = "traces/align.csv";
    pub const BACKBONE_TRACE: &str = "traces/backbone.csv";
    pub const FINETUNE_TRACE: &str = "traces/finetune.csv";
    pub const REPORTS: &str = "reports";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub synth: bool,
    pub align: bool,
    pub bank: bool,
    pub train: bool,
    pub finetune: bool,
    pub evaluate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { synth: true, align: true, bank: true, train: true, finetune: true, evaluate: true }
    }
}

impl StageToggles {
    pub fn enabled(&self) -> Vec<Stage> {
        let on = [self.synth, self.align, self.bank, self.train, self.finetune, self.evaluate];
        Stage::ALL.iter().zip(on).filter(|(_, b)| *b).map(|(s, _)| *s).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub music_scale: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { music_scale: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub r: usize,
    pub g: usize,
    pub thresholds: PredicateThresholds,
    pub tradeoff_scales: Vec<f64>,
    pub tradeoff_r: usize,
    pub tradeoff_g: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            r: kps::DEFAULT_R,
            g: kps::DEFAULT_G,
            thresholds: PredicateThresholds::default(),
            tradeoff_scales: vec![1.0, 2.0, 3.0],
            tradeoff_r: 2,
            tradeoff_g: 1,
        }
    }
}

/// Everything a run depends on. Seed fields inside the sections are
/// overwritten from the root `seed` before use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stages: StageToggles,
    pub corpus_md: CorpusConfig,
    pub corpus_td: CorpusConfig,
    pub align: AlignConfig,
    pub bank_threshold: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub sampling: SamplingConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: StageToggles::default(),
            corpus_md: CorpusConfig::default(),
            corpus_td: CorpusConfig::default(),
            align: AlignConfig::default(),
            bank_threshold: 0.8,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            sampling: SamplingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("pipeline config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with every section seed derived from the root seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let d = |tag: u64| seed::derive(self.seed, &[tag]);
        c.corpus_md.seed = d(1);
        c.corpus_td.seed = d(2);
        c.align.seed = d(3);
        c.model.seed = d(4);
        c.train.seed = d(5);
        c.finetune.seed = d(6);
        c.finetune.diffusion_steps = c.train.diffusion_steps;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bank_threshold > 0.0 && self.bank_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!("bank threshold {} outside (0, 1]", self.bank_threshold)));
        }
        let frames = (self.corpus_md.duration_s * self.corpus_md.fps as f64).round() as usize;
        if frames != self.model.frames || self.corpus_md.fps != self.model.fps {
            return Err(Error::InvalidArgument(format!(
                "music–dance clips have {frames} frames at {} fps but the model expects {} at {}",
                self.corpus_md.fps, self.model.frames, self.model.fps
            )));
        }
        if self.corpus_td.fps != self.corpus_md.fps || self.corpus_td.duration_s != self.corpus_md.duration_s {
            return Err(Error::InvalidArgument("both corpora must share fps and clip duration".into()));
        }
        if self.eval.r == 0 || self.eval.g == 0 || self.eval.tradeoff_r == 0 || self.eval.tradeoff_g == 0 {
            return Err(Error::InvalidArgument("R and G must be at least 1".into()));
        }
        if self.eval.tradeoff_r * self.eval.tradeoff_g * kps::default_prompts().len() < 2 {
            return Err(Error::InvalidArgument("the trade-off grid needs at least two samples per cell".into()));
        }
        self.model.validate()?;
        self.train.weights.validate()?;
        self.finetune.weights.validate()?;
        self.eval.thresholds.validate()
    }

    /// SHA-256 of the resolved configuration as JSON.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(&self.resolved()).expect("config serialises").as_bytes())
    }

    fn section(&self, stage: Stage) -> serde_json::Value {
        let c = self.resolved();
        match stage {
            Stage::Synth => serde_json::json!({"md": v(&c.corpus_md), "td": v(&c.corpus_td)}),
            Stage::Align => v(&c.align),
            Stage::Bank => serde_json::json!({"threshold": c.bank_threshold}),
            Stage::Train => serde_json::json!({"model": v(&c.model), "train": v(&c.train)}),
            Stage::Finetune => serde_json::json!({"finetune": v(&c.finetune), "threshold": c.bank_threshold}),
            Stage::Evaluate => serde_json::json!({"sampling": v(&c.sampling), "eval": v(&c.eval), "diffusion_steps": c.train.diffusion_steps, "seed": c.seed}),
        }
    }
}

fn v<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("config section serialises")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_digest: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_digest: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub stages: Vec<(Stage, StageStatus)>,
    pub config_digest: String,
}

/// Run the stages enabled in `config.stages`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    run_stages(config, out_dir, &config.stages.enabled())
}

/// Run `stages` in dependency order.
pub fn run_stages(config: &PipelineConfig, out_dir: &Path, stages: &[Stage]) -> Result<PipelineOutcome> {
    config.validate()?;
    let resolved = config.resolved();
    let digest = config.digest();
    std::fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join(paths::MANIFEST);
    let mut manifest = match std::fs::read_to_string(&manifest_path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => Manifest::default(),
    };
    manifest.version = VERSION.to_string();
    manifest.config_digest = digest.clone();

    let mut order = stages.to_vec();
    order.sort();
    order.dedup();
    let mut outcome = PipelineOutcome { stages: Vec::new(), config_digest: digest.clone() };
    for stage in order {
        let wrap = |e: Error| match e {
            e @ Error::MissingArtifact { .. } => e,
            e => Error::Stage { stage: stage.name().to_string(), source: Box::new(e) },
        };
        let input_digest = stage_input_digest(config, out_dir, stage).map_err(wrap)?;
        if let Some(rec) = manifest.stages.get(stage.name()) {
            if rec.input_digest == input_digest && outputs_match(out_dir, rec) {
                info!("stage {} is up to date", stage.name());
                outcome.stages.push((stage, StageStatus::Skipped));
                continue;
            }
        }
        info!("running stage {}", stage.name());
        let ctx = Ctx { config: &resolved, out: out_dir, digest: &digest };
        let outputs = run_stage(&ctx, stage).map_err(wrap)?;
        let mut rec = StageRecord { input_digest, outputs: BTreeMap::new() };
        for rel in outputs {
            rec.outputs.insert(rel.clone(), file_digest(&out_dir.join(&rel)).map_err(wrap)?);
        }
        manifest.stages.insert(stage.name().to_string(), rec);
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        outcome.stages.push((stage, StageStatus::Ran));
    }
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(outcome)
}

fn stage_input_digest(config: &PipelineConfig, out: &Path, stage: Stage) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.name().as_bytes());
    h.update(serde_json::to_string(&config.section(stage))?.as_bytes());
    for rel in stage.inputs() {
        let path = out.join(rel);
        if !path.exists() {
            return Err(Error::MissingArtifact { stage: stage.name().to_string(), path: path.display().to_string() });
        }
        h.update(rel.as_bytes());
        h.update(file_digest(&path)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn outputs_match(out: &Path, rec: &StageRecord) -> bool {
    !rec.outputs.is_empty()
        && rec.outputs.iter().all(|(rel, d)| file_digest(&out.join(rel)).map(|x| &x == d).unwrap_or(false))
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    digest: &'a str,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&self, rel: &str, text: &str) -> Result<String> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(p, text)?;
        Ok(rel.to_string())
    }

    fn read(&self, rel: &str) -> Result<String> {
        Ok(std::fs::read_to_string(self.path(rel))?)
    }
}

fn run_stage(ctx: &Ctx, stage: Stage) -> Result<Vec<String>> {
    match stage {
        Stage::Synth => stage_synth(ctx),
        Stage::Align => stage_align(ctx),
        Stage::Bank => stage_bank(ctx),
        Stage::Train => stage_train(ctx),
        Stage::Finetune => stage_finetune(ctx),
        Stage::Evaluate => stage_evaluate(ctx),
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    source_id: usize,
    file: String,
    label: Primitive,
    genre: String,
    factor: f64,
    music: Option<MatFile>,
    text: Option<String>,
}

/// Row-major matrix on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatFile {
    pub fn from_mat(m: &Mat) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: m.data().to_vec() }
    }

    pub fn into_mat(self) -> Result<Mat> {
        Mat::from_vec(self.rows, self.cols, self.data)
    }
}

pub fn write_music(path: &Path, music: &Mat) -> Result<()> {
    std::fs::write(path, serde_json::to_string(&MatFile::from_mat(music))?)?;
    Ok(())
}

pub fn read_music(path: &Path) -> Result<Mat> {
    let f: MatFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    f.into_mat()
}

/// Write a paired corpus as joint-sequence files plus `pairs.json`.
pub fn write_paired_corpus(dir: &Path, items: &[PairedItem]) -> Result<Vec<PathBuf>> {
    let plain: Vec<CorpusItem> = items
        .iter()
        .map(|i| CorpusItem { sequence: i.sequence.clone(), label: i.label.as_str().to_string(), genre: i.genre.clone() })
        .collect();
    let manifest = write_corpus(dir, &plain)?;
    let records: Vec<PairRecord> = items
        .iter()
        .zip(&manifest)
        .map(|(i, m)| PairRecord {
            source_id: i.source_id,
            file: m.file.clone(),
            label: i.label,
            genre: i.genre.clone(),
            factor: i.factor,
            music: i.music.as_ref().map(MatFile::from_mat),
            text: i.text.clone(),
        })
        .collect();
    std::fs::write(dir.join("pairs.json"), serde_json::to_string(&records)?)?;
    let mut files: Vec<PathBuf> = manifest.iter().map(|m| dir.join(&m.file)).collect();
    files.push(dir.join("manifest.json"));
    files.push(dir.join("pairs.json"));
    Ok(files)
}

pub fn read_paired_corpus(dir: &Path) -> Result<Vec<PairedItem>> {
    let records: Vec<PairRecord> = serde_json::from_str(&std::fs::read_to_string(dir.join("pairs.json"))?)?;
    let plain = read_corpus(dir)?;
    if plain.len() != records.len() {
        return Err(Error::Schema(format!("{} sequences but {} pair records", plain.len(), records.len())));
    }
    records
        .into_iter()
        .zip(plain)
        .map(|(r, p)| {
            let clip = canonical_clip(&p.sequence)?;
            Ok(PairedItem {
                source_id: r.source_id,
                sequence: p.sequence,
                clip,
                label: r.label,
                genre: r.genre,
                factor: r.factor,
                music: r.music.map(MatFile::into_mat).transpose()?,
                text: r.text,
            })
        })
        .collect()
}

fn relative(ctx: &Ctx, files: Vec<PathBuf>) -> Vec<String> {
    files
        .into_iter()
        .map(|p| p.strip_prefix(ctx.out).expect("artifact inside output dir").to_string_lossy().into_owned())
        .collect()
}

fn stage_synth(ctx: &Ctx) -> Result<Vec<String>> {
    let md = paired_corpus(CorpusKind::MusicDance, &ctx.config.corpus_md, 0)?;
    let td = paired_corpus(CorpusKind::TextMotion, &ctx.config.corpus_td, md.len())?;
    let mut files = write_paired_corpus(&ctx.path(paths::MD_DIR), &md)?;
    files.extend(write_paired_corpus(&ctx.path(paths::TD_DIR), &td)?);
    Ok(relative(ctx, files))
}

fn load_corpora(ctx: &Ctx) -> Result<(Vec<PairedItem>, Vec<PairedItem>)> {
    Ok((read_paired_corpus(&ctx.path(paths::MD_DIR))?, read_paired_corpus(&ctx.path(paths::TD_DIR))?))
}

fn stage_align(ctx: &Ctx) -> Result<Vec<String>> {
    let (md, td) = load_corpora(ctx)?;
    let (space, trace) = align::train_alignment(&md, &td, &ctx.config.align)?;
    let p = ctx.path(paths::ALIGN);
    std::fs::create_dir_all(p.parent().expect("nested path"))?;
    space.save(&p)?;
    let trace = ctx.write(paths::ALIGN_TRACE, &align::trace_csv(&trace))?;
    Ok(vec![paths::ALIGN.to_string(), trace])
}

fn stage_bank(ctx: &Ctx) -> Result<Vec<String>> {
    let (md, td) = load_corpora(ctx)?;
    let space = AlignmentSpace::load(&ctx.path(paths::ALIGN))?;
    let tau = ctx.config.bank_threshold;
    let bank_md = build_bank(&md, &space, BankKind::Md, tau)?;
    let bank_tm = build_bank(&td, &space, BankKind::Tm, tau)?;
    let q_td = td.iter().map(|i| space.embed_motion(i)).collect::<Result<Vec<_>>>()?;
    let q_md = md.iter().map(|i| space.embed_motion(i)).collect::<Result<Vec<_>>>()?;
    let stats = retrieval_stats(&bank_md, &bank_tm, &q_td, &q_md, tau)?;
    let mut out = vec![ctx.write(paths::BANK_MD, &bank_md.to_json()?)?, ctx.write(paths::BANK_TM, &bank_tm.to_json()?)?];
    let (j, t) = emit_report(&ctx.path(paths::REPORTS), ReportKind::Retrieval, &serde_json::to_value(&stats)?, ctx.digest)?;
    out.extend(relative(ctx, vec![j, t]));
    Ok(out)
}

fn stage_train(ctx: &Ctx) -> Result<Vec<String>> {
    let md = read_paired_corpus(&ctx.path(paths::MD_DIR))?;
    let (bb, trace) = train_backbone(&md, &ctx.config.model, &ctx.config.train)?;
    let mut csv = String::from("step,L_diff,L_joint,L_vel,L_contact,total\n");
    for s in &trace {
        let t = &s.terms;
        csv.push_str(&format!("{},{},{},{},{},{}\n", s.step, t.diff, t.joint, t.vel, t.contact, t.total));
    }
    Ok(vec![ctx.write(paths::BACKBONE, &bb.to_json()?)?, ctx.write(paths::BACKBONE_TRACE, &csv)?])
}

fn stage_finetune(ctx: &Ctx) -> Result<Vec<String>> {
    let (md, td) = load_corpora(ctx)?;
    let space = AlignmentSpace::load(&ctx.path(paths::ALIGN))?;
    let bank_md = Bank::from_json(&ctx.read(paths::BANK_MD)?)?;
    let bank_tm = Bank::from_json(&ctx.read(paths::BANK_TM)?)?;
    let bb = Backbone::from_json(&ctx.read(paths::BACKBONE)?)?;
    let td_triplets = make_pseudo_triplets(&td, CorpusKind::TextMotion, &bank_md, &bank_tm, &space)?;
    let md_triplets = make_pseudo_triplets(&md, CorpusKind::MusicDance, &bank_md, &bank_tm, &space)?;
    let branch = ControlBranch::from_backbone(&bb)?;
    let (branch, trace) = finetune_control(&bb, branch, &td_triplets, &md_triplets, &ctx.config.finetune)?;
    let mut csv = String::from("step,L_text,L_dance,combined\n");
    for s in &trace {
        csv.push_str(&format!("{},{},{},{}\n", s.step, s.l_text, s.l_dance, s.combined));
    }
    Ok(vec![ctx.write(paths::BRANCH, &branch.to_json()?)?, ctx.write(paths::FINETUNE_TRACE, &csv)?])
}

/// Load the trained generator from an output directory.
pub fn load_generator(out_dir: &Path, music_scale: f64, diffusion_steps: usize) -> Result<DiffusionGenerator> {
    let need = |rel: &str| -> Result<String> {
        let p = out_dir.join(rel);
        std::fs::read_to_string(&p)
            .map_err(|_| Error::MissingArtifact { stage: "evaluate".into(), path: p.display().to_string() })
    };
    let bb = Backbone::from_json(&need(paths::BACKBONE)?)?;
    let branch = ControlBranch::from_json(&need(paths::BRANCH)?, &bb)?;
    DiffusionGenerator::new(bb, Some(branch), NoiseSchedule::cosine(diffusion_steps)?, music_scale)
}

/// Wraps a generator and keeps every output with its text flag and music index.
struct Recorder<'a> {
    inner: &'a DiffusionGenerator,
    pool: &'a [Mat],
    log: RefCell<Vec<Sample>>,
}

struct Sample {
    text: bool,
    music: usize,
    seq: JointSequence,
    descriptor: Vec<f64>,
}

impl ConditionedGenerator for Recorder<'_> {
    fn generate(&self, music: &Mat, text: Option<&str>, seed: u64) -> Result<JointSequence> {
        let clip = self.inner.sample(Some(music), text, seed)?;
        let seq = decode_compact(clip.features(), clip.fps())?;
        let idx = self.pool.iter().position(|m| std::ptr::eq(m, music)).unwrap_or(usize::MAX);
        let descriptor = clip_descriptor(&clip);
        self.log.borrow_mut().push(Sample { text: text.is_some(), music: idx, seq: seq.clone(), descriptor });
        Ok(seq)
    }
}

/// Time-mean and time-spread of compact features.
pub fn clip_descriptor(clip: &MotionClip) -> Vec<f64> {
    let f = clip.features();
    let mean = f.mean_rows();
    let sd: Vec<f64> = (0..f.cols())
        .map(|c| {
            let m = mean.get(0, c);
            ((0..f.rows()).map(|r| (f.get(r, c) - m).powi(2)).sum::<f64>() / f.rows() as f64).sqrt()
        })
        .collect();
    mean.data().iter().copied().chain(sd).collect()
}

/// [`clip_descriptor`] of the canonicalised sequence.
pub fn motion_descriptor(seq: &JointSequence) -> Result<Vec<f64>> {
    Ok(clip_descriptor(&canonical_clip(seq)?))
}

fn cell(samples: &[&Sample], genres: &[String], duration_s: f64) -> Result<(f64, f64)> {
    let desc: Vec<Vec<f64>> = samples.iter().map(|s| s.descriptor.clone()).collect();
    let div = diversity(&desc)?;
    let mut bas = 0.0;
    for s in samples {
        let beats = music_beats(&genres[s.music], duration_s)?;
        bas += beat_alignment_score(&kinematic_beats(&s.seq), &beats, kps::DEFAULT_BAS_SIGMA_S)?;
    }
    Ok((div, bas / samples.len() as f64))
}

fn stage_evaluate(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let md = read_paired_corpus(&ctx.path(paths::MD_DIR))?;
    let pool: Vec<Mat> = md.iter().map(|i| i.music.clone().ok_or(Error::Empty("music pool entry"))).collect::<Result<_>>()?;
    let genres: Vec<String> = md.iter().map(|i| i.genre.clone()).collect();
    let prompts = kps::default_prompts();
    let kps_seed = seed::derive(c.seed, &[7]);
    let mut gen = load_generator(ctx.out, c.sampling.music_scale, c.train.diffusion_steps)?;

    let cfg = KpsConfig { r: c.eval.r, g: c.eval.g, seed: kps_seed, thresholds: c.eval.thresholds.clone() };
    let report = kps::run_kps(&gen, &prompts, &pool, &cfg)?;
    let mut out = Vec::new();
    let (j, t) = emit_report(&ctx.path(paths::REPORTS), ReportKind::Kps, &serde_json::to_value(&report)?, ctx.digest)?;
    out.extend(relative(ctx, vec![j, t]));

    let grid_cfg = KpsConfig { r: c.eval.tradeoff_r, g: c.eval.tradeoff_g, seed: seed::derive(c.seed, &[8]), ..cfg };
    let mut rows = Vec::new();
    for &scale in &c.eval.tradeoff_scales {
        gen.options.music_scale = scale;
        let rec = Recorder { inner: &gen, pool: &pool, log: RefCell::new(Vec::new()) };
        let rep = kps::run_kps(&rec, &prompts, &pool, &grid_cfg)?;
        let log = rec.log.into_inner();
        for text in [false, true] {
            let samples: Vec<_> = log.iter().filter(|s| s.text == text).collect();
            let (div, bas) = cell(&samples, &genres, c.corpus_md.duration_s)?;
            let m = rep.macro_average;
            let (prompt_rate, lift) = if text { (m.prompt_rate, m.lift) } else { (m.null_rate, 0.0) };
            rows.push(TradeoffRow { music_scale: scale, text, diversity: div, bas, prompt_rate, null_rate: m.null_rate, lift });
        }
    }
    let trade = TradeoffReport { rows, r: grid_cfg.r, g: grid_cfg.g };
    let (j, t) = emit_report(&ctx.path(paths::REPORTS), ReportKind::Tradeoff, &serde_json::to_value(&trade)?, ctx.digest)?;
    out.extend(relative(ctx, vec![j, t]));
    Ok(out)
}
