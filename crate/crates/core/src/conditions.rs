//! Synthetic condition features and paired corpora.
//!
//! Music is a per-frame feature bank built from a genre vector, a vector for
//! the dance class it accompanies, an energy direction and genre-tempo
//! oscillators. Text is a sequence of deterministic hash embeddings, one per
//! word.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::motion::{canonicalize, encode_compact, JointSequence, MotionClip};
use crate::seed;
use crate::synth::{synthesize, Primitive, PrimitiveSpec, GENRES};

pub const MUSIC_DIM: usize = 32;
pub const TEXT_DIM: usize = 32;
pub const GENRE_BPM: [f64; 8] = [110.0, 104.0, 96.0, 90.0, 94.0, 120.0, 80.0, 124.0];

/// Deterministic `N(0, 1/dim)` vector keyed by `tag`.
pub fn hash_vector(tag: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(tag.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes));
    let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

fn genre_index(genre: &str) -> Result<usize> {
    GENRES
        .iter()
        .position(|g| *g == genre)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown genre `{genre}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MusicSpec {
    pub genre: String,
    pub class: Primitive,
    pub energy: f64,
    pub seed: u64,
}

/// `frames × MUSIC_DIM` features for one clip.
pub fn music_features(spec: &MusicSpec, frames: usize, fps: u32) -> Result<Mat> {
    let g = genre_index(&spec.genre)?;
    let genre_vec = hash_vector(&format!("genre:{}", spec.genre), MUSIC_DIM);
    let class_vec = hash_vector(&format!("class:{}", spec.class.as_str()), MUSIC_DIM);
    let energy_vec = hash_vector("energy", MUSIC_DIM);
    let beat_hz = GENRE_BPM[g] / 60.0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..MUSIC_DIM).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let scale = (MUSIC_DIM as f64).sqrt();
    Ok(Mat::from_fn(frames, MUSIC_DIM, |f, c| {
        let t = f as f64 / fps as f64;
        let harmonic = [0.5, 1.0, 2.0][c % 3];
        let noise: f64 = StandardNormal.sample(&mut rng);
        scale * (0.5 * genre_vec[c] + class_vec[c] + (spec.energy - 1.0) * energy_vec[c])
            + 0.25 * (2.0 * PI * beat_hz * harmonic * t + phases[c]).sin()
            + 0.05 * noise
    }))
}

/// Beat times (s) of the genre's tempo grid over `duration_s`.
pub fn music_beats(genre: &str, duration_s: f64) -> Result<Vec<f64>> {
    let period = 60.0 / GENRE_BPM[genre_index(genre)?];
    Ok((0..).map(|i| i as f64 * period).take_while(|&t| t < duration_s).collect())
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `words × TEXT_DIM` hash embeddings of a prompt; `_` separates words.
pub fn text_tokens(text: &str) -> Result<Mat> {
    let w = words(text);
    if w.is_empty() {
        return Err(Error::Empty("text prompt"));
    }
    let scale = (TEXT_DIM as f64).sqrt();
    let rows: Vec<Vec<f64>> = w.iter().map(|w| hash_vector(&format!("word:{w}"), TEXT_DIM)).collect();
    Ok(Mat::from_fn(rows.len(), TEXT_DIM, |r, c| scale * rows[r][c]))
}

/// Natural-language description of a primitive at a magnitude factor.
pub fn describe(primitive: Primitive, factor: f64) -> String {
    let base = primitive.as_str();
    if factor < 0.9 {
        format!("{base} gently")
    } else if factor > 1.1 {
        format!("{base} strongly")
    } else {
        base.to_string()
    }
}

/// Downsampled pose plus forward-difference velocity tokens.
pub fn motion_tokens(clip: &MotionClip, stride: usize) -> Mat {
    let x = clip.features();
    let (k, d) = x.shape();
    let stride = stride.max(1);
    let picks: Vec<usize> = (0..k).step_by(stride).collect();
    Mat::from_fn(picks.len(), 2 * d, |r, c| {
        let f = picks[r];
        if c < d {
            x.get(f, c)
        } else {
            let next = (f + stride).min(k - 1);
            x.get(next, c - d) - x.get(f, c - d)
        }
    })
}

/// Heading-free compact clip of a sequence.
pub fn canonical_clip(seq: &JointSequence) -> Result<MotionClip> {
    encode_compact(&canonicalize(seq)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedItem {
    pub source_id: usize,
    pub sequence: JointSequence,
    pub clip: MotionClip,
    pub label: Primitive,
    pub genre: String,
    pub factor: f64,
    pub music: Option<Mat>,
    pub text: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusKind {
    MusicDance,
    TextMotion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub size: usize,
    pub fps: u32,
    pub duration_s: f64,
    pub factor_lo: f64,
    pub factor_hi: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { size: 64, fps: 30, duration_s: 4.0, factor_lo: 0.75, factor_hi: 1.25, seed: 0 }
    }
}

/// Paired corpus over the eight scored primitives, cycling classes and genres.
/// Source ids start at `id_offset`.
pub fn paired_corpus(kind: CorpusKind, config: &CorpusConfig, id_offset: usize) -> Result<Vec<PairedItem>> {
    if config.size == 0 {
        return Err(Error::Empty("corpus"));
    }
    let tag = match kind {
        CorpusKind::MusicDance => 1,
        CorpusKind::TextMotion => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[tag]));
    (0..config.size)
        .map(|i| {
            let label = Primitive::SCORED[i % Primitive::SCORED.len()];
            let genre = GENRES[(i / Primitive::SCORED.len()) % GENRES.len()].to_string();
            let factor = rng.gen_range(config.factor_lo..=config.factor_hi);
            let item_seed = seed::derive(config.seed, &[tag, i as u64]);
            let mut spec = PrimitiveSpec::scaled(label, factor, item_seed);
            spec.duration_s = config.duration_s;
            let sequence = synthesize(&spec, config.fps)?;
            let clip = canonical_clip(&sequence)?;
            let (music, text) = match kind {
                CorpusKind::MusicDance => {
                    let ms = MusicSpec { genre: genre.clone(), class: label, energy: factor, seed: item_seed };
                    (Some(music_features(&ms, clip.frames(), config.fps)?), None)
                }
                CorpusKind::TextMotion => (None, Some(describe(label, factor))),
            };
            Ok(PairedItem { source_id: id_offset + i, sequence, clip, label, genre, factor, music, text })
        })
        .collect()
}
