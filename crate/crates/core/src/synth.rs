//! Procedural joint-sequence generators, one per kinematic primitive.
//!
//! Bodies are upright (height axis 1), start facing a seed-dependent heading,
//! and carry bounded uniform jitter on every key joint. Magnitudes mean:
//!
//! | primitive  | magnitude                                  |
//! |------------|--------------------------------------------|
//! | walk_move  | net pelvis ground displacement             |
//! | jump       | peak pelvis lift                           |
//! | turn       | total yaw change in degrees                |
//! | crouch     | pelvis drop                                |
//! | hands_up   | wrist height above the shoulders at peak   |
//! | kick       | kicking ankle lift                         |
//! | clap       | half-opening of the hands between claps    |
//! | wave       | waving wrist amplitude                     |
//! | idle       | ignored                                    |

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::codec::{complete_skeleton, COMPACT_KEY_JOINTS};
use crate::motion::{io, JointSequence, Vec3};

/// Half-width of the uniform per-coordinate jitter.
pub const NOISE_AMPLITUDE: f64 = 0.0005;
pub const MIN_FRAMES: usize = 20;
pub const PELVIS_HEIGHT: f64 = 0.95;
pub const SHOULDER_WIDTH: f64 = 0.36;

pub const GENRES: [&str; 8] = ["popping", "locking", "breaking", "jazz", "hiphop", "kpop", "ballet", "house"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    WalkMove,
    Jump,
    Turn,
    Crouch,
    HandsUp,
    Kick,
    Clap,
    Wave,
    Idle,
}

impl Primitive {
    pub const ALL: [Primitive; 9] = [
        Primitive::WalkMove,
        Primitive::Jump,
        Primitive::Turn,
        Primitive::Crouch,
        Primitive::HandsUp,
        Primitive::Kick,
        Primitive::Clap,
        Primitive::Wave,
        Primitive::Idle,
    ];

    /// The eight primitives that have a predicate.
    pub const SCORED: [Primitive; 8] = [
        Primitive::Crouch,
        Primitive::HandsUp,
        Primitive::Kick,
        Primitive::Clap,
        Primitive::WalkMove,
        Primitive::Jump,
        Primitive::Turn,
        Primitive::Wave,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Primitive::WalkMove => "walk_move",
            Primitive::Jump => "jump",
            Primitive::Turn => "turn",
            Primitive::Crouch => "crouch",
            Primitive::HandsUp => "hands_up",
            Primitive::Kick => "kick",
            Primitive::Clap => "clap",
            Primitive::Wave => "wave",
            Primitive::Idle => "idle",
        }
    }

    /// Magnitude that clears the matching predicate threshold with margin.
    pub fn calibrated_magnitude(&self) -> f64 {
        match self {
            Primitive::WalkMove => 0.8,
            Primitive::Jump => 0.2,
            Primitive::Turn => 120.0,
            Primitive::Crouch => 0.2,
            Primitive::HandsUp => 0.3,
            Primitive::Kick => 0.45,
            Primitive::Clap => 0.14,
            Primitive::Wave => 0.3,
            Primitive::Idle => 0.0,
        }
    }

    pub fn default_frequency_hz(&self) -> f64 {
        match self {
            Primitive::Clap => 2.0,
            Primitive::Wave => 1.5,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnsupportedPrimitive(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub name: String,
    pub magnitude: f64,
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl PrimitiveSpec {
    /// Four-second clip at the calibrated magnitude.
    pub fn calibrated(primitive: Primitive, seed: u64) -> Self {
        Self {
            name: primitive.as_str().to_string(),
            magnitude: primitive.calibrated_magnitude(),
            frequency_hz: primitive.default_frequency_hz(),
            duration_s: 4.0,
            seed,
        }
    }

    /// Calibrated clip with the magnitude scaled by `factor`.
    pub fn scaled(primitive: Primitive, factor: f64, seed: u64) -> Self {
        let mut spec = Self::calibrated(primitive, seed);
        spec.magnitude *= factor;
        spec
    }

    pub fn primitive(&self) -> Result<Primitive> {
        self.name.parse()
    }

    fn validate(&self, fps: u32) -> Result<Primitive> {
        let primitive = self.primitive()?;
        if !(self.magnitude >= 0.0) || !self.magnitude.is_finite() {
            return Err(Error::InvalidArgument(format!("magnitude must be ≥ 0, got {}", self.magnitude)));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::InvalidArgument(format!("duration must be > 0, got {}", self.duration_s)));
        }
        let frames = self.frames(fps);
        if frames < MIN_FRAMES {
            return Err(Error::TooShort { needed: MIN_FRAMES, got: frames });
        }
        if matches!(primitive, Primitive::Wave | Primitive::Clap) && !(self.frequency_hz > 0.0) {
            return Err(Error::InvalidArgument(format!("{} needs a positive frequency", self.name)));
        }
        Ok(primitive)
    }

    pub fn frames(&self, fps: u32) -> usize {
        (self.duration_s * fps as f64).round() as usize
    }
}

// Slots within the fourteen key joints.
const PELVIS: usize = 0;
const HEAD: usize = 1;
const L_SHOULDER: usize = 2;
const R_SHOULDER: usize = 3;
const L_ELBOW: usize = 4;
const L_WRIST: usize = 5;
const R_ELBOW: usize = 6;
const R_WRIST: usize = 7;
const L_KNEE: usize = 8;
const L_ANKLE: usize = 9;
const R_KNEE: usize = 10;
const R_ANKLE: usize = 11;
const L_HIP: usize = 12;
const R_HIP: usize = 13;

const UPPER_BODY: [usize; 10] = [PELVIS, HEAD, L_SHOULDER, R_SHOULDER, L_ELBOW, L_WRIST, R_ELBOW, R_WRIST, L_HIP, R_HIP];

/// Body-local rest pose: facing +z, left side on +x.
fn rest_pose() -> [Vec3; 14] {
    let h = PELVIS_HEIGHT;
    let sx = SHOULDER_WIDTH / 2.0;
    let mut k = [[0.0; 3]; 14];
    k[PELVIS] = [0.0, h, 0.0];
    k[HEAD] = [0.0, h + 0.6, 0.0];
    k[L_SHOULDER] = [sx, h + 0.45, 0.0];
    k[R_SHOULDER] = [-sx, h + 0.45, 0.0];
    k[L_ELBOW] = [sx + 0.02, h + 0.17, 0.0];
    k[R_ELBOW] = [-sx - 0.02, h + 0.17, 0.0];
    k[L_WRIST] = [sx + 0.03, h - 0.09, 0.02];
    k[R_WRIST] = [-sx - 0.03, h - 0.09, 0.02];
    k[L_HIP] = [0.09, h - 0.05, 0.0];
    k[R_HIP] = [-0.09, h - 0.05, 0.0];
    k[L_KNEE] = [0.09, 0.5, 0.02];
    k[R_KNEE] = [-0.09, 0.5, 0.02];
    k[L_ANKLE] = [0.09, 0.08, 0.0];
    k[R_ANKLE] = [-0.09, 0.08, 0.0];
    k
}

/// `sin²(π·(u−a)/(b−a))` on `[a, b]`, zero elsewhere.
fn bump(u: f64, a: f64, b: f64) -> f64 {
    if u <= a || u >= b {
        0.0
    } else {
        (PI * (u - a) / (b - a)).sin().powi(2)
    }
}

/// Smooth rise on `[a, a+ramp]`, hold, smooth fall on `[b−ramp, b]`.
fn plateau(u: f64, a: f64, b: f64, ramp: f64) -> f64 {
    let rise = |x: f64| 0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos();
    if u <= a || u >= b {
        0.0
    } else if u < a + ramp {
        rise((u - a) / ramp)
    } else if u > b - ramp {
        rise((b - u) / ramp)
    } else {
        1.0
    }
}

/// Monotone ease from 0 to 1 over `u ∈ [0, 1]` with zero end velocities.
fn ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u - (2.0 * PI * u).sin() / (2.0 * PI)
}

fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

struct FramePose {
    key: [Vec3; 14],
    yaw: f64,
    root: Vec3,
}

fn pose_at(primitive: Primitive, spec: &PrimitiveSpec, t: f64) -> FramePose {
    let mut key = rest_pose();
    let mut yaw = 0.0;
    let mut root = [0.0; 3];
    let u = t / spec.duration_s;
    let m = spec.magnitude;
    match primitive {
        Primitive::Idle => {}
        Primitive::WalkMove => {
            let stride = 0.12;
            let phase = 2.0 * PI * 1.0 * t;
            root[2] = m * ease(u);
            let swing = phase.sin();
            let lift = 0.03;
            key[L_ANKLE][2] += stride * swing;
            key[R_ANKLE][2] -= stride * swing;
            key[L_ANKLE][1] += lift * phase.cos().max(0.0);
            key[R_ANKLE][1] += lift * (-phase.cos()).max(0.0);
            key[L_KNEE][2] += 0.5 * stride * swing;
            key[R_KNEE][2] -= 0.5 * stride * swing;
        }
        Primitive::Jump => {
            let g = 9.81;
            let half_flight = (2.0 * m / g).sqrt();
            let dt = t - 0.5 * spec.duration_s;
            if dt.abs() < half_flight {
                root[1] = m - 0.5 * g * dt * dt;
            }
        }
        Primitive::Turn => {
            yaw = (m * ease(u)).to_radians();
        }
        Primitive::Crouch => {
            let drop = m * bump(u, 0.2, 0.8);
            for slot in UPPER_BODY {
                key[slot][1] -= drop;
            }
            for slot in [L_KNEE, R_KNEE] {
                key[slot][1] -= 0.5 * drop;
                key[slot][2] += 0.5 * drop;
            }
        }
        Primitive::HandsUp => {
            let e = plateau(u, 0.15, 0.85, 0.12);
            let top = key[L_SHOULDER][1] + m;
            let l_target = [0.2, top, 0.0];
            let r_target = [-0.2, top, 0.0];
            key[L_WRIST] = lerp3(key[L_WRIST], l_target, e);
            key[R_WRIST] = lerp3(key[R_WRIST], r_target, e);
            let l_elbow = [0.22, key[L_SHOULDER][1] + 0.5 * m, 0.0];
            let r_elbow = [-0.22, key[R_SHOULDER][1] + 0.5 * m, 0.0];
            key[L_ELBOW] = lerp3(key[L_ELBOW], l_elbow, e);
            key[R_ELBOW] = lerp3(key[R_ELBOW], r_elbow, e);
        }
        Primitive::Kick => {
            let e = bump(u, 0.35, 0.65);
            key[R_ANKLE][1] += m * e;
            key[R_ANKLE][2] += 0.6 * m * e;
            key[R_KNEE][1] += 0.6 * m * e;
            key[R_KNEE][2] += 0.4 * m * e;
        }
        Primitive::Clap => {
            let open = 0.03 + m * 0.5 * (1.0 - (2.0 * PI * spec.frequency_hz * t).cos());
            let y = PELVIS_HEIGHT + 0.2;
            key[L_WRIST] = [open, y, 0.30];
            key[R_WRIST] = [-open, y, 0.30];
            key[L_ELBOW] = [open + 0.12, y - 0.05, 0.12];
            key[R_ELBOW] = [-open - 0.12, y - 0.05, 0.12];
        }
        Primitive::Wave => {
            let x = -0.30 + m * (2.0 * PI * spec.frequency_hz * t).sin();
            key[R_ELBOW] = [-0.30, PELVIS_HEIGHT + 0.2, 0.10];
            key[R_WRIST] = [x, PELVIS_HEIGHT + 0.35, 0.15];
        }
    }
    FramePose { key, yaw, root }
}

/// Generate the joint sequence for `spec`. Deterministic in `(spec, fps)`.
pub fn synthesize(spec: &PrimitiveSpec, fps: u32) -> Result<JointSequence> {
    let primitive = spec.validate(fps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let heading = rng.gen_range(-PI..PI);
    let frames = spec.frames(fps);
    let mut positions = Vec::with_capacity(frames * COMPACT_KEY_JOINTS.len());
    for f in 0..frames {
        let t = f as f64 / fps as f64;
        let pose = pose_at(primitive, spec, t);
        let (s, c) = (heading + pose.yaw).sin_cos();
        let (hs, hc) = heading.sin_cos();
        // Root displacement is expressed in the initial heading frame.
        let root = [hc * pose.root[0] + hs * pose.root[2], pose.root[1], -hs * pose.root[0] + hc * pose.root[2]];
        let mut key = [[0.0; 3]; 14];
        for (out, p) in key.iter_mut().zip(pose.key.iter()) {
            let world = [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
            for a in 0..3 {
                out[a] = world[a] + root[a] + rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
            }
        }
        positions.extend_from_slice(&complete_skeleton(&key));
    }
    JointSequence::with_standard_joints(fps, positions)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub sequence: JointSequence,
    pub label: String,
    pub genre: String,
}

/// One labelled sequence per spec; genres are assigned cyclically.
pub fn synthesize_corpus(specs: &[PrimitiveSpec], fps: u32) -> Result<Vec<CorpusItem>> {
    if specs.is_empty() {
        return Err(Error::Empty("primitive spec list"));
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            Ok(CorpusItem {
                sequence: synthesize(spec, fps)?,
                label: spec.primitive()?.as_str().to_string(),
                genre: GENRES[i % GENRES.len()].to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: String,
    pub genre: String,
}

/// Write each sequence as a motion file plus a `manifest.json` index.
pub fn write_corpus(dir: &Path, items: &[CorpusItem]) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let file = format!("{i:04}_{}.json", item.label);
        io::write_joint_sequence(&dir.join(&file), &item.sequence)?;
        manifest.push(ManifestEntry { file, label: item.label.clone(), genre: item.genre.clone() });
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest
        .into_iter()
        .map(|e| {
            Ok(CorpusItem {
                sequence: io::read_joint_sequence(&dir.join(&e.file))?,
                label: e.label,
                genre: e.genre,
            })
        })
        .collect()
}
