//! Feature codecs and channel layouts.
//!
//! The full layout is `[52 × 6D rotations | 3 root translation | 4 contacts]`,
//! 319 channels. The compact layout is the desk-scale stand-in used for
//! training: fourteen key joints as positions (pelvis absolute, the rest
//! pelvis-relative) plus the same four contacts, 46 channels. Both split into
//! seven body-part groups.

use serde::{Deserialize, Serialize};

use super::joint as j;
use super::rotation::Rotation6D;
use super::{kinematics, JointSequence, MotionClip, Vec3, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const NUM_ROTATION_JOINTS: usize = 52;
pub const ROTATION_CHANNELS: usize = NUM_ROTATION_JOINTS * 6;
pub const NUM_CONTACTS: usize = 4;
pub const FULL_FEATURE_DIM: usize = ROTATION_CHANNELS + 3 + NUM_CONTACTS;
pub const NUM_GROUPS: usize = 7;

pub const COMPACT_KEY_JOINTS: [usize; 14] = [
    j::PELVIS,
    j::HEAD,
    j::LEFT_SHOULDER,
    j::RIGHT_SHOULDER,
    j::LEFT_ELBOW,
    j::LEFT_WRIST,
    j::RIGHT_ELBOW,
    j::RIGHT_WRIST,
    j::LEFT_KNEE,
    j::LEFT_ANKLE,
    j::RIGHT_KNEE,
    j::RIGHT_ANKLE,
    j::LEFT_HIP,
    j::RIGHT_HIP,
];
pub const COMPACT_FEATURE_DIM: usize = COMPACT_KEY_JOINTS.len() * 3 + NUM_CONTACTS;

/// Offset of a foot joint from its ankle in the analysis skeleton (height axis 1).
pub const FOOT_OFFSET: Vec3 = [0.0, -0.04, 0.0];

/// One frame of the full layout, unpacked.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedParts {
    pub rotations: Vec<Rotation6D>,
    pub root_translation: Vec3,
    pub contacts: [f64; NUM_CONTACTS],
}

pub fn pack_motion(rotations: &[Rotation6D], root_translation: &[f64], contacts: &[f64]) -> Result<Vec<f64>> {
    if rotations.len() != NUM_ROTATION_JOINTS {
        return Err(Error::dim("pack_motion rotations", NUM_ROTATION_JOINTS, rotations.len()));
    }
    if root_translation.len() != 3 {
        return Err(Error::dim("pack_motion translation", 3, root_translation.len()));
    }
    if contacts.len() != NUM_CONTACTS {
        return Err(Error::dim("pack_motion contacts", NUM_CONTACTS, contacts.len()));
    }
    if let Some(bad) = contacts.iter().find(|&&c| c != 0.0 && c != 1.0) {
        return Err(Error::InvalidArgument(format!("contact flags must be 0 or 1, got {bad}")));
    }
    let mut out = Vec::with_capacity(FULL_FEATURE_DIM);
    for r in rotations {
        out.extend_from_slice(&r.0);
    }
    out.extend_from_slice(root_translation);
    out.extend_from_slice(contacts);
    Ok(out)
}

pub fn unpack_motion(features: &[f64]) -> Result<PackedParts> {
    if features.len() != FULL_FEATURE_DIM {
        return Err(Error::dim("unpack_motion", FULL_FEATURE_DIM, features.len()));
    }
    let rotations = features[..ROTATION_CHANNELS]
        .chunks_exact(6)
        .map(|c| Rotation6D([c[0], c[1], c[2], c[3], c[4], c[5]]))
        .collect();
    let t = &features[ROTATION_CHANNELS..ROTATION_CHANNELS + 3];
    let c = &features[ROTATION_CHANNELS + 3..];
    Ok(PackedParts {
        rotations,
        root_translation: [t[0], t[1], t[2]],
        contacts: [c[0], c[1], c[2], c[3]],
    })
}

/// Channel partition of a feature layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    dim: usize,
    groups: Vec<Vec<usize>>,
    contact_channels: Vec<usize>,
    /// For each contact channel, the position channels whose sum gives the
    /// tracked foot (or root) location used for the sliding penalty.
    contact_tracks: Vec<Vec<[usize; 3]>>,
}

impl ChannelLayout {
    pub fn for_dim(dim: usize) -> Result<Self> {
        match dim {
            FULL_FEATURE_DIM => Ok(Self::full()),
            COMPACT_FEATURE_DIM => Ok(Self::compact()),
            other => Err(Error::dim(
                "feature layout",
                format!("{FULL_FEATURE_DIM} or {COMPACT_FEATURE_DIM}"),
                other,
            )),
        }
    }

    /// 319 channels over the 52-joint SMPL-X body + hands ordering.
    pub fn full() -> Self {
        let rot = |joints: &[usize]| -> Vec<usize> { joints.iter().flat_map(|&k| k * 6..k * 6 + 6).collect() };
        let trans = ROTATION_CHANNELS;
        let contact = trans + 3;
        let mut torso = rot(&[0, 3, 6, 9, 12, 15]);
        torso.extend(trans..trans + 3);
        let mut left_leg = rot(&[1, 4, 7, 10]);
        left_leg.extend([contact, contact + 1]);
        let mut right_leg = rot(&[2, 5, 8, 11]);
        right_leg.extend([contact + 2, contact + 3]);
        let groups = vec![
            torso,
            rot(&[13, 16, 18, 20]),
            rot(&[14, 17, 19, 21]),
            left_leg,
            right_leg,
            rot(&(22..37).collect::<Vec<_>>()),
            rot(&(37..52).collect::<Vec<_>>()),
        ];
        let root = [trans, trans + 1, trans + 2];
        Self {
            dim: FULL_FEATURE_DIM,
            groups,
            contact_channels: (contact..contact + 4).collect(),
            contact_tracks: vec![vec![root]; 4],
        }
    }

    /// 46 channels: 14 key joints × 3 then 4 contacts.
    pub fn compact() -> Self {
        let ch = |slot: usize| -> [usize; 3] { [slot * 3, slot * 3 + 1, slot * 3 + 2] };
        let contact = COMPACT_KEY_JOINTS.len() * 3;
        let group = |a: usize, b: usize| -> Vec<usize> { ch(a).into_iter().chain(ch(b)).collect() };
        let mut left_leg = group(8, 9);
        left_leg.extend([contact, contact + 1]);
        let mut right_leg = group(10, 11);
        right_leg.extend([contact + 2, contact + 3]);
        let groups = vec![group(0, 1), group(2, 3), group(4, 5), group(6, 7), left_leg, right_leg, group(12, 13)];
        let pelvis = ch(0);
        Self {
            dim: COMPACT_FEATURE_DIM,
            groups,
            contact_channels: (contact..contact + 4).collect(),
            contact_tracks: vec![
                vec![pelvis, ch(9)],
                vec![pelvis, ch(9)],
                vec![pelvis, ch(11)],
                vec![pelvis, ch(11)],
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn contact_channels(&self) -> &[usize] {
        &self.contact_channels
    }

    pub fn contact_tracks(&self) -> &[Vec<[usize; 3]>] {
        &self.contact_tracks
    }

    /// Every channel that is not a contact flag.
    pub fn pose_channels(&self) -> Vec<usize> {
        (0..self.dim).filter(|c| !self.contact_channels.contains(c)).collect()
    }
}

/// Fill in the eight auxiliary joints from the fourteen key joints.
///
/// Every auxiliary joint is an affine function of key joints, so the compact
/// features determine all 22 positions.
pub fn complete_skeleton(key: &[Vec3; 14]) -> [Vec3; NUM_JOINTS] {
    let mut out = [[0.0; 3]; NUM_JOINTS];
    for (slot, &joint) in COMPACT_KEY_JOINTS.iter().enumerate() {
        out[joint] = key[slot];
    }
    let lerp = |a: Vec3, b: Vec3, t: f64| -> Vec3 {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    };
    let add = |a: Vec3, b: Vec3| -> Vec3 { [a[0] + b[0], a[1] + b[1], a[2] + b[2]] };
    let neck = lerp(out[j::LEFT_SHOULDER], out[j::RIGHT_SHOULDER], 0.5);
    let pelvis = out[j::PELVIS];
    out[j::NECK] = neck;
    out[j::SPINE1] = lerp(pelvis, neck, 0.25);
    out[j::SPINE2] = lerp(pelvis, neck, 0.5);
    out[j::SPINE3] = lerp(pelvis, neck, 0.75);
    out[j::LEFT_COLLAR] = lerp(neck, out[j::LEFT_SHOULDER], 0.5);
    out[j::RIGHT_COLLAR] = lerp(neck, out[j::RIGHT_SHOULDER], 0.5);
    out[j::LEFT_FOOT] = add(out[j::LEFT_ANKLE], FOOT_OFFSET);
    out[j::RIGHT_FOOT] = add(out[j::RIGHT_ANKLE], FOOT_OFFSET);
    out
}

// Contact heuristics for deriving flags from positions.
const HEEL_CONTACT_HEIGHT: f64 = 0.11;
const TOE_CONTACT_HEIGHT: f64 = 0.07;
const CONTACT_MAX_SPEED: f64 = 0.5;

/// Encode a joint sequence into the compact feature layout.
pub fn encode_compact(seq: &JointSequence) -> Result<MotionClip> {
    let axes = kinematics::detect_axes(seq)?;
    let h = axes.height_axis;
    let frames = seq.frames();
    let fps = seq.fps() as f64;
    let feet = [
        (j::LEFT_ANKLE, HEEL_CONTACT_HEIGHT),
        (j::LEFT_FOOT, TOE_CONTACT_HEIGHT),
        (j::RIGHT_ANKLE, HEEL_CONTACT_HEIGHT),
        (j::RIGHT_FOOT, TOE_CONTACT_HEIGHT),
    ];
    let mut features = Mat::zeros(frames, COMPACT_FEATURE_DIM);
    for f in 0..frames {
        let pelvis = seq.at(f, seq.joints().pelvis);
        let row = features.row_mut(f);
        for (slot, &joint) in COMPACT_KEY_JOINTS.iter().enumerate() {
            let p = seq.at(f, joint);
            for a in 0..3 {
                row[slot * 3 + a] = if slot == 0 { p[a] } else { p[a] - pelvis[a] };
            }
        }
        for (i, &(joint, max_h)) in feet.iter().enumerate() {
            let p = seq.at(f, joint);
            let q = seq.at(if f + 1 < frames { f + 1 } else { f.saturating_sub(1) }, joint);
            let speed = dist(p, q) * fps;
            let grounded = p[h] < max_h && speed < CONTACT_MAX_SPEED;
            row[COMPACT_KEY_JOINTS.len() * 3 + i] = if grounded { 1.0 } else { 0.0 };
        }
    }
    MotionClip::new(seq.fps(), features)
}

/// Fixed affine readout from compact features back to 22 joint positions.
pub fn decode_compact(features: &Mat, fps: u32) -> Result<JointSequence> {
    if features.cols() != COMPACT_FEATURE_DIM {
        return Err(Error::dim("decode_compact", COMPACT_FEATURE_DIM, features.cols()));
    }
    let mut positions = Vec::with_capacity(features.rows() * NUM_JOINTS);
    for f in 0..features.rows() {
        let row = features.row(f);
        let pelvis = [row[0], row[1], row[2]];
        let mut key = [[0.0; 3]; 14];
        for (slot, k) in key.iter_mut().enumerate() {
            for a in 0..3 {
                k[a] = if slot == 0 { row[a] } else { row[slot * 3 + a] + pelvis[a] };
            }
        }
        positions.extend_from_slice(&complete_skeleton(&key));
    }
    JointSequence::with_standard_joints(fps, positions)
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
