//! Motion representations shared by every other module.
//!
//! Two skeletons coexist and are never linked by forward kinematics:
//! the 52-joint rotation skeleton behind the 319-channel feature codec, and
//! the 22-joint position skeleton that all kinematic predicates read.

pub mod codec;
pub mod io;
pub mod kinematics;
pub mod rotation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub use codec::{decode_compact, encode_compact, ChannelLayout, COMPACT_FEATURE_DIM, FULL_FEATURE_DIM};
pub use kinematics::{canonicalize, cumulative_yaw, detect_axes, shoulder_width, BodyAxes};
pub use rotation::Rotation6D;

pub const DEFAULT_FPS: u32 = 30;
pub const NUM_JOINTS: usize = 22;

/// Index of each joint in the 22-joint analysis skeleton.
///
/// The order is the widely used SMPL body ordering.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const LEFT_HIP: usize = 1;
    pub const RIGHT_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const LEFT_KNEE: usize = 4;
    pub const RIGHT_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const LEFT_FOOT: usize = 10;
    pub const RIGHT_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const LEFT_COLLAR: usize = 13;
    pub const RIGHT_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const LEFT_SHOULDER: usize = 16;
    pub const RIGHT_SHOULDER: usize = 17;
    pub const LEFT_ELBOW: usize = 18;
    pub const RIGHT_ELBOW: usize = 19;
    pub const LEFT_WRIST: usize = 20;
    pub const RIGHT_WRIST: usize = 21;
}

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Resolved positions of the joints the predicates need, looked up by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointMap {
    pub pelvis: usize,
    pub head: usize,
    pub left_hip: usize,
    pub right_hip: usize,
    pub left_shoulder: usize,
    pub right_shoulder: usize,
    pub left_wrist: usize,
    pub right_wrist: usize,
    pub left_ankle: usize,
    pub right_ankle: usize,
}

impl JointMap {
    fn resolve(names: &[String]) -> Result<Self> {
        let find = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("joint `{name}` missing from joint_names")))
        };
        Ok(Self {
            pelvis: find("pelvis")?,
            head: find("head")?,
            left_hip: find("left_hip")?,
            right_hip: find("right_hip")?,
            left_shoulder: find("left_shoulder")?,
            right_shoulder: find("right_shoulder")?,
            left_wrist: find("left_wrist")?,
            right_wrist: find("right_wrist")?,
            left_ankle: find("left_ankle")?,
            right_ankle: find("right_ankle")?,
        })
    }
}

pub type Vec3 = [f64; 3];

/// `frames × 22 × 3` joint positions.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSequence {
    fps: u32,
    joint_names: Vec<String>,
    map: JointMap,
    positions: Vec<Vec3>,
}

impl JointSequence {
    pub fn new(fps: u32, joint_names: Vec<String>, positions: Vec<Vec3>) -> Result<Self> {
        if joint_names.len() != NUM_JOINTS {
            return Err(Error::dim("joint_names", NUM_JOINTS, joint_names.len()));
        }
        let mut sorted = joint_names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != NUM_JOINTS {
            return Err(Error::InvalidArgument("joint_names must be unique".into()));
        }
        if positions.is_empty() || !positions.len().is_multiple_of(NUM_JOINTS) {
            return Err(Error::dim("positions", "a positive multiple of 22 joints", positions.len()));
        }
        if fps == 0 {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("joint positions must be finite".into()));
        }
        let map = JointMap::resolve(&joint_names)?;
        Ok(Self { fps, joint_names, map, positions })
    }

    /// Sequence with the standard joint ordering.
    pub fn with_standard_joints(fps: u32, positions: Vec<Vec3>) -> Result<Self> {
        Self::new(fps, JOINT_NAMES.iter().map(|s| s.to_string()).collect(), positions)
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.positions.len() / NUM_JOINTS
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joints(&self) -> &JointMap {
        &self.map
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    #[inline]
    pub fn at(&self, frame: usize, joint: usize) -> Vec3 {
        self.positions[frame * NUM_JOINTS + joint]
    }

    pub fn frame(&self, frame: usize) -> &[Vec3] {
        &self.positions[frame * NUM_JOINTS..(frame + 1) * NUM_JOINTS]
    }

    /// Trajectory of a single joint.
    pub fn track(&self, joint: usize) -> Vec<Vec3> {
        (0..self.frames()).map(|f| self.at(f, joint)).collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.fps as f64
    }

    /// Apply `f` to every position.
    pub fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            fps: self.fps,
            joint_names: self.joint_names.clone(),
            map: self.map,
            positions: self.positions.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// A `k × F` feature clip, in either the full 319-channel layout or the
/// compact training layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    fps: u32,
    features: Mat,
}

impl MotionClip {
    pub fn new(fps: u32, features: Mat) -> Result<Self> {
        let layout = ChannelLayout::for_dim(features.cols())?;
        if features.rows() == 0 {
            return Err(Error::Empty("motion clip"));
        }
        if !features.all_finite() {
            return Err(Error::InvalidArgument("motion features must be finite".into()));
        }
        for r in 0..features.rows() {
            for &c in layout.contact_channels() {
                let v = features.get(r, c);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "contact channel {c} at frame {r} is {v}, outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { fps, features })
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout::for_dim(self.features.cols()).expect("validated at construction")
    }
}
