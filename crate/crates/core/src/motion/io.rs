//! JSON motion files.
//!
//! Joint sequences: `{"fps", "joints", "frames", "positions"}` with positions
//! flattened row-major as `frames · 22 · 3` doubles. Feature clips:
//! `{"fps", "frames", "features"}` flattened as `frames · F`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JointSequence, MotionClip, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Serialize, Deserialize)]
struct JointSequenceFile {
    fps: u32,
    joints: Vec<String>,
    frames: usize,
    positions: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MotionClipFile {
    fps: u32,
    frames: usize,
    features: Vec<f64>,
}

pub fn joint_sequence_to_json(seq: &JointSequence) -> Result<String> {
    let file = JointSequenceFile {
        fps: seq.fps(),
        joints: seq.joint_names().to_vec(),
        frames: seq.frames(),
        positions: seq.positions().iter().flatten().copied().collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn joint_sequence_from_json(text: &str) -> Result<JointSequence> {
    let file: JointSequenceFile = serde_json::from_str(text)?;
    let expected = file.frames * NUM_JOINTS * 3;
    if file.positions.len() != expected {
        return Err(Error::dim("joint sequence file positions", expected, file.positions.len()));
    }
    let positions = file.positions.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    JointSequence::new(file.fps, file.joints, positions)
}

pub fn motion_clip_to_json(clip: &MotionClip) -> Result<String> {
    let file = MotionClipFile {
        fps: clip.fps(),
        frames: clip.frames(),
        features: clip.features().data().to_vec(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn motion_clip_from_json(text: &str) -> Result<MotionClip> {
    let file: MotionClipFile = serde_json::from_str(text)?;
    if file.frames == 0 || !file.features.len().is_multiple_of(file.frames) {
        return Err(Error::dim("motion clip file features", "a multiple of frames", file.features.len()));
    }
    let dim = file.features.len() / file.frames;
    MotionClip::new(file.fps, Mat::from_vec(file.frames, dim, file.features)?)
}

pub fn write_joint_sequence(path: &Path, seq: &JointSequence) -> Result<()> {
    fs::write(path, joint_sequence_to_json(seq)?)?;
    Ok(())
}

pub fn read_joint_sequence(path: &Path) -> Result<JointSequence> {
    joint_sequence_from_json(&fs::read_to_string(path)?)
}

pub fn write_motion_clip(path: &Path, clip: &MotionClip) -> Result<()> {
    fs::write(path, motion_clip_to_json(clip)?)?;
    Ok(())
}

pub fn read_motion_clip(path: &Path) -> Result<MotionClip> {
    motion_clip_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::FULL_FEATURE_DIM;

    #[test]
    fn joint_sequence_round_trip_is_exact() {
        let positions: Vec<[f64; 3]> = (0..2 * NUM_JOINTS).map(|i| [i as f64 * 0.1, 1.0 / 3.0, -(i as f64)]).collect();
        let seq = JointSequence::with_standard_joints(30, positions).unwrap();
        let text = joint_sequence_to_json(&seq).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["frames"], 2);
        assert_eq!(value["positions"].as_array().unwrap().len(), 2 * 22 * 3);
        assert_eq!(joint_sequence_from_json(&text).unwrap(), seq);
    }

    #[test]
    fn motion_clip_round_trip_and_errors() {
        let clip = MotionClip::new(30, Mat::from_fn(3, FULL_FEATURE_DIM, |r, c| if c >= 315 { 1.0 } else { (r + c) as f64 / 7.0 })).unwrap();
        let text = motion_clip_to_json(&clip).unwrap();
        assert_eq!(motion_clip_from_json(&text).unwrap(), clip);
        assert!(motion_clip_from_json(r#"{"fps":30,"frames":2,"features":[1,2,3]}"#).is_err());
        assert!(joint_sequence_from_json(r#"{"fps":30,"joints":[],"frames":1,"positions":[]}"#).is_err());
    }
}
