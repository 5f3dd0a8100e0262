//! Generators used to exercise the protocol without a trained model.

use crate::error::Result;
use crate::linalg::Mat;
use crate::motion::{JointSequence, DEFAULT_FPS};
use crate::seed;
use crate::synth::{synthesize, Primitive, PrimitiveSpec};

use super::predicates::predicate_primitive;

/// Produces one motion from a music condition, optional text and a seed.
pub trait ConditionedGenerator {
    fn generate(&self, music: &Mat, text: Option<&str>, seed: u64) -> Result<JointSequence>;
}

/// Emits the calibrated primitive named by the prompt, or idle for null text.
#[derive(Clone, Debug)]
pub struct OracleGenerator {
    pub fps: u32,
}

impl Default for OracleGenerator {
    fn default() -> Self {
        Self { fps: DEFAULT_FPS }
    }
}

impl ConditionedGenerator for OracleGenerator {
    fn generate(&self, _music: &Mat, text: Option<&str>, seed: u64) -> Result<JointSequence> {
        let primitive = match text {
            Some(t) => predicate_primitive(t.trim())?,
            None => Primitive::Idle,
        };
        synthesize(&PrimitiveSpec::calibrated(primitive, seed), self.fps)
    }
}

/// Ignores text; the primitive is picked from a hash of the music and the seed.
#[derive(Clone, Debug)]
pub struct MusicOnlyGenerator {
    pub fps: u32,
}

impl Default for MusicOnlyGenerator {
    fn default() -> Self {
        Self { fps: DEFAULT_FPS }
    }
}

impl ConditionedGenerator for MusicOnlyGenerator {
    fn generate(&self, music: &Mat, _text: Option<&str>, seed: u64) -> Result<JointSequence> {
        let bits: Vec<u64> = music.data().iter().map(|v| v.to_bits()).collect();
        let h = seed::derive(seed, &bits);
        let primitive = Primitive::ALL[(h % Primitive::ALL.len() as u64) as usize];
        synthesize(&PrimitiveSpec::calibrated(primitive, h), self.fps)
    }
}
