//! Text-steerable music-to-dance generation at desk scale.
//!
//! The crate covers the whole pipeline: procedural motion oracles, kinematic
//! primitive predicates and the prompted/null evaluation protocol, the
//! motion-centred contrastive alignment with momentum queues, nearest-neighbour
//! banks for pseudo-triplet imputation, and a diffusion generator with a
//! frozen music-conditioned backbone and a zero-initialised text branch.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod bank;
pub mod conditions;
pub mod diffusion;
pub mod error;
pub mod kps;
pub mod linalg;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::Mat;
