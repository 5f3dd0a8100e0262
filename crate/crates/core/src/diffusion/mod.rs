//! Denoising diffusion over motion feature clips.
//!
//! A music-conditioned backbone predicts the clean clip from a noised one. A
//! control branch cloned from its first blocks injects text through
//! zero-initialised projections, so fine-tuning starts from the exact
//! backbone function.

mod loss;
mod model;
mod sample;
mod train;

pub use loss::{dance_loss, dance_loss_graph, LossLayout, LossTerms, LossWeights};
pub use model::{Backbone, ControlBranch, DataNorm, ModelConfig};
pub use sample::{cfg_sample, guided_prediction, DiffusionGenerator, SampleOptions};
pub use train::{backbone_gradients, branch_gradients, combine, finetune_control, smoothed_ratio, train_backbone, FinetuneConfig, FinetuneStep, TrainConfig, TrainStep};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

const ALPHA_BAR_MIN: f64 = 1e-4;
const ALPHA_BAR_MAX: f64 = 1.0 - 1e-4;

/// Cumulative signal fractions `ᾱ_1 … ᾱ_T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule (offset 0.008) mapped affinely into `[1e-4, 1 − 1e-4]`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("diffusion step count must be positive".into()));
        }
        let s = 0.008;
        let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let alpha_bar = (1..=steps)
            .map(|t| ALPHA_BAR_MIN + (ALPHA_BAR_MAX - ALPHA_BAR_MIN) * (f(t as f64) / f0).clamp(0.0, 1.0))
            .collect();
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::Empty("noise schedule"));
        }
        if alpha_bar.iter().any(|a| !(a.is_finite() && *a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidArgument("ᾱ values must lie in (0, 1)".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("ᾱ must be strictly decreasing".into()));
        }
        if alpha_bar[0] < 0.99 || alpha_bar[alpha_bar.len() - 1] > 0.01 {
            return Err(Error::InvalidArgument(format!(
                "ᾱ must start at or above 0.99 and end at or below 0.01, got {} and {}",
                alpha_bar[0],
                alpha_bar[alpha_bar.len() - 1]
            )));
        }
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    /// `ᾱ_t` for `1 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `ᾱ_{t−1}` with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("diffusion step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse(x0: &Mat, t: usize, eps: &Mat, schedule: &NoiseSchedule) -> Result<Mat> {
    if x0.shape() != eps.shape() {
        return Err(Error::dim("noise", format!("{:?}", x0.shape()), format!("{:?}", eps.shape())));
    }
    schedule.check_step(t)?;
    Ok(diffuse_with(x0, eps, schedule.alpha_bar(t)))
}

/// The same mix for an arbitrary `ᾱ`, including the endpoints 0 and 1.
pub fn diffuse_with(x0: &Mat, eps: &Mat, alpha_bar: f64) -> Mat {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    x0.zip_map(eps, |x, e| a * x + b * e)
}
