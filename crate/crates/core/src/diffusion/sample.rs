use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{Backbone, Bind, ControlBranch};
use super::NoiseSchedule;
use crate::conditions::text_tokens;
use crate::error::{Error, Result};
use crate::kps::ConditionedGenerator;
use crate::linalg::Mat;
use crate::motion::{decode_compact, JointSequence, MotionClip, COMPACT_FEATURE_DIM};
use crate::nn::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Guidance scale on the music condition; 1 is the plain conditional estimate.
    pub music_scale: f64,
    /// Permit sampling with neither music nor text.
    pub allow_unconditional: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { music_scale: 3.0, allow_unconditional: false }
    }
}

fn predict(bb: &Backbone, ctl: Option<(&ControlBranch, &Mat)>, x: &Mat, t: usize, music: Option<&Mat>) -> Mat {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = Bind { store: &bb.params, trainable: false };
    let branch = ctl.map(|(b, text)| (b, Bind { store: &b.params, trainable: false }, text));
    let out = bb.graph(&mut tape, p, branch, xv, t, music);
    tape.value(out).clone()
}

fn guided(bb: &Backbone, ctl: Option<(&ControlBranch, &Mat)>, x: &Mat, t: usize, music: Option<&Mat>, s: f64) -> Mat {
    match music {
        None => predict(bb, ctl, x, t, None),
        Some(m) if s == 1.0 => predict(bb, ctl, x, t, Some(m)),
        Some(m) => {
            let null = predict(bb, ctl, x, t, None);
            let cond = predict(bb, ctl, x, t, Some(m));
            null.zip_map(&cond, |a, b| a + s * (b - a))
        }
    }
}

/// One guided estimate `x̂0_null + s·(x̂0_music − x̂0_null)`; scale 1 returns
/// the conditional estimate itself.
#[allow(clippy::too_many_arguments)]
pub fn guided_prediction(
    backbone: &Backbone,
    branch: Option<&ControlBranch>,
    x_t: &Mat,
    t: usize,
    music: Option<&Mat>,
    text: Option<&Mat>,
    music_scale: f64,
) -> Result<Mat> {
    backbone.check_inputs(x_t, music)?;
    if let Some(b) = branch {
        b.check(backbone, text)?;
    }
    Ok(guided(backbone, branch.zip(text), x_t, t, music, music_scale))
}

/// Ancestral sampling with classifier-free guidance on the music condition.
/// Branch residuals are active whenever both `branch` and `text` are given.
pub fn cfg_sample(
    backbone: &Backbone,
    branch: Option<&ControlBranch>,
    music: Option<&Mat>,
    text: Option<&Mat>,
    schedule: &NoiseSchedule,
    options: &SampleOptions,
    seed: u64,
) -> Result<MotionClip> {
    if !(options.music_scale.is_finite() && options.music_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("music scale {} must be finite and ≥ 0", options.music_scale)));
    }
    if music.is_none() && text.is_none() && !options.allow_unconditional {
        return Err(Error::InvalidArgument("both conditions are null; unconditional sampling was not requested".into()));
    }
    let cfg = backbone.config();
    let (k, f) = (cfg.frames, cfg.feature_dim);
    backbone.check_inputs(&Mat::zeros(k, f), music)?;
    if let Some(b) = branch {
        b.check(backbone, text)?;
    }
    let ctl = branch.zip(text);
    let s = options.music_scale;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::from_fn(k, f, |_, _| StandardNormal.sample(&mut rng));
    for t in (1..=schedule.steps()).rev() {
        let x0 = guided(backbone, ctl, &x, t, music, s);
        if !x0.all_finite() {
            return Err(Error::Diverged { step: t, what: "sampled clip".into() });
        }
        if t == 1 {
            x = x0;
            break;
        }
        let ab = schedule.alpha_bar(t);
        let abp = schedule.alpha_bar_prev(t);
        let alpha = ab / abp;
        let beta = 1.0 - alpha;
        let c0 = abp.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - abp) / (1.0 - ab);
        let sd = (beta * (1.0 - abp) / (1.0 - ab)).sqrt();
        x = Mat::from_fn(k, f, |r, c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c0 * x0.get(r, c) + ct * x.get(r, c) + sd * z
        });
        if !x.all_finite() {
            return Err(Error::Diverged { step: t, what: "sampler state".into() });
        }
    }
    let mut raw = backbone.norm().denormalize(&x);
    let layout = crate::motion::ChannelLayout::for_dim(f)?;
    for r in 0..k {
        for &c in layout.contact_channels() {
            raw.set(r, c, if raw.get(r, c) >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    MotionClip::new(cfg.fps, raw)
}

/// Trained backbone plus optional branch, sampled per KPS trial.
#[derive(Clone, Debug)]
pub struct DiffusionGenerator {
    pub backbone: Backbone,
    pub branch: Option<ControlBranch>,
    pub schedule: NoiseSchedule,
    pub options: SampleOptions,
}

impl DiffusionGenerator {
    pub fn new(backbone: Backbone, branch: Option<ControlBranch>, schedule: NoiseSchedule, music_scale: f64) -> Result<Self> {
        if backbone.config().feature_dim != COMPACT_FEATURE_DIM {
            return Err(Error::InvalidArgument("joint decoding needs the compact feature layout".into()));
        }
        if let Some(b) = &branch {
            b.check(&backbone, None)?;
        }
        Ok(Self { backbone, branch, schedule, options: SampleOptions { music_scale, allow_unconditional: false } })
    }

    pub fn sample(&self, music: Option<&Mat>, text: Option<&str>, seed: u64) -> Result<MotionClip> {
        let tokens = text.map(text_tokens).transpose()?;
        cfg_sample(&self.backbone, self.branch.as_ref(), music, tokens.as_ref(), &self.schedule, &self.options, seed)
    }
}

impl ConditionedGenerator for DiffusionGenerator {
    fn generate(&self, music: &Mat, text: Option<&str>, seed: u64) -> Result<JointSequence> {
        let clip = self.sample(Some(music), text, seed)?;
        decode_compact(clip.features(), clip.fps())
    }
}
