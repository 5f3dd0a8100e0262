use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{dance_loss_graph, LossLayout, LossTerms, LossWeights};
use super::model::{Backbone, Bind, ControlBranch, DataNorm, ModelConfig};
use super::{diffuse_with, NoiseSchedule};
use crate::bank::PseudoTriplet;
use crate::conditions::{text_tokens, PairedItem};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::motion::ChannelLayout;
use crate::nn::{Adam, Grads, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Probability of replacing the music condition with the null token sequence.
    pub music_dropout: f64,
    pub diffusion_steps: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 2,
            lr: 2e-3,
            grad_clip: 1.0,
            music_dropout: 0.1,
            diffusion_steps: 50,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub diffusion_steps: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { steps: 500, batch: 1, lr: 1e-3, grad_clip: 1.0, diffusion_steps: 50, weights: LossWeights::default(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: usize,
    #[serde(flatten)]
    pub terms: LossTerms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneStep {
    pub step: usize,
    pub l_text: f64,
    pub l_dance: f64,
    pub combined: f64,
}

/// `(1 − λ_p)·L_text + λ_p·L_dance`.
pub fn combine(l_text: f64, l_dance: f64, lambda_p: f64) -> f64 {
    (1.0 - lambda_p) * l_text + lambda_p * l_dance
}

/// Mean of the last `window` values over the mean of the first `window`.
pub fn smoothed_ratio(values: &[f64], window: usize) -> f64 {
    let w = window.clamp(1, values.len().max(1));
    let head = values.iter().take(w).sum::<f64>() / w as f64;
    let tail = values.iter().rev().take(w).sum::<f64>() / w as f64;
    tail / head
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// One noised example on the tape: returns its loss node and terms.
#[allow(clippy::too_many_arguments)]
fn example(
    tape: &mut Tape,
    model: &Backbone,
    p: Bind,
    branch: Option<(&ControlBranch, Bind, &Mat)>,
    x0: &Mat,
    music: Option<&Mat>,
    schedule: &NoiseSchedule,
    weights: &LossWeights,
    layout: &LossLayout,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, LossTerms)> {
    let t = rng.gen_range(1..=schedule.steps());
    let eps = noise(rng, x0.rows(), x0.cols());
    let xt = diffuse_with(x0, &eps, schedule.alpha_bar(t));
    let x = tape.constant(xt);
    let out = model.graph(tape, p, branch, x, t, music);
    dance_loss_graph(tape, x0, out, weights, layout, Some(model.norm()))
}

fn mean_of(tape: &mut Tape, parts: &[(Var, LossTerms)]) -> (Var, LossTerms) {
    let n = parts.len() as f64;
    let mut acc = parts[0].0;
    for (v, _) in &parts[1..] {
        acc = tape.add(acc, *v);
    }
    let loss = tape.scale(acc, 1.0 / n);
    let mut t = LossTerms::default();
    for (_, p) in parts {
        t.diff += p.diff / n;
        t.joint += p.joint / n;
        t.vel += p.vel / n;
        t.contact += p.contact / n;
    }
    t.total = tape.scalar(loss);
    (loss, t)
}

/// Fit the data normalisation, then train the backbone with Adam on
/// `(x0, t, ε)` draws from the music–dance corpus.
pub fn train_backbone(corpus: &[PairedItem], model: &ModelConfig, config: &TrainConfig) -> Result<(Backbone, Vec<TrainStep>)> {
    if corpus.is_empty() {
        return Err(Error::Empty("music–dance corpus"));
    }
    if config.batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    config.weights.validate()?;
    let clips: Vec<&Mat> = corpus.iter().map(|i| i.clip.features()).collect();
    let musics = corpus
        .iter()
        .map(|i| i.music.as_ref().ok_or_else(|| Error::InvalidArgument(format!("item {} has no music", i.source_id))))
        .collect::<Result<Vec<_>>>()?;
    let norm = DataNorm::fit(&clips)?;
    let mut bb = Backbone::new(model.clone(), norm)?;
    for (c, m) in clips.iter().zip(&musics) {
        bb.check_inputs(c, Some(m))?;
    }
    let data: Vec<Mat> = clips.iter().map(|c| bb.norm().normalize(c)).collect();
    let schedule = NoiseSchedule::cosine(config.diffusion_steps)?;
    let layout = LossLayout::from_channels(&ChannelLayout::for_dim(model.feature_dim)?);
    let mut adam = Adam::new(config.lr, bb.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(config.seed, &[0xBB]));
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut tape = Tape::new();
        let p = Bind { store: &bb.params, trainable: true };
        let mut parts = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let i = rng.gen_range(0..data.len());
            let music = if rng.gen::<f64>() < config.music_dropout { None } else { Some(musics[i]) };
            parts.push(example(&mut tape, &bb, p, None, &data[i], music, &schedule, &config.weights, &layout, &mut rng)?);
        }
        let (loss, terms) = mean_of(&mut tape, &parts);
        if !terms.total.is_finite() {
            return Err(Error::Diverged { step, what: "backbone loss".into() });
        }
        let mut grads = tape.backward(loss, bb.params.len());
        if !grads.all_finite() {
            return Err(Error::Diverged { step, what: "backbone gradient".into() });
        }
        grads.clip(config.grad_clip);
        adam.step(&mut bb.params, &grads, |_| true);
        trace.push(TrainStep { step, terms });
    }
    Ok((bb, trace))
}

/// Loss and backbone gradients for one example at a given step and noise.
pub fn backbone_gradients(
    backbone: &Backbone,
    x0: &Mat,
    t: usize,
    eps: &Mat,
    music: Option<&Mat>,
    schedule: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(LossTerms, Grads)> {
    fixed_example(backbone, None, x0, t, eps, music, schedule, weights)
}

/// Loss and control-branch gradients for one example; the backbone is held fixed.
#[allow(clippy::too_many_arguments)]
pub fn branch_gradients(
    backbone: &Backbone,
    branch: &ControlBranch,
    text: &Mat,
    x0: &Mat,
    t: usize,
    eps: &Mat,
    music: Option<&Mat>,
    schedule: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(LossTerms, Grads)> {
    branch.check(backbone, Some(text))?;
    fixed_example(backbone, Some((branch, text)), x0, t, eps, music, schedule, weights)
}

#[allow(clippy::too_many_arguments)]
fn fixed_example(
    backbone: &Backbone,
    ctl: Option<(&ControlBranch, &Mat)>,
    x0: &Mat,
    t: usize,
    eps: &Mat,
    music: Option<&Mat>,
    schedule: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(LossTerms, Grads)> {
    backbone.check_inputs(x0, music)?;
    let xt = super::forward_diffuse(x0, t, eps, schedule)?;
    let layout = LossLayout::from_channels(&ChannelLayout::for_dim(backbone.config().feature_dim)?);
    let mut tape = Tape::new();
    let x = tape.constant(xt);
    let p = Bind { store: &backbone.params, trainable: ctl.is_none() };
    let branch = ctl.map(|(b, text)| (b, Bind { store: &b.params, trainable: true }, text));
    let out = backbone.graph(&mut tape, p, branch, x, t, music);
    let (loss, terms) = dance_loss_graph(&mut tape, x0, out, weights, &layout, Some(backbone.norm()))?;
    let n = match ctl {
        Some((b, _)) => b.params.len(),
        None => backbone.params.len(),
    };
    Ok((terms, tape.backward(loss, n)))
}

struct StreamItem {
    x0: Mat,
    music: Option<Mat>,
    text: Option<Mat>,
}

fn prepare(triplets: &[PseudoTriplet], bb: &Backbone, what: &'static str) -> Result<Vec<StreamItem>> {
    if triplets.is_empty() {
        return Err(Error::Empty(what));
    }
    triplets
        .iter()
        .map(|tr| {
            let x0 = bb.norm().normalize(tr.motion.features());
            bb.check_inputs(&x0, tr.music.as_ref())?;
            let text = tr.text.as_deref().map(text_tokens).transpose()?;
            Ok(StreamItem { x0, music: tr.music.clone(), text })
        })
        .collect()
}

/// Train only the control branch on alternating text–motion and music–dance
/// minibatches. Fails if the backbone digest changes.
pub fn finetune_control(
    backbone: &Backbone,
    branch: ControlBranch,
    corpus_td: &[PseudoTriplet],
    corpus_md: &[PseudoTriplet],
    config: &FinetuneConfig,
) -> Result<(ControlBranch, Vec<FinetuneStep>)> {
    config.weights.validate()?;
    if config.batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    branch.check(backbone, None)?;
    let before = backbone.digest();
    let td = prepare(corpus_td, backbone, "text–motion triplets")?;
    let md = prepare(corpus_md, backbone, "music–dance triplets")?;
    let schedule = NoiseSchedule::cosine(config.diffusion_steps)?;
    let layout = LossLayout::from_channels(&ChannelLayout::for_dim(backbone.config().feature_dim)?);
    let mut branch = branch;
    let mut adam = Adam::new(config.lr, branch.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(config.seed, &[0xF7]));
    let lambda = config.weights.lambda_p;
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut tape = Tape::new();
        let p = Bind { store: &backbone.params, trainable: false };
        let bp = Bind { store: &branch.params, trainable: true };
        let mut stream = |tape: &mut Tape, data: &[StreamItem]| -> Result<(Var, LossTerms)> {
            let mut parts = Vec::with_capacity(config.batch);
            for _ in 0..config.batch {
                let item = &data[rng.gen_range(0..data.len())];
                let ctl = item.text.as_ref().map(|t| (&branch, bp, t));
                parts.push(example(tape, backbone, p, ctl, &item.x0, item.music.as_ref(), &schedule, &config.weights, &layout, &mut rng)?);
            }
            Ok(mean_of(tape, &parts))
        };
        let (l_text, t_text) = stream(&mut tape, &td)?;
        let (l_dance, t_dance) = stream(&mut tape, &md)?;
        let a = tape.scale(l_text, 1.0 - lambda);
        let b = tape.scale(l_dance, lambda);
        let total = tape.add(a, b);
        let record = FinetuneStep {
            step,
            l_text: t_text.total,
            l_dance: t_dance.total,
            combined: combine(t_text.total, t_dance.total, lambda),
        };
        if !record.combined.is_finite() {
            return Err(Error::Diverged { step, what: "fine-tuning loss".into() });
        }
        let mut grads = tape.backward(total, branch.params.len());
        if !grads.all_finite() {
            return Err(Error::Diverged { step, what: "fine-tuning gradient".into() });
        }
        grads.clip(config.grad_clip);
        adam.step(&mut branch.params, &grads, |_| true);
        trace.push(record);
    }

    let after = backbone.digest();
    if before != after {
        return Err(Error::BackboneDrift { before, after });
    }
    Ok((branch, trace))
}
