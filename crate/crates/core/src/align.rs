//! Motion-centred contrastive alignment.
//!
//! Music and text queries are pulled towards keys of their paired motion,
//! against FIFO queues of earlier motion keys. Keys come from an EMA copy of
//! the motion network followed by the shared motion projector; a
//! mean/covariance bridge keeps the motion embeddings of both corpora
//! co-located.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{motion_tokens, text_tokens, PairedItem};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::nn::{ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub dim: usize,
    pub hidden: usize,
    pub queue_size: usize,
    pub momentum: f64,
    pub lambda: f64,
    pub alpha_init: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub token_stride: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: 32,
            queue_size: 256,
            momentum: 0.99,
            lambda: 1.0,
            alpha_init: 10f64.ln(),
            lr: 0.1,
            steps: 500,
            batch: 8,
            token_stride: 4,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedKind {
    /// Online motion network.
    Motion,
    /// EMA motion network; used for keys, queues and banks.
    MotionKey,
    Music,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Da,
    Mo,
}

/// FIFO queue of unit-norm keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyQueue {
    dim: usize,
    capacity: usize,
    keys: VecDeque<Vec<f64>>,
}

impl KeyQueue {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self { dim, capacity, keys: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append keys, evicting the oldest beyond capacity. Non-unit keys are normalised.
    pub fn push(&mut self, keys: &[Vec<f64>]) -> Result<()> {
        for k in keys {
            if k.len() != self.dim {
                return Err(Error::dim("queue key", self.dim, k.len()));
            }
            let n = norm(k);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateEmbedding);
            }
            let key = if (n - 1.0).abs() > 1e-6 {
                warn!("queue key with norm {n} normalised before insertion");
                k.iter().map(|x| x / n).collect()
            } else {
                k.clone()
            };
            if self.keys.len() == self.capacity {
                self.keys.pop_front();
            }
            if self.capacity > 0 {
                self.keys.push_back(key);
            }
        }
        Ok(())
    }

    /// `dim × len` matrix, oldest key first.
    pub fn matrix(&self) -> Mat {
        Mat::from_fn(self.dim, self.keys.len(), |r, c| self.keys[c][r])
    }

    pub fn keys(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.keys.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dalpha: f64,
}

/// `−s qᵀk + log(exp(s qᵀk) + Σ_j exp(s qᵀu_j))` with `s = exp(α)`, and its
/// gradients. `queue` holds one key per column.
pub fn infonce_loss(q: &[f64], k: &[f64], queue: &Mat, alpha: f64) -> Result<InfoNce> {
    let d = q.len();
    if k.len() != d {
        return Err(Error::dim("infonce key", d, k.len()));
    }
    if queue.cols() > 0 && queue.rows() != d {
        return Err(Error::dim("infonce queue rows", d, queue.rows()));
    }
    if queue.cols() == 0 {
        warn!("infonce on an empty queue is identically zero");
    }
    let s = alpha.exp();
    let pos = dot(q, k);
    let negs: Vec<f64> = (0..queue.cols()).map(|j| (0..d).map(|r| q[r] * queue.get(r, j)).sum()).collect();
    let logits: Vec<f64> = std::iter::once(s * pos).chain(negs.iter().map(|n| s * n)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = -logits[0] + max + total.ln();
    let p: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let mut dq: Vec<f64> = k.iter().map(|x| s * (p[0] - 1.0) * x).collect();
    for (j, pj) in p[1..].iter().enumerate() {
        for (r, v) in dq.iter_mut().enumerate() {
            *v += s * pj * queue.get(r, j);
        }
    }
    let dk = q.iter().map(|x| s * (p[0] - 1.0) * x).collect();
    let dalpha = s * ((p[0] - 1.0) * pos + p[1..].iter().zip(&negs).map(|(pj, n)| pj * n).sum::<f64>());
    Ok(InfoNce { loss, dq, dk, dalpha })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: Domain,
    pub mean: Vec<f64>,
    pub cov: Mat,
}

/// Batch mean and population covariance of the rows of `batch`.
pub fn domain_stats(batch: &Mat, domain: Domain) -> Result<DomainStats> {
    let n = batch.rows();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let mean = batch.mean_rows();
    let centred = Mat::from_fn(n, batch.cols(), |r, c| batch.get(r, c) - mean.get(0, c));
    let cov = centred.matmul_tn(&centred).scale(1.0 / n as f64);
    Ok(DomainStats { domain, mean: mean.into_vec(), cov })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bridge {
    pub loss: f64,
    pub grad_a: Mat,
    pub grad_b: Mat,
}

/// `‖μ_a − μ_b‖² + ‖Σ_a − Σ_b‖_F²` with gradients for both batches.
pub fn bridge_loss(a: &Mat, b: &Mat) -> Result<Bridge> {
    if a.cols() != b.cols() {
        return Err(Error::dim("bridge batch width", a.cols(), b.cols()));
    }
    let sa = domain_stats(a, Domain::Da)?;
    let sb = domain_stats(b, Domain::Mo)?;
    let dmu: Vec<f64> = sa.mean.iter().zip(&sb.mean).map(|(x, y)| x - y).collect();
    let dcov = sa.cov.zip_map(&sb.cov, |x, y| x - y);
    let loss = dmu.iter().map(|x| x * x).sum::<f64>() + dcov.frobenius_sq();
    let grad = |x: &Mat, stats: &DomainStats, sign: f64| {
        let n = x.rows() as f64;
        let centred = Mat::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - stats.mean[c]);
        let cov_term = centred.matmul(&dcov).scale(4.0 / n);
        Mat::from_fn(x.rows(), x.cols(), |r, c| sign * (2.0 / n * dmu[c] + cov_term.get(r, c)))
    };
    Ok(Bridge { loss, grad_a: grad(a, &sa, 1.0), grad_b: grad(b, &sb, -1.0) })
}

/// Per-channel standardisation of motion tokens, fixed at training start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl TokenNorm {
    pub fn fit(tokens: &[Mat]) -> Result<Self> {
        let first = tokens.first().ok_or(Error::Empty("token set"))?;
        let d = first.cols();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0.0;
        for t in tokens {
            for r in 0..t.rows() {
                for (c, v) in t.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let inv_std = sq.iter().zip(&mean).map(|(s, m)| 1.0 / (s / n - m * m).max(0.0).sqrt().max(0.05)).collect();
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, tokens: &Mat) -> Mat {
        Mat::from_fn(tokens.rows(), tokens.cols(), |r, c| (tokens.get(r, c) - self.mean[c]) * self.inv_std[c])
    }
}

const MOTION_NET: [&str; 4] = ["motion.w1", "motion.b1", "motion.w2", "motion.b2"];

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentSpace {
    pub config: AlignConfig,
    pub params: ParamStore,
    pub ema: ParamStore,
    pub token_norm: TokenNorm,
    pub queue_da: KeyQueue,
    pub queue_mo: KeyQueue,
}

impl AlignmentSpace {
    pub fn new(config: AlignConfig, motion_in: usize, music_in: usize, text_in: usize, token_norm: TokenNorm) -> Result<Self> {
        if config.dim == 0 || config.hidden == 0 {
            return Err(Error::InvalidArgument("alignment dimensions must be positive".into()));
        }
        if token_norm.mean.len() != motion_in {
            return Err(Error::dim("token norm width", motion_in, token_norm.mean.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, d) = (config.hidden, config.dim);
        let mut p = ParamStore::new();
        p.insert_linear_weight("motion.w1", motion_in, h, &mut rng);
        p.insert("motion.b1", Mat::zeros(1, h));
        p.insert_linear_weight("motion.w2", h, h, &mut rng);
        p.insert("motion.b2", Mat::zeros(1, h));
        p.insert_linear_weight("motion.proj.w", h, d, &mut rng);
        p.insert("motion.proj.b", Mat::zeros(1, d));
        p.insert_linear_weight("music.proj.w", music_in, d, &mut rng);
        p.insert("music.proj.b", Mat::zeros(1, d));
        p.insert_linear_weight("text.proj.w", text_in, d, &mut rng);
        p.insert("text.proj.b", Mat::zeros(1, d));
        p.insert("alpha_mus", Mat::scalar(config.alpha_init));
        p.insert("alpha_txt", Mat::scalar(config.alpha_init));
        let mut ema = ParamStore::new();
        for name in MOTION_NET {
            ema.insert(name, p.get(name).expect("motion net").clone());
        }
        Ok(Self {
            queue_da: KeyQueue::new(d, config.queue_size),
            queue_mo: KeyQueue::new(d, config.queue_size),
            config,
            params: p,
            ema,
            token_norm,
        })
    }

    /// `Ē ← m·Ē + (1−m)·E` over the motion network.
    pub fn ema_update(&mut self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidArgument(format!("EMA momentum {m} outside [0, 1]")));
        }
        for name in MOTION_NET {
            let online = self.params.get(name).expect("motion net").clone();
            let target = self.ema.get_mut(name).expect("ema net");
            *target = target.zip_map(&online, |e, o| m * e + (1.0 - m) * o);
        }
        Ok(())
    }

    fn motion_pooled(&self, tape: &mut Tape, store: &ParamStore, tokens: &Mat) -> Var {
        let x = tape.constant(self.token_norm.apply(tokens));
        let [w1, b1, w2, b2] = MOTION_NET.map(|n| tape.param(store, n));
        let h = tape.linear(x, w1, b1);
        let h = tape.tanh(h);
        let h = tape.linear(h, w2, b2);
        let h = tape.tanh(h);
        tape.mean_rows(h)
    }

    fn project(&self, tape: &mut Tape, pooled: Var, prefix: &str) -> Var {
        let w = tape.param(&self.params, &format!("{prefix}.proj.w"));
        let b = tape.param(&self.params, &format!("{prefix}.proj.b"));
        tape.linear(pooled, w, b)
    }

    /// Pre-normalisation embedding of `tokens` recorded on `tape`.
    fn raw_embedding(&self, tape: &mut Tape, kind: EmbedKind, tokens: &Mat) -> Result<Var> {
        let expected = match kind {
            EmbedKind::Motion | EmbedKind::MotionKey => self.token_norm.mean.len(),
            EmbedKind::Music => self.params.get("music.proj.w").expect("music proj").rows(),
            EmbedKind::Text => self.params.get("text.proj.w").expect("text proj").rows(),
        };
        if tokens.rows() == 0 {
            return Err(Error::Empty("token matrix"));
        }
        if tokens.cols() != expected {
            return Err(Error::dim("embedding tokens", expected, tokens.cols()));
        }
        Ok(match kind {
            EmbedKind::Motion => {
                let pooled = self.motion_pooled(tape, &self.params, tokens);
                self.project(tape, pooled, "motion")
            }
            EmbedKind::MotionKey => {
                // The EMA network carries no gradient: evaluate it off-tape.
                let mut scratch = Tape::new();
                let pooled = self.motion_pooled(&mut scratch, &self.ema, tokens);
                let pooled = tape.constant(scratch.value(pooled).clone());
                self.project(tape, pooled, "motion")
            }
            EmbedKind::Music => {
                let pooled = tape.constant(tokens.mean_rows());
                self.project(tape, pooled, "music")
            }
            EmbedKind::Text => {
                let pooled = tape.constant(tokens.mean_rows());
                self.project(tape, pooled, "text")
            }
        })
    }

    fn unit_embedding(&self, tape: &mut Tape, kind: EmbedKind, tokens: &Mat) -> Result<Var> {
        let raw = self.raw_embedding(tape, kind, tokens)?;
        let n = norm(tape.value(raw).data());
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(tape.normalize_rows(raw))
    }

    /// Unit-norm embedding of a token matrix.
    pub fn embed(&self, kind: EmbedKind, tokens: &Mat) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.unit_embedding(&mut tape, kind, tokens)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn motion_tokens(&self, item: &PairedItem) -> Mat {
        motion_tokens(&item.clip, self.config.token_stride)
    }

    /// Key-side motion embedding of a corpus item.
    pub fn embed_motion(&self, item: &PairedItem) -> Result<Vec<f64>> {
        self.embed(EmbedKind::MotionKey, &self.motion_tokens(item))
    }

    pub fn embed_music(&self, music: &Mat) -> Result<Vec<f64>> {
        self.embed(EmbedKind::Music, music)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.embed(EmbedKind::Text, &text_tokens(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = AlignFile {
            config: self.config.clone(),
            params: self.params.to_json_value(),
            ema: self.ema.to_json_value(),
            token_norm: self.token_norm.clone(),
            queue_da: self.queue_da.clone(),
            queue_mo: self.queue_mo.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: AlignFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self {
            config: file.config,
            params: ParamStore::from_json_value(file.params)?,
            ema: ParamStore::from_json_value(file.ema)?,
            token_norm: file.token_norm,
            queue_da: file.queue_da,
            queue_mo: file.queue_mo,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AlignFile {
    config: AlignConfig,
    params: serde_json::Value,
    ema: serde_json::Value,
    token_norm: TokenNorm,
    queue_da: KeyQueue,
    queue_mo: KeyQueue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignStep {
    pub step: usize,
    pub l_m2d: f64,
    pub l_t2m: f64,
    pub l_bridge: f64,
    pub total: f64,
}

pub fn trace_csv(trace: &[AlignStep]) -> String {
    let mut out = String::from("step,L_m2d,L_t2m,L_bridge,total\n");
    for s in trace {
        let _ = writeln!(out, "{},{},{},{},{}", s.step, s.l_m2d, s.l_t2m, s.l_bridge, s.total);
    }
    out
}

struct Prepared {
    motion: Vec<Mat>,
    cond: Vec<Mat>,
}

fn prepare(items: &[PairedItem], stride: usize, domain: Domain) -> Result<Prepared> {
    let motion = items.iter().map(|i| motion_tokens(&i.clip, stride)).collect();
    let cond = items
        .iter()
        .map(|i| match domain {
            Domain::Da => i.music.clone().ok_or_else(|| Error::InvalidArgument(format!("item {} has no music", i.source_id))),
            Domain::Mo => text_tokens(i.text.as_deref().ok_or_else(|| {
                Error::InvalidArgument(format!("item {} has no text", i.source_id))
            })?),
        })
        .collect::<Result<_>>()?;
    Ok(Prepared { motion, cond })
}

/// Train the alignment objective `L_m2d + L_t2m + λ·L_bridge` by gradient descent.
pub fn train_alignment(
    corpus_da: &[PairedItem],
    corpus_mo: &[PairedItem],
    config: &AlignConfig,
) -> Result<(AlignmentSpace, Vec<AlignStep>)> {
    if corpus_da.is_empty() || corpus_mo.is_empty() {
        return Err(Error::Empty("alignment corpus"));
    }
    if config.batch < 2 {
        return Err(Error::InvalidArgument("alignment batch must be at least 2 for the bridge".into()));
    }
    let da = prepare(corpus_da, config.token_stride, Domain::Da)?;
    let mo = prepare(corpus_mo, config.token_stride, Domain::Mo)?;
    let all_motion: Vec<Mat> = da.motion.iter().chain(&mo.motion).cloned().collect();
    let norm = TokenNorm::fit(&all_motion)?;
    let mut space = AlignmentSpace::new(config.clone(), all_motion[0].cols(), da.cond[0].cols(), mo.cond[0].cols(), norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(config.seed, &[0xA11]));

    for (queue, prepared) in [(Domain::Da, &da), (Domain::Mo, &mo)] {
        let keys = (0..config.queue_size)
            .map(|_| space.embed(EmbedKind::MotionKey, &prepared.motion[rng.gen_range(0..prepared.motion.len())]))
            .collect::<Result<Vec<_>>>()?;
        match queue {
            Domain::Da => space.queue_da.push(&keys)?,
            Domain::Mo => space.queue_mo.push(&keys)?,
        }
    }

    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let da_idx: Vec<usize> = (0..config.batch).map(|_| rng.gen_range(0..da.motion.len())).collect();
        let mo_idx: Vec<usize> = (0..config.batch).map(|_| rng.gen_range(0..mo.motion.len())).collect();
        let mut tape = Tape::new();
        let (l_m2d, keys_da, emb_da) = stream(&space, &mut tape, &da, &da_idx, EmbedKind::Music, "alpha_mus", &space.queue_da.matrix())?;
        let (l_t2m, keys_mo, emb_mo) = stream(&space, &mut tape, &mo, &mo_idx, EmbedKind::Text, "alpha_txt", &space.queue_mo.matrix())?;
        let a = tape.stack_rows(&emb_da);
        let b = tape.stack_rows(&emb_mo);
        let bridge = bridge_loss(tape.value(a), tape.value(b))?;
        let l_bridge = tape.scalar_fn(bridge.loss, vec![(a, bridge.grad_a), (b, bridge.grad_b)]);
        let contrastive = tape.add(l_m2d, l_t2m);
        let weighted = tape.scale(l_bridge, config.lambda);
        let total = tape.add(contrastive, weighted);

        let record = AlignStep {
            step,
            l_m2d: tape.scalar(l_m2d),
            l_t2m: tape.scalar(l_t2m),
            l_bridge: tape.scalar(l_bridge),
            total: tape.scalar(total),
        };
        if !record.total.is_finite() {
            return Err(Error::Diverged { step, what: "alignment loss".into() });
        }
        let mut grads = tape.backward(total, space.params.len());
        if !grads.all_finite() {
            return Err(Error::Diverged { step, what: "alignment gradient".into() });
        }
        grads.clip(config.grad_clip);
        space.params.sgd_step(&grads, config.lr, |_| true);
        space.ema_update(config.momentum)?;
        space.queue_da.push(&keys_da)?;
        space.queue_mo.push(&keys_mo)?;
        trace.push(record);
    }
    Ok((space, trace))
}

/// One contrastive stream: returns its mean loss, the detached keys and the
/// online motion embeddings used by the bridge.
#[allow(clippy::too_many_arguments)]
fn stream(
    space: &AlignmentSpace,
    tape: &mut Tape,
    data: &Prepared,
    idx: &[usize],
    query_kind: EmbedKind,
    alpha_name: &str,
    queue: &Mat,
) -> Result<(Var, Vec<Vec<f64>>, Vec<Var>)> {
    let alpha = tape.param(&space.params, alpha_name);
    let alpha_value = tape.scalar(alpha);
    let mut losses = Vec::with_capacity(idx.len());
    let mut keys = Vec::with_capacity(idx.len());
    let mut online = Vec::with_capacity(idx.len());
    for &i in idx {
        let q = space.unit_embedding(tape, query_kind, &data.cond[i])?;
        let k = space.unit_embedding(tape, EmbedKind::MotionKey, &data.motion[i])?;
        let (qv, kv) = (tape.value(q).data().to_vec(), tape.value(k).data().to_vec());
        let nce = infonce_loss(&qv, &kv, queue, alpha_value)?;
        let d = qv.len();
        losses.push(tape.scalar_fn(
            nce.loss,
            vec![
                (q, Mat::from_vec(1, d, nce.dq)?),
                (k, Mat::from_vec(1, d, nce.dk)?),
                (alpha, Mat::scalar(nce.dalpha)),
            ],
        ));
        keys.push(kv);
        online.push(space.unit_embedding(tape, EmbedKind::Motion, &data.motion[i])?);
    }
    let stacked = tape.stack_rows(&losses);
    let mean = tape.mean(stacked);
    Ok((mean, keys, online))
}

/// Fraction of items whose key-side motion embedding has, as its nearest
/// music embedding among the same items, one of the same primitive class.
pub fn class_top1(space: &AlignmentSpace, items: &[PairedItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let motions = items.iter().map(|i| space.embed_motion(i)).collect::<Result<Vec<_>>>()?;
    let music = items
        .iter()
        .map(|i| space.embed_music(i.music.as_ref().ok_or(Error::Empty("music condition"))?))
        .collect::<Result<Vec<_>>>()?;
    let hits = motions
        .iter()
        .zip(items)
        .filter(|(m, item)| {
            let best = music
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, e)| {
                    let s = dot(m, e);
                    if s > acc.1 {
                        (j, s)
                    } else {
                        acc
                    }
                })
                .0;
            items[best].label == item.label
        })
        .count();
    Ok(hits as f64 / items.len() as f64)
}
