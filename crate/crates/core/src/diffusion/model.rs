use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{MUSIC_DIM, TEXT_DIM};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::motion::{ChannelLayout, COMPACT_FEATURE_DIM};
use crate::nn::{ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub frames: usize,
    pub fps: u32,
    pub hidden: usize,
    pub cond_dim: usize,
    pub text_dim: usize,
    pub group_hidden: usize,
    pub layers: usize,
    /// Control blocks; `None` means `⌈layers / 2⌉`.
    pub control_blocks: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: COMPACT_FEATURE_DIM,
            frames: 120,
            fps: 30,
            hidden: 32,
            cond_dim: MUSIC_DIM,
            text_dim: TEXT_DIM,
            group_hidden: 8,
            layers: 4,
            control_blocks: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn control_blocks(&self) -> usize {
        self.control_blocks.unwrap_or(self.layers.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        ChannelLayout::for_dim(self.feature_dim)?;
        if self.frames == 0 || self.hidden == 0 || self.cond_dim == 0 || self.text_dim == 0 || self.group_hidden == 0 {
            return Err(Error::InvalidArgument("model sizes must be positive".into()));
        }
        if !self.hidden.is_multiple_of(2) {
            return Err(Error::InvalidArgument("hidden size must be even for sinusoidal embeddings".into()));
        }
        if self.layers == 0 || self.control_blocks() > self.layers {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ layers and control blocks ≤ layers, got {} and {}",
                self.layers,
                self.control_blocks()
            )));
        }
        Ok(())
    }
}

/// Per-channel standardisation of feature clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DataNorm {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Channel statistics over every frame of every clip; spreads below 1e-3 become 1.
    pub fn fit(clips: &[&Mat]) -> Result<Self> {
        let first = clips.first().ok_or(Error::Empty("normalisation data"))?;
        let dim = first.cols();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for c in clips {
            if c.cols() != dim {
                return Err(Error::dim("normalisation clip", dim, c.cols()));
            }
            for r in 0..c.rows() {
                for (j, v) in c.row(r).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += c.rows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64 - m * m).max(0.0).sqrt();
                if sd < 1e-3 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |r, c| (x.get(r, c) - self.mean[c]) / self.std[c])
    }

    pub fn denormalize(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) * self.std[c] + self.mean[c])
    }

    pub(crate) fn denormalize_graph(&self, tape: &mut Tape, x: Var) -> Var {
        let s = tape.constant(Mat::row_vector(&self.std));
        let m = tape.constant(Mat::row_vector(&self.mean));
        let scaled = tape.mul_row(x, s);
        tape.add_row(scaled, m)
    }
}

/// Parameters read from a store either as trainable leaves or as constants.
#[derive(Clone, Copy)]
pub(crate) struct Bind<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl Bind<'_> {
    pub fn var(&self, tape: &mut Tape, name: &str) -> Var {
        if self.trainable {
            tape.param(self.store, name)
        } else {
            tape.constant(self.store.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`")).clone())
        }
    }
}

const BLOCK_PARAMS: [&str; 14] = [
    "sa_q", "sa_k", "sa_v", "sa_o", "ca_q", "ca_k", "ca_v", "ca_o", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "film.w",
    "film.b",
];

fn insert_block(store: &mut ParamStore, prefix: &str, h: usize, c: usize, rng: &mut ChaCha8Rng) {
    for name in ["sa_q", "sa_k", "sa_v", "sa_o", "ca_q"] {
        store.insert_linear_weight(format!("{prefix}.{name}"), h, h, rng);
    }
    store.insert_linear_weight(format!("{prefix}.ca_k"), c, h, rng);
    store.insert_linear_weight(format!("{prefix}.ca_v"), c, h, rng);
    store.insert_linear_weight(format!("{prefix}.ca_o"), h, h, rng);
    store.insert_linear_weight(format!("{prefix}.ffn.w1"), h, 2 * h, rng);
    store.insert(format!("{prefix}.ffn.b1"), Mat::zeros(1, 2 * h));
    store.insert_linear_weight(format!("{prefix}.ffn.w2"), 2 * h, h, rng);
    store.insert(format!("{prefix}.ffn.b2"), Mat::zeros(1, h));
    store.insert(format!("{prefix}.film.w"), Mat::zeros(h, 2 * h));
    store.insert(format!("{prefix}.film.b"), Mat::zeros(1, 2 * h));
}

/// Scaled dot-product attention of `x` over `ctx` with output projection.
fn attention(tape: &mut Tape, p: Bind, prefix: &str, kind: &str, x: Var, ctx: Var) -> Var {
    let wq = p.var(tape, &format!("{prefix}.{kind}_q"));
    let wk = p.var(tape, &format!("{prefix}.{kind}_k"));
    let wv = p.var(tape, &format!("{prefix}.{kind}_v"));
    let wo = p.var(tape, &format!("{prefix}.{kind}_o"));
    let q = tape.matmul(x, wq);
    let k = tape.matmul(ctx, wk);
    let v = tape.matmul(ctx, wv);
    let h = tape.value(q).cols();
    let s = tape.matmul_nt(q, k);
    let s = tape.scale(s, 1.0 / (h as f64).sqrt());
    let a = tape.softmax_rows(s);
    let o = tape.matmul(a, v);
    tape.matmul(o, wo)
}

/// Self-attention, cross-attention over `cond`, then a FiLM-modulated FFN.
fn block(tape: &mut Tape, p: Bind, prefix: &str, h: Var, cond: Var, temb: Var) -> Var {
    let sa = attention(tape, p, prefix, "sa", h, h);
    let h = tape.add(h, sa);
    let ca = attention(tape, p, prefix, "ca", h, cond);
    let h = tape.add(h, ca);
    let w1 = p.var(tape, &format!("{prefix}.ffn.w1"));
    let b1 = p.var(tape, &format!("{prefix}.ffn.b1"));
    let w2 = p.var(tape, &format!("{prefix}.ffn.w2"));
    let b2 = p.var(tape, &format!("{prefix}.ffn.b2"));
    let f = tape.linear(h, w1, b1);
    let f = tape.silu(f);
    let f = tape.linear(f, w2, b2);
    let fw = p.var(tape, &format!("{prefix}.film.w"));
    let fb = p.var(tape, &format!("{prefix}.film.b"));
    let film = tape.linear(temb, fw, fb);
    let width = tape.value(h).cols();
    let gamma = tape.slice_cols(film, 0, width);
    let beta = tape.slice_cols(film, width, width);
    let ones = tape.constant(Mat::filled(1, width, 1.0));
    let gain = tape.add(gamma, ones);
    let f = tape.mul_row(f, gain);
    let f = tape.add_row(f, beta);
    tape.add(h, f)
}

fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 1.0 / 10000f64.powf(i as f64 / half as f64);
        out[i] = (pos * w).sin();
        out[half + i] = (pos * w).cos();
    }
    out
}

/// Music-conditioned denoiser predicting the clean clip in normalised space.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: ModelConfig,
    layout: ChannelLayout,
    pub(crate) params: ParamStore,
    norm: DataNorm,
}

#[derive(Serialize, Deserialize)]
struct BackboneFile {
    config: ModelConfig,
    norm: DataNorm,
    digest: String,
    tensors: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct BranchFile {
    backbone_digest: String,
    blocks: usize,
    digest: String,
    tensors: serde_json::Value,
}

impl Backbone {
    pub fn new(config: ModelConfig, norm: DataNorm) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != config.feature_dim || norm.std.len() != config.feature_dim {
            return Err(Error::dim("data normalisation", config.feature_dim, norm.mean.len()));
        }
        let layout = ChannelLayout::for_dim(config.feature_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(config.seed, &[0xD1F]));
        let (h, c, gh) = (config.hidden, config.cond_dim, config.group_hidden);
        let mut p = ParamStore::new();
        for (i, g) in layout.groups().iter().enumerate() {
            p.insert_linear_weight(format!("enc.g{i}.w1"), g.len(), gh, &mut rng);
            p.insert(format!("enc.g{i}.b1"), Mat::zeros(1, gh));
            p.insert_linear_weight(format!("enc.g{i}.w2"), gh, gh, &mut rng);
            p.insert(format!("enc.g{i}.b2"), Mat::zeros(1, gh));
        }
        p.insert_linear_weight("enc.fuse.w", gh * layout.groups().len(), h, &mut rng);
        p.insert("enc.fuse.b", Mat::zeros(1, h));
        p.insert_linear_weight("time.w1", h, h, &mut rng);
        p.insert("time.b1", Mat::zeros(1, h));
        p.insert_linear_weight("time.w2", h, h, &mut rng);
        p.insert("time.b2", Mat::zeros(1, h));
        for l in 0..config.layers {
            insert_block(&mut p, &format!("blk{l}"), h, c, &mut rng);
        }
        let null = Mat::from_fn(config.frames, c, |_, _| StandardNormal.sample(&mut rng));
        p.insert("music_null", null);
        p.insert_linear_weight("out.w", h, config.feature_dim, &mut rng);
        p.insert("out.b", Mat::zeros(1, config.feature_dim));
        Ok(Self { config, layout, params: p, norm })
    }

    /// Same architecture with replacement parameters.
    pub fn with_params(&self, params: ParamStore) -> Result<Self> {
        if !self.params.same_layout(&params) {
            return Err(Error::Schema("parameters do not match the backbone architecture".into()));
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn norm(&self) -> &DataNorm {
        &self.norm
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// SHA-256 over every parameter and the normalisation statistics.
    pub fn digest(&self) -> String {
        let mut store = self.params.clone();
        store.insert("norm.mean", Mat::row_vector(&self.norm.mean));
        store.insert("norm.std", Mat::row_vector(&self.norm.std));
        store.digest()
    }

    pub(crate) fn check_inputs(&self, x_t: &Mat, music: Option<&Mat>) -> Result<()> {
        let want = (self.config.frames, self.config.feature_dim);
        if x_t.shape() != want {
            return Err(Error::dim("noisy clip", format!("{want:?}"), format!("{:?}", x_t.shape())));
        }
        if let Some(m) = music {
            let want = (self.config.frames, self.config.cond_dim);
            if m.shape() != want {
                return Err(Error::dim("music condition", format!("{want:?}"), format!("{:?}", m.shape())));
            }
        }
        Ok(())
    }

    /// Per-group encoder outputs before fusion, each `k × group_hidden`.
    pub(crate) fn encode_groups_graph(&self, tape: &mut Tape, p: Bind, x: Var) -> Vec<Var> {
        self.layout
            .groups()
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let xs = tape.gather_cols(x, g);
                let w1 = p.var(tape, &format!("enc.g{i}.w1"));
                let b1 = p.var(tape, &format!("enc.g{i}.b1"));
                let w2 = p.var(tape, &format!("enc.g{i}.w2"));
                let b2 = p.var(tape, &format!("enc.g{i}.b2"));
                let h = tape.linear(xs, w1, b1);
                let h = tape.silu(h);
                tape.linear(h, w2, b2)
            })
            .collect()
    }

    pub fn encode_groups(&self, x_t: &Mat) -> Result<Vec<Mat>> {
        self.check_inputs(x_t, None)?;
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let p = Bind { store: &self.params, trainable: false };
        let parts = self.encode_groups_graph(&mut tape, p, x);
        Ok(parts.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Fused encoding `E(x_t)` with positional encoding, `k × H`.
    pub fn encode(&self, x_t: &Mat) -> Result<Mat> {
        self.check_inputs(x_t, None)?;
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let p = Bind { store: &self.params, trainable: false };
        let h = self.encode_graph(&mut tape, p, x);
        Ok(tape.value(h).clone())
    }

    fn encode_graph(&self, tape: &mut Tape, p: Bind, x: Var) -> Var {
        let parts = self.encode_groups_graph(tape, p, x);
        let cat = tape.concat_cols(&parts);
        let w = p.var(tape, "enc.fuse.w");
        let b = p.var(tape, "enc.fuse.b");
        let h = tape.linear(cat, w, b);
        let k = tape.value(h).rows();
        let pe = Mat::from_fn(k, self.config.hidden, |r, c| sinusoid(r as f64, self.config.hidden)[c]);
        let pe = tape.constant(pe);
        tape.add(h, pe)
    }

    fn time_graph(&self, tape: &mut Tape, p: Bind, t: usize) -> Var {
        let e = tape.constant(Mat::row_vector(&sinusoid(t as f64, self.config.hidden)));
        let w1 = p.var(tape, "time.w1");
        let b1 = p.var(tape, "time.b1");
        let w2 = p.var(tape, "time.w2");
        let b2 = p.var(tape, "time.b2");
        let h = tape.linear(e, w1, b1);
        let h = tape.silu(h);
        tape.linear(h, w2, b2)
    }

    /// Full graph; `branch` carries the control branch and its projected text.
    pub(crate) fn graph(
        &self,
        tape: &mut Tape,
        p: Bind,
        branch: Option<(&ControlBranch, Bind, &Mat)>,
        x: Var,
        t: usize,
        music: Option<&Mat>,
    ) -> Var {
        let temb = self.time_graph(tape, p, t);
        let cond = match music {
            Some(m) => tape.constant(m.clone()),
            None => p.var(tape, "music_null"),
        };
        let text_cond = branch.map(|(_, bp, text)| {
            let tokens = tape.constant(text.clone());
            let w = bp.var(tape, "text.proj.w");
            let b = bp.var(tape, "text.proj.b");
            tape.linear(tokens, w, b)
        });
        let mut h = self.encode_graph(tape, p, x);
        for l in 0..self.config.layers {
            let prefix = format!("blk{l}");
            let main = block(tape, p, &prefix, h, cond, temb);
            h = match (branch, text_cond) {
                (Some((cb, bp, _)), Some(ctext)) if l < cb.blocks => {
                    let side = block(tape, bp, &prefix, h, ctext, temb);
                    let z = bp.var(tape, &format!("z{l}"));
                    let delta = tape.matmul(side, z);
                    tape.add(main, delta)
                }
                _ => main,
            };
        }
        let w = p.var(tape, "out.w");
        let b = p.var(tape, "out.b");
        tape.linear(h, w, b)
    }

    /// `x̂0 = D(E(x_t), t, c_M)` in normalised space. `None` uses the null music condition.
    pub fn forward(&self, x_t: &Mat, t: usize, music: Option<&Mat>) -> Result<Mat> {
        self.check_inputs(x_t, music)?;
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let p = Bind { store: &self.params, trainable: false };
        let out = self.graph(&mut tape, p, None, x, t, music);
        Ok(tape.value(out).clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BackboneFile {
            config: self.config.clone(),
            norm: self.norm.clone(),
            digest: self.digest(),
            tensors: self.params.to_json_value(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BackboneFile = serde_json::from_str(text)?;
        let params = ParamStore::from_json_value(file.tensors)?;
        let mut model = Self::new(file.config, file.norm)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Schema("backbone tensors do not match the configured architecture".into()));
        }
        model.params = params;
        if model.digest() != file.digest {
            return Err(Error::Schema("backbone checkpoint digest does not match its tensors".into()));
        }
        Ok(model)
    }
}

/// Text-conditioned residual branch over the first `blocks` backbone blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBranch {
    pub(crate) blocks: usize,
    pub(crate) params: ParamStore,
    backbone_digest: String,
}

impl ControlBranch {
    /// Clone the first K blocks, add a text projector and all-zero residual projections.
    pub fn from_backbone(backbone: &Backbone) -> Result<Self> {
        let cfg = backbone.config();
        let blocks = cfg.control_blocks();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(cfg.seed, &[0xC0B]));
        let mut p = ParamStore::new();
        for l in 0..blocks {
            for name in BLOCK_PARAMS {
                let full = format!("blk{l}.{name}");
                p.insert(full.clone(), backbone.params.get(&full).expect("backbone block parameter").clone());
            }
        }
        p.insert_linear_weight("text.proj.w", cfg.text_dim, cfg.cond_dim, &mut rng);
        p.insert("text.proj.b", Mat::zeros(1, cfg.cond_dim));
        for l in 0..blocks {
            p.insert(format!("z{l}"), Mat::zeros(cfg.hidden, cfg.hidden));
        }
        Ok(Self { blocks, params: p, backbone_digest: backbone.digest() })
    }

    /// Same branch with replacement parameters.
    pub fn with_params(&self, params: ParamStore) -> Result<Self> {
        if !self.params.same_layout(&params) {
            return Err(Error::Schema("parameters do not match the control branch".into()));
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn backbone_digest(&self) -> &str {
        &self.backbone_digest
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub(crate) fn check(&self, backbone: &Backbone, text: Option<&Mat>) -> Result<()> {
        if self.backbone_digest != backbone.digest() {
            return Err(Error::InvalidArgument("control branch was built for a different backbone".into()));
        }
        if let Some(t) = text {
            if t.cols() != backbone.config().text_dim || t.rows() == 0 {
                return Err(Error::dim("text condition columns", backbone.config().text_dim, t.cols()));
            }
        }
        Ok(())
    }

    /// Backbone forward with branch residuals on the first K blocks; `None` text bypasses the branch.
    pub fn controlled_forward(&self, backbone: &Backbone, x_t: &Mat, t: usize, music: Option<&Mat>, text: Option<&Mat>) -> Result<Mat> {
        backbone.check_inputs(x_t, music)?;
        self.check(backbone, text)?;
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let p = Bind { store: &backbone.params, trainable: false };
        let bp = Bind { store: &self.params, trainable: false };
        let out = backbone.graph(&mut tape, p, text.map(|m| (self, bp, m)), x, t, music);
        Ok(tape.value(out).clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BranchFile {
            backbone_digest: self.backbone_digest.clone(),
            blocks: self.blocks,
            digest: self.digest(),
            tensors: self.params.to_json_value(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Load a branch and check it belongs to `backbone`.
    pub fn from_json(text: &str, backbone: &Backbone) -> Result<Self> {
        let file: BranchFile = serde_json::from_str(text)?;
        let params = ParamStore::from_json_value(file.tensors)?;
        let fresh = Self::from_backbone(backbone)?;
        if file.blocks != fresh.blocks || !fresh.params.same_layout(&params) {
            return Err(Error::Schema("control branch tensors do not match the backbone".into()));
        }
        if file.backbone_digest != fresh.backbone_digest {
            return Err(Error::Schema("control branch was trained against a different backbone".into()));
        }
        let branch = Self { blocks: file.blocks, params, backbone_digest: file.backbone_digest };
        if branch.digest() != file.digest {
            return Err(Error::Schema("control branch digest does not match its tensors".into()));
        }
        Ok(branch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny() -> ModelConfig {
        ModelConfig { frames: 6, hidden: 8, cond_dim: 8, group_hidden: 4, layers: 2, ..ModelConfig::default() }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn forward_preserves_shape_and_is_deterministic() {
        let cfg = tiny();
        let m = Backbone::new(cfg.clone(), DataNorm::identity(46)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 6, 46);
        let c = random(&mut rng, 6, 8);
        let a = m.forward(&x, 3, Some(&c)).unwrap();
        assert_eq!(a.shape(), (6, 46));
        assert!(a.all_finite());
        assert_eq!(a, m.forward(&x, 3, Some(&c)).unwrap());
        assert_ne!(a, m.forward(&x, 3, None).unwrap());
        assert!(m.forward(&Mat::zeros(5, 46), 3, None).is_err());
        assert!(m.forward(&x, 3, Some(&Mat::zeros(6, 7))).is_err());
    }

    #[test]
    fn group_permutation_only_touches_its_group() {
        let mut m = Backbone::new(tiny(), DataNorm::identity(46)).unwrap();
        let layout = ChannelLayout::compact();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 6, 46);
        let base = m.encode_groups(&x).unwrap();
        for (g, chans) in layout.groups().iter().enumerate() {
            let mut y = x.clone();
            for r in 0..6 {
                let vals: Vec<f64> = chans.iter().map(|&c| x.get(r, c)).collect();
                for (i, &c) in chans.iter().enumerate() {
                    y.set(r, c, vals[(i + 1) % vals.len()]);
                }
            }
            let out = m.encode_groups(&y).unwrap();
            for (j, (a, b)) in base.iter().zip(&out).enumerate() {
                assert_eq!(a == b, j != g, "group {g} permutation vs group {j}");
            }
        }
        *m.params.get_mut("enc.fuse.w").unwrap() = Mat::zeros(4 * 7, 8);
        let mut y = x.clone();
        y.set(0, 0, 5.0);
        assert_eq!(m.encode(&x).unwrap(), m.encode(&y).unwrap());
    }

    #[test]
    fn fresh_branch_preserves_backbone_exactly() {
        let m = Backbone::new(tiny(), DataNorm::identity(46)).unwrap();
        let b = ControlBranch::from_backbone(&m).unwrap();
        assert_eq!(b.blocks(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10 {
            let x = random(&mut rng, 6, 46);
            let c = random(&mut rng, 6, 8);
            let txt = random(&mut rng, 3, 32);
            let music = if i % 2 == 0 { Some(&c) } else { None };
            let plain = m.forward(&x, 1 + i, music).unwrap();
            assert_eq!(plain, b.controlled_forward(&m, &x, 1 + i, music, Some(&txt)).unwrap());
            assert_eq!(plain, b.controlled_forward(&m, &x, 1 + i, music, None).unwrap());
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let m = Backbone::new(tiny(), DataNorm::identity(46)).unwrap();
        let back = Backbone::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let b = ControlBranch::from_backbone(&m).unwrap();
        assert_eq!(ControlBranch::from_json(&b.to_json().unwrap(), &m).unwrap(), b);
        let other = Backbone::new(ModelConfig { seed: 9, ..tiny() }, DataNorm::identity(46)).unwrap();
        assert!(ControlBranch::from_json(&b.to_json().unwrap(), &other).is_err());
        let tampered = m.to_json().unwrap().replacen("\"digest\":\"", "\"digest\":\"0", 1);
        assert!(Backbone::from_json(&tampered).is_err());
    }
}
