use choreo_core::bank::{PseudoTriplet, Provenance};
use choreo_core::conditions::{paired_corpus, text_tokens, CorpusConfig, CorpusKind};
use choreo_core::diffusion::*;
use choreo_core::linalg::Mat;
use choreo_core::motion::MotionClip;
use choreo_core::nn::gradient_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig { frames: 6, hidden: 8, cond_dim: 8, group_hidden: 4, layers: 2, ..ModelConfig::default() }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn short_clips(n: usize) -> Vec<MotionClip> {
    let cfg = CorpusConfig { size: n, duration_s: 1.0, ..CorpusConfig::default() };
    paired_corpus(CorpusKind::TextMotion, &cfg, 0)
        .unwrap()
        .into_iter()
        .map(|i| MotionClip::new(30, i.clip.features().slice_rows(0, 6)).unwrap())
        .collect()
}

fn tiny_backbone() -> Backbone {
    let clips = short_clips(8);
    let feats: Vec<&Mat> = clips.iter().map(MotionClip::features).collect();
    let norm = DataNorm::fit(&feats).unwrap();
    let bb = Backbone::new(tiny(), norm).unwrap();
    // Nonzero FiLM so its gradients are exercised too.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut p = bb.params().clone();
    for name in p.names().to_vec() {
        if name.contains("film") {
            let m = p.get_mut(&name).unwrap();
            *m = Mat::from_fn(m.rows(), m.cols(), |_, _| rng.gen_range(-0.3..0.3));
        }
    }
    bb.with_params(p).unwrap()
}

fn triplets(bb: &Backbone, with_music: bool, with_text: bool, seed: u64) -> Vec<PseudoTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    short_clips(6)
        .into_iter()
        .enumerate()
        .map(|(i, motion)| PseudoTriplet {
            source_id: i,
            motion,
            music: with_music.then(|| random(&mut rng, 6, bb.config().cond_dim)),
            text: with_text.then(|| format!("walk gently {i}")),
            music_provenance: if with_music { Provenance::NativePair } else { Provenance::NullFilled },
            text_provenance: if with_text { Provenance::Retrieved } else { Provenance::NullFilled },
            similarity: Some(0.9),
        })
        .collect()
}

fn coords(store: &choreo_core::nn::ParamStore, rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let slot = rng.gen_range(0..store.len());
            (slot, rng.gen_range(0..store.get_at(slot).len()))
        })
        .collect()
}

#[test]
fn backbone_gradients_match_finite_differences() {
    let bb = tiny_backbone();
    let sched = NoiseSchedule::cosine(50).unwrap();
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clip = bb.norm().normalize(short_clips(1)[0].features());
    for trial in 0..3 {
        let eps = random(&mut rng, 6, 46);
        let music = random(&mut rng, 6, 8);
        let m = (trial != 1).then_some(&music);
        let t = 1 + trial * 20;
        let (_, grads) = backbone_gradients(&bb, &clip, t, &eps, m, &sched, &weights).unwrap();
        let pts = coords(bb.params(), &mut rng, 15);
        let err = gradient_check(bb.params(), &grads, &pts, 1e-5, 1e-6, |p| {
            backbone_gradients(&bb.with_params(p.clone()).unwrap(), &clip, t, &eps, m, &sched, &weights).unwrap().0.total
        });
        assert!(err < 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn branch_gradients_match_finite_differences() {
    let bb = tiny_backbone();
    let fresh = ControlBranch::from_backbone(&bb).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = fresh.params().clone();
    let z = p.get_mut("z0").unwrap();
    *z = random(&mut rng, 8, 8).scale(0.3);
    let branch = fresh.with_params(p).unwrap();
    let sched = NoiseSchedule::cosine(50).unwrap();
    let weights = LossWeights::default();
    let clip = bb.norm().normalize(short_clips(2)[1].features());
    let text = text_tokens("kick strongly hiphop").unwrap();
    let eps = random(&mut rng, 6, 46);
    let music = random(&mut rng, 6, 8);
    let (_, grads) = branch_gradients(&bb, &branch, &text, &clip, 17, &eps, Some(&music), &sched, &weights).unwrap();
    let pts = coords(branch.params(), &mut rng, 20);
    let err = gradient_check(branch.params(), &grads, &pts, 1e-5, 1e-6, |p| {
        let b = branch.with_params(p.clone()).unwrap();
        branch_gradients(&bb, &b, &text, &clip, 17, &eps, Some(&music), &sched, &weights).unwrap().0.total
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn finetune_moves_branch_and_leaves_backbone() {
    let bb = tiny_backbone();
    let before = bb.digest();
    let branch = ControlBranch::from_backbone(&bb).unwrap();
    let td = triplets(&bb, false, true, 1);
    let md = triplets(&bb, true, true, 2);
    let cfg = FinetuneConfig { steps: 1, diffusion_steps: 50, ..FinetuneConfig::default() };
    let (tuned, trace) = finetune_control(&bb, branch.clone(), &td, &md, &cfg).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(bb.digest(), before);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, 6, 46);
    let text = text_tokens("walk").unwrap();
    let plain = bb.forward(&x, 10, None).unwrap();
    let moved = tuned.controlled_forward(&bb, &x, 10, None, Some(&text)).unwrap();
    assert!(plain.max_abs_diff(&moved) > 0.0);
    assert_eq!(branch.controlled_forward(&bb, &x, 10, None, Some(&text)).unwrap(), plain);
}

#[test]
fn lambda_endpoints_select_one_stream() {
    let bb = tiny_backbone();
    let td = triplets(&bb, false, true, 3);
    let md = triplets(&bb, true, false, 4);
    for (lambda, pick) in [(0.0, 0), (1.0, 1)] {
        let weights = LossWeights { lambda_p: lambda, ..LossWeights::default() };
        let cfg = FinetuneConfig { steps: 4, weights, ..FinetuneConfig::default() };
        let (_, trace) = finetune_control(&bb, ControlBranch::from_backbone(&bb).unwrap(), &td, &md, &cfg).unwrap();
        for s in &trace {
            let want = if pick == 0 { s.l_text } else { s.l_dance };
            assert_eq!(s.combined, want);
        }
    }
}

#[test]
fn finetune_rejects_a_foreign_branch() {
    let bb = tiny_backbone();
    let other = Backbone::new(ModelConfig { seed: 4, ..tiny() }, bb.norm().clone()).unwrap();
    let branch = ControlBranch::from_backbone(&other).unwrap();
    let td = triplets(&bb, false, true, 1);
    assert!(finetune_control(&bb, branch, &td, &td, &FinetuneConfig::default()).is_err());
}

#[test]
fn backbone_training_is_deterministic() {
    let cfg = CorpusConfig { size: 8, ..CorpusConfig::default() };
    let corpus = paired_corpus(CorpusKind::MusicDance, &cfg, 0).unwrap();
    let model = ModelConfig { hidden: 8, group_hidden: 4, layers: 2, ..ModelConfig::default() };
    let train = TrainConfig { steps: 5, ..TrainConfig::default() };
    let (a, ta) = train_backbone(&corpus, &model, &train).unwrap();
    let (b, tb) = train_backbone(&corpus, &model, &train).unwrap();
    assert_eq!(ta.len(), 5);
    assert_eq!(ta, tb);
    assert_eq!(a.digest(), b.digest());
    let text = paired_corpus(CorpusKind::TextMotion, &cfg, 0).unwrap();
    assert!(train_backbone(&text, &model, &train).is_err());
}

#[test]
fn sampling_contracts() {
    let bb = tiny_backbone();
    let branch = ControlBranch::from_backbone(&bb).unwrap();
    let td = triplets(&bb, false, true, 1);
    let md = triplets(&bb, true, true, 2);
    let cfg = FinetuneConfig { steps: 3, ..FinetuneConfig::default() };
    let (tuned, _) = finetune_control(&bb, branch, &td, &md, &cfg).unwrap();
    let sched = NoiseSchedule::cosine(50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let music = random(&mut rng, 6, 8);
    let text = text_tokens("spin").unwrap();
    let opts = |s: f64| SampleOptions { music_scale: s, allow_unconditional: false };

    let a = cfg_sample(&bb, Some(&tuned), Some(&music), Some(&text), &sched, &opts(2.0), 3).unwrap();
    assert_eq!(a, cfg_sample(&bb, Some(&tuned), Some(&music), Some(&text), &sched, &opts(2.0), 3).unwrap());
    assert_ne!(a, cfg_sample(&bb, None, Some(&music), None, &sched, &opts(2.0), 3).unwrap());
    for s in [0.0, 1.0, 3.0] {
        assert_eq!(
            cfg_sample(&bb, Some(&tuned), Some(&music), None, &sched, &opts(s), 5).unwrap(),
            cfg_sample(&bb, None, Some(&music), None, &sched, &opts(s), 5).unwrap()
        );
    }
    let text_only = cfg_sample(&bb, Some(&tuned), None, Some(&text), &sched, &opts(3.0), 6).unwrap();
    assert!(text_only.features().all_finite());
    assert!(cfg_sample(&bb, Some(&tuned), None, None, &sched, &opts(3.0), 6).is_err());
    let uncond = SampleOptions { music_scale: 3.0, allow_unconditional: true };
    assert!(cfg_sample(&bb, Some(&tuned), None, None, &sched, &uncond, 6).is_ok());
    assert!(cfg_sample(&bb, None, Some(&music), None, &sched, &opts(-1.0), 6).is_err());
}
