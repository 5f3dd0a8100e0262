//! Kinematic primitive success: predicates, the prompted/null protocol and
//! auxiliary motion metrics.

pub mod generators;
pub mod metrics;
pub mod predicates;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::motion::JointSequence;
use crate::seed;
use crate::synth::Primitive;

pub use generators::{ConditionedGenerator, MusicOnlyGenerator, OracleGenerator};
pub use metrics::{beat_alignment_score, diversity, kinematic_beats, DEFAULT_BAS_SIGMA_S};
pub use predicates::{eval_predicate, evaluate, evaluate_all, Family, PredicateResult, PredicateThresholds};

pub const DEFAULT_R: usize = 10;
pub const DEFAULT_G: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpsConfig {
    pub r: usize,
    pub g: usize,
    pub seed: u64,
    pub thresholds: PredicateThresholds,
}

impl Default for KpsConfig {
    fn default() -> Self {
        Self { r: DEFAULT_R, g: DEFAULT_G, seed: 0, thresholds: PredicateThresholds::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub prompt_rate: f64,
    pub null_rate: f64,
    pub lift: f64,
}

impl Rates {
    pub fn new(prompt_rate: f64, null_rate: f64) -> Self {
        Self { prompt_rate, null_rate, lift: prompt_rate - null_rate }
    }

    /// Arithmetic means of the member rates; the lift is recomputed from them.
    pub fn mean_of(rows: &[Rates]) -> Self {
        let n = rows.len() as f64;
        Self::new(
            rows.iter().map(|r| r.prompt_rate).sum::<f64>() / n,
            rows.iter().map(|r| r.null_rate).sum::<f64>() / n,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRow {
    pub primitive: String,
    pub prompt: String,
    pub family: Family,
    #[serde(flatten)]
    pub rates: Rates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub family: Family,
    pub members: Vec<String>,
    #[serde(flatten)]
    pub rates: Rates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpsReport {
    pub primitives: Vec<PrimitiveRow>,
    pub families: Vec<FamilyRow>,
    pub macro_average: Rates,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "G")]
    pub g: usize,
    pub seed: u64,
}

impl KpsReport {
    pub fn row(&self, primitive: &str) -> Option<&PrimitiveRow> {
        self.primitives.iter().find(|r| r.primitive == primitive)
    }

    pub fn family(&self, family: Family) -> Option<&FamilyRow> {
        self.families.iter().find(|r| r.family == family)
    }
}

/// Seed shared by the prompted and null generation of one trial.
pub fn trial_seed(root: u64, group: usize, prompt: usize, replicate: usize) -> u64 {
    seed::derive(root, &[group as u64, prompt as u64, replicate as u64])
}

/// A generated sample whose body frame cannot be recovered counts as a miss.
fn scored(primitive: Primitive, seq: &JointSequence, th: &PredicateThresholds) -> Result<bool> {
    match predicates::evaluate(primitive, seq, th) {
        Ok(r) => Ok(r.passed),
        Err(e @ (Error::AmbiguousAxes | Error::DegenerateYaw { .. })) => {
            log::warn!("{primitive:?} scored as a miss: {e}");
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// Prompted versus null-text success for each prompt. A prompt names the
/// predicate it is scored by.
pub fn run_kps(
    gen: &dyn ConditionedGenerator,
    prompts: &[String],
    music_pool: &[Mat],
    config: &KpsConfig,
) -> Result<KpsReport> {
    if config.r == 0 || config.g == 0 {
        return Err(Error::InvalidArgument("R and G must be at least 1".into()));
    }
    if prompts.is_empty() {
        return Err(Error::Empty("prompt list"));
    }
    if music_pool.is_empty() {
        return Err(Error::Empty("music pool"));
    }
    config.thresholds.validate()?;
    let primitives = prompts
        .iter()
        .map(|p| predicates::predicate_primitive(p.trim()))
        .collect::<Result<Vec<_>>>()?;

    let trials = (config.r * config.g) as f64;
    let mut rows = Vec::with_capacity(prompts.len());
    for (pi, (prompt, &primitive)) in prompts.iter().zip(&primitives).enumerate() {
        let (mut hits_prompt, mut hits_null) = (0usize, 0usize);
        for g in 0..config.g {
            let wrap = |e: Error| Error::Generator { group: g, prompt: prompt.clone(), source: Box::new(e) };
            let mut pick = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[g as u64, pi as u64, u64::MAX]));
            let music = &music_pool[pick.gen_range(0..music_pool.len())];
            for r in 0..config.r {
                let s = trial_seed(config.seed, g, pi, r);
                let prompted = gen.generate(music, Some(prompt), s).map_err(wrap)?;
                let null = gen.generate(music, None, s).map_err(wrap)?;
                hits_prompt += scored(primitive, &prompted, &config.thresholds)? as usize;
                hits_null += scored(primitive, &null, &config.thresholds)? as usize;
            }
        }
        rows.push(PrimitiveRow {
            primitive: primitive.as_str().to_string(),
            prompt: prompt.clone(),
            family: Family::of(primitive).expect("scored primitive"),
            rates: Rates::new(hits_prompt as f64 / trials, hits_null as f64 / trials),
        });
    }

    let families = Family::ALL
        .iter()
        .filter_map(|&family| {
            let members: Vec<&PrimitiveRow> = rows.iter().filter(|r| r.family == family).collect();
            if members.is_empty() {
                return None;
            }
            let rates: Vec<Rates> = members.iter().map(|r| r.rates).collect();
            Some(FamilyRow {
                family,
                members: members.iter().map(|r| r.primitive.clone()).collect(),
                rates: Rates::mean_of(&rates),
            })
        })
        .collect();
    let all: Vec<Rates> = rows.iter().map(|r| r.rates).collect();
    Ok(KpsReport {
        macro_average: Rates::mean_of(&all),
        primitives: rows,
        families,
        r: config.r,
        g: config.g,
        seed: config.seed,
    })
}

/// The eight scored primitive names, in table order.
pub fn default_prompts() -> Vec<String> {
    crate::synth::Primitive::SCORED.iter().map(|p| p.as_str().to_string()).collect()
}
