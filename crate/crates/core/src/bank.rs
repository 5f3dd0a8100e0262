//! Motion-centred banks: frozen motion-embedding indices carrying the paired
//! condition as payload, exhaustive cosine retrieval with a null fallback,
//! and pseudo-triplet assembly.

use serde::{Deserialize, Serialize};

use crate::align::AlignmentSpace;
use crate::conditions::{CorpusKind, PairedItem};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::motion::MotionClip;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BankKind {
    /// Music–dance: payload is music features.
    #[serde(rename = "MD")]
    Md,
    /// Text–motion: payload is a description.
    #[serde(rename = "TM")]
    Tm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Music { features: Mat, genre: String },
    Text { description: String, genre: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub embedding: Vec<f64>,
    pub payload: Payload,
    pub source_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bank {
    kind: BankKind,
    dim: usize,
    threshold: f64,
    entries: Vec<BankEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieved<'a> {
    pub index: usize,
    pub source_id: usize,
    pub similarity: f64,
    pub payload: &'a Payload,
}

impl Bank {
    /// Assemble a bank from precomputed entries.
    pub fn from_entries(kind: BankKind, threshold: f64, entries: Vec<BankEntry>) -> Result<Self> {
        let first = entries.first().ok_or(Error::Empty("bank"))?;
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!("similarity threshold {threshold} outside (0, 1]")));
        }
        let dim = first.embedding.len();
        for e in &entries {
            if e.embedding.len() != dim {
                return Err(Error::dim("bank embedding", dim, e.embedding.len()));
            }
            if (norm(&e.embedding) - 1.0).abs() > 1e-6 {
                return Err(Error::Schema(format!("bank entry {} is not unit-norm", e.source_id)));
            }
            let matches = matches!(
                (kind, &e.payload),
                (BankKind::Md, Payload::Music { .. }) | (BankKind::Tm, Payload::Text { .. })
            );
            if !matches {
                return Err(Error::KindMismatch(format!("{kind:?} bank given a foreign payload")));
            }
        }
        Ok(Self { kind, dim, threshold, entries })
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::from_entries(self.kind, threshold, self.entries.clone())
    }

    /// Best entry by cosine similarity before thresholding; ties go to the lowest source id.
    pub fn top1(&self, query: &[f64]) -> Result<Retrieved<'_>> {
        if self.entries.is_empty() {
            return Err(Error::Empty("bank"));
        }
        if query.len() != self.dim {
            return Err(Error::dim("bank query", self.dim, query.len()));
        }
        let qn = norm(query);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let s = dot(query, &e.embedding) / qn;
            let better = match best {
                None => true,
                Some((b, bs)) => s > bs || (s == bs && e.source_id < self.entries[b].source_id),
            };
            if better {
                best = Some((i, s));
            }
        }
        let (index, similarity) = best.expect("non-empty bank");
        let e = &self.entries[index];
        Ok(Retrieved { index, source_id: e.source_id, similarity, payload: &e.payload })
    }

    /// Top-1 entry, or `None` when its similarity is below the threshold.
    pub fn retrieve(&self, query: &[f64]) -> Result<Option<Retrieved<'_>>> {
        let hit = self.top1(query)?;
        Ok((hit.similarity >= self.threshold).then_some(hit))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Bank = serde_json::from_str(text)?;
        let bank = Self::from_entries(raw.kind, raw.threshold, raw.entries)?;
        if bank.dim != raw.dim {
            return Err(Error::dim("bank file dim", raw.dim, bank.dim));
        }
        Ok(bank)
    }
}

/// Index a corpus by the frozen key-side motion embedding.
pub fn build_bank(corpus: &[PairedItem], space: &AlignmentSpace, kind: BankKind, threshold: f64) -> Result<Bank> {
    if corpus.is_empty() {
        return Err(Error::Empty("bank corpus"));
    }
    let entries = corpus
        .iter()
        .map(|item| {
            let payload = match kind {
                BankKind::Md => Payload::Music {
                    features: item
                        .music
                        .clone()
                        .ok_or_else(|| Error::KindMismatch(format!("item {} has no music for an MD bank", item.source_id)))?,
                    genre: item.genre.clone(),
                },
                BankKind::Tm => Payload::Text {
                    description: item
                        .text
                        .clone()
                        .ok_or_else(|| Error::KindMismatch(format!("item {} has no text for a TM bank", item.source_id)))?,
                    genre: item.genre.clone(),
                },
            };
            Ok(BankEntry { embedding: space.embed_motion(item)?, payload, source_id: item.source_id })
        })
        .collect::<Result<Vec<_>>>()?;
    Bank::from_entries(kind, threshold, entries)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    NativePair,
    Retrieved,
    NullFilled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoTriplet {
    pub source_id: usize,
    pub motion: MotionClip,
    pub music: Option<Mat>,
    pub text: Option<String>,
    pub music_provenance: Provenance,
    pub text_provenance: Provenance,
    pub similarity: Option<f64>,
}

/// Compose the instruction for a music–dance item from a retrieved description.
pub fn compose_instruction(description: &str, genre: &str) -> String {
    format!("{description}, {genre}")
}

/// Impute the missing condition of each item from the opposite bank.
///
/// Text–motion items receive music from the MD bank; music–dance items
/// receive `"<description>, <genre>"` from the TM bank. Sub-threshold
/// retrievals become null conditions.
pub fn make_pseudo_triplets(
    batch: &[PairedItem],
    source_kind: CorpusKind,
    bank_md: &Bank,
    bank_tm: &Bank,
    space: &AlignmentSpace,
) -> Result<Vec<PseudoTriplet>> {
    if bank_md.kind() != BankKind::Md || bank_tm.kind() != BankKind::Tm {
        return Err(Error::KindMismatch("expected an MD bank and a TM bank".into()));
    }
    let queries = batch.iter().map(|i| space.embed_motion(i)).collect::<Result<Vec<_>>>()?;
    assemble_triplets(batch, &queries, source_kind, bank_md, bank_tm)
}

/// As [`make_pseudo_triplets`] with precomputed motion embeddings.
pub fn assemble_triplets(
    batch: &[PairedItem],
    queries: &[Vec<f64>],
    source_kind: CorpusKind,
    bank_md: &Bank,
    bank_tm: &Bank,
) -> Result<Vec<PseudoTriplet>> {
    if bank_md.kind() != BankKind::Md || bank_tm.kind() != BankKind::Tm {
        return Err(Error::KindMismatch("expected an MD bank and a TM bank".into()));
    }
    if batch.len() != queries.len() {
        return Err(Error::dim("pseudo-triplet queries", batch.len(), queries.len()));
    }
    batch
        .iter()
        .zip(queries)
        .map(|(item, q)| match source_kind {
            CorpusKind::TextMotion => {
                let text = item
                    .text
                    .clone()
                    .ok_or_else(|| Error::KindMismatch(format!("item {} is not a text–motion pair", item.source_id)))?;
                let hit = bank_md.retrieve(q)?;
                let (music, prov, sim) = match hit {
                    Some(Retrieved { payload: Payload::Music { features, .. }, similarity, .. }) => {
                        (Some(features.clone()), Provenance::Retrieved, Some(similarity))
                    }
                    Some(_) => return Err(Error::KindMismatch("MD bank returned a text payload".into())),
                    None => (None, Provenance::NullFilled, None),
                };
                Ok(PseudoTriplet {
                    source_id: item.source_id,
                    motion: item.clip.clone(),
                    music,
                    text: Some(text),
                    music_provenance: prov,
                    text_provenance: Provenance::NativePair,
                    similarity: sim,
                })
            }
            CorpusKind::MusicDance => {
                let music = item
                    .music
                    .clone()
                    .ok_or_else(|| Error::KindMismatch(format!("item {} is not a music–dance pair", item.source_id)))?;
                let hit = bank_tm.retrieve(q)?;
                let (text, prov, sim) = match hit {
                    Some(Retrieved { payload: Payload::Text { description, .. }, similarity, .. }) => {
                        (Some(compose_instruction(description, &item.genre)), Provenance::Retrieved, Some(similarity))
                    }
                    Some(_) => return Err(Error::KindMismatch("TM bank returned a music payload".into())),
                    None => (None, Provenance::NullFilled, None),
                };
                Ok(PseudoTriplet {
                    source_id: item.source_id,
                    motion: item.clip.clone(),
                    music: Some(music),
                    text,
                    music_provenance: Provenance::NativePair,
                    text_provenance: prov,
                    similarity: sim,
                })
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub min: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear interpolation between order statistics at position `p·(n−1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn percentiles(values: &[f64]) -> Result<Percentiles> {
    if values.is_empty() {
        return Err(Error::Empty("similarity list"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Percentiles {
        min: s[0],
        p10: percentile(&s, 0.1),
        median: percentile(&s, 0.5),
        p90: percentile(&s, 0.9),
        max: s[s.len() - 1],
        mean: s.iter().sum::<f64>() / s.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    pub direction: String,
    pub queries: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub null_replaced_rate: f64,
    pub similarity: Percentiles,
}

impl DirectionStats {
    /// Statistics of raw top-1 similarities at threshold `tau`.
    pub fn from_similarities(direction: impl Into<String>, sims: &[f64], tau: f64) -> Result<Self> {
        let accepted = sims.iter().filter(|&&s| s >= tau).count();
        let acceptance_rate = accepted as f64 / sims.len().max(1) as f64;
        Ok(Self {
            direction: direction.into(),
            queries: sims.len(),
            accepted,
            acceptance_rate,
            null_replaced_rate: 1.0 - acceptance_rate,
            similarity: percentiles(sims)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub threshold: f64,
    pub directions: Vec<DirectionStats>,
}

/// Retrieval quality in both directions: `queries_a` against `bank_a`, `queries_b` against `bank_b`.
pub fn retrieval_stats(
    bank_a: &Bank,
    bank_b: &Bank,
    queries_a: &[Vec<f64>],
    queries_b: &[Vec<f64>],
    tau: f64,
) -> Result<RetrievalStats> {
    if queries_a.is_empty() || queries_b.is_empty() {
        return Err(Error::Empty("retrieval query set"));
    }
    let name = |b: &Bank| match b.kind() {
        BankKind::Md => "query→MD",
        BankKind::Tm => "query→TM",
    };
    let mut directions = Vec::with_capacity(2);
    for (bank, queries) in [(bank_a, queries_a), (bank_b, queries_b)] {
        let sims = queries.iter().map(|q| Ok(bank.top1(q)?.similarity)).collect::<Result<Vec<f64>>>()?;
        directions.push(DirectionStats::from_similarities(name(bank), &sims, tau)?);
    }
    Ok(RetrievalStats { threshold: tau, directions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: Vec<f64>, id: usize) -> BankEntry {
        BankEntry { embedding: v, payload: Payload::Text { description: format!("d{id}"), genre: "jazz".into() }, source_id: id }
    }

    #[test]
    fn constructed_threshold_example() {
        // Query e = (1, 0, 0); entries at cosine 0.85 and 0.79.
        let a = vec![0.85, (1.0f64 - 0.85 * 0.85).sqrt(), 0.0];
        let b = vec![0.79, 0.0, (1.0f64 - 0.79 * 0.79).sqrt()];
        let bank = Bank::from_entries(BankKind::Tm, 0.8, vec![entry(b, 2), entry(a, 1)]).unwrap();
        let hit = bank.retrieve(&[1.0, 0.0, 0.0]).unwrap().unwrap();
        assert_eq!(hit.source_id, 1);
        assert!((hit.similarity - 0.85).abs() < 1e-15);
        assert!(bank.retrieve(&[0.0, -1.0, 0.0]).unwrap().is_none());
    }

    #[test]
    fn self_retrieval_and_ties() {
        let e = vec![0.6, 0.8];
        let bank = Bank::from_entries(BankKind::Tm, 0.8, vec![entry(e.clone(), 9), entry(e.clone(), 4)]).unwrap();
        let hit = bank.retrieve(&e).unwrap().unwrap();
        assert_eq!(hit.source_id, 4);
        assert!((hit.similarity - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bank_validation() {
        assert!(Bank::from_entries(BankKind::Tm, 0.8, vec![]).is_err());
        assert!(Bank::from_entries(BankKind::Tm, 0.8, vec![entry(vec![2.0, 0.0], 0)]).is_err());
        assert!(matches!(
            Bank::from_entries(BankKind::Md, 0.8, vec![entry(vec![1.0, 0.0], 0)]),
            Err(Error::KindMismatch(_))
        ));
        let bank = Bank::from_entries(BankKind::Tm, 0.8, vec![entry(vec![1.0, 0.0], 0)]).unwrap();
        assert_eq!(Bank::from_json(&bank.to_json().unwrap()).unwrap(), bank);
    }

    #[test]
    fn percentile_fixture() {
        let s = DirectionStats::from_similarities("x", &[0.9, 0.7, 0.95, 0.85], 0.8).unwrap();
        assert_eq!(s.acceptance_rate, 0.75);
        assert_eq!(s.acceptance_rate + s.null_replaced_rate, 1.0);
        assert!((s.similarity.median - 0.875).abs() < 1e-15);
        assert_eq!(s.similarity.min, 0.7);
        assert_eq!(s.similarity.max, 0.95);
    }

    #[test]
    fn composition_contract() {
        assert_eq!(compose_instruction("walk forward", "popping"), "walk forward, popping");
    }
}
