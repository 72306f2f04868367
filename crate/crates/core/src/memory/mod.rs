//! Associative memory stream: scored storage, top-k retrieval and the
//! importance accumulator that drives reflection.
//!
//! Retrieval ranks every record by a weighted sum of three components, each
//! normalized to `[0, 1]` before weighting:
//!
//! * recency, an exponential half-life decay on ticks since last access,
//! * importance, the record's 1..=10 rating divided by ten,
//! * relevance, cosine similarity to the query mapped from `[-1, 1]`.
//!
//! Ties are broken by most recent tick, then by the higher id.

mod embedding;
mod reflection;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{heuristic_importance, HashEmbedder};
pub use reflection::{parse_insights, reflect, synthesize_reflection, ReflectionError, ReflectionSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Observation,
    Reflection,
    Plan,
    Speech,
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Observation => "observation",
            MemoryKind::Reflection => "reflection",
            MemoryKind::Plan => "plan",
            MemoryKind::Speech => "speech",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    pub tick: u64,
    pub kind: MemoryKind,
    pub text: String,
    pub importance: u8,
    pub embedding: Vec<f64>,
    pub last_access: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
    #[error("importance {0} is outside 1..=10")]
    ImportanceOutOfRange(u8),
    #[error("embedding has {actual} dimensions, store expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding contains a non-finite component")]
    NonFiniteEmbedding,
    #[error("last_access {last_access} precedes record tick {tick}")]
    AccessBeforeCreation { tick: u64, last_access: u64 },
    #[error("record id {0} already present")]
    DuplicateId(u64),
    #[error("store dimension must be positive")]
    ZeroDimension,
    #[error("retrieval weights must be finite, nonnegative and not all zero")]
    InvalidWeights,
    #[error("half-life must be positive and finite")]
    InvalidHalfLife,
}

/// Weights for the recency, importance and relevance components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct RetrievalWeights {
    recency: f64,
    importance: f64,
    relevance: f64,
}

impl RetrievalWeights {
    pub fn new(recency: f64, importance: f64, relevance: f64) -> Result<Self, MemoryError> {
        let all = [recency, importance, relevance];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|w| *w == 0.0) {
            return Err(MemoryError::InvalidWeights);
        }
        Ok(Self {
            recency,
            importance,
            relevance,
        })
    }

    pub fn recency(&self) -> f64 {
        self.recency
    }

    pub fn importance(&self) -> f64 {
        self.importance
    }

    pub fn relevance(&self) -> f64 {
        self.relevance
    }
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self {
            recency: 1.0 / 3.0,
            importance: 1.0 / 3.0,
            relevance: 1.0 / 3.0,
        }
    }
}

impl TryFrom<[f64; 3]> for RetrievalWeights {
    type Error = MemoryError;

    fn try_from(w: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(w[0], w[1], w[2])
    }
}

impl From<RetrievalWeights> for [f64; 3] {
    fn from(w: RetrievalWeights) -> Self {
        [w.recency, w.importance, w.relevance]
    }
}

/// Everything needed to score a record against a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scoring {
    pub weights: RetrievalWeights,
    half_life: f64,
}

impl Scoring {
    pub const DEFAULT_HALF_LIFE: f64 = 100.0;

    pub fn new(weights: RetrievalWeights, half_life: f64) -> Result<Self, MemoryError> {
        if !(half_life.is_finite() && half_life > 0.0) {
            return Err(MemoryError::InvalidHalfLife);
        }
        Ok(Self { weights, half_life })
    }

    pub fn half_life(&self) -> f64 {
        self.half_life
    }
}

impl Default for Scoring {
    fn default() -> Self {
        Self {
            weights: RetrievalWeights::default(),
            half_life: Self::DEFAULT_HALF_LIFE,
        }
    }
}

/// `0.5^(age / half_life)` where age counts ticks since last access.
pub fn recency_score(record: &MemoryRecord, now: u64, half_life: f64) -> f64 {
    let age = now.saturating_sub(record.last_access) as f64;
    0.5f64.powf(age / half_life)
}

/// Cosine similarity mapped onto `[0, 1]`; a zero vector scores 0.5.
pub fn relevance_score(record: &MemoryRecord, query: &[f64]) -> Result<f64, MemoryError> {
    if record.embedding.len() != query.len() {
        return Err(MemoryError::DimensionMismatch {
            expected: record.embedding.len(),
            actual: query.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in record.embedding.iter().zip(query) {
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.5);
    }
    let cosine = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok((cosine + 1.0) / 2.0)
}

pub fn retrieval_score(record: &MemoryRecord, query: &[f64], now: u64, scoring: &Scoring) -> Result<f64, MemoryError> {
    let w = &scoring.weights;
    let recency = recency_score(record, now, scoring.half_life);
    let importance = f64::from(record.importance) / 10.0;
    let relevance = relevance_score(record, query)?;
    Ok(w.recency * recency + w.importance * importance + w.relevance * relevance)
}

/// A record paired with the score it was retrieved at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMemory {
    pub record: MemoryRecord,
    pub score: f64,
}

/// Descending score, then most recent tick, then higher id.
pub fn rank_order(a_score: f64, a: &MemoryRecord, b_score: f64, b: &MemoryRecord) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| b.tick.cmp(&a.tick))
        .then_with(|| b.id.cmp(&a.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
    importance_accumulator: u32,
    dimension: usize,
    next_id: u64,
}

impl MemoryStore {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(dimension: usize) -> Result<Self, MemoryError> {
        if dimension == 0 {
            return Err(MemoryError::ZeroDimension);
        }
        Ok(Self {
            records: Vec::new(),
            importance_accumulator: 0,
            dimension,
            next_id: 1,
        })
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn importance_accumulator(&self) -> u32 {
        self.importance_accumulator
    }

    pub fn should_reflect(&self, reflection_threshold: u32) -> bool {
        self.importance_accumulator >= reflection_threshold
    }

    pub(crate) fn reset_accumulator(&mut self) {
        self.importance_accumulator = 0;
    }

    /// Id the next [`MemoryStore::record`] call will use.
    pub fn peek_next_id(&self) -> u64 {
        self.next_id
    }

    fn validate(&self, record: &MemoryRecord) -> Result<(), MemoryError> {
        if record.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if !(1..=10).contains(&record.importance) {
            return Err(MemoryError::ImportanceOutOfRange(record.importance));
        }
        if record.embedding.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                actual: record.embedding.len(),
            });
        }
        if record.embedding.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::NonFiniteEmbedding);
        }
        if record.last_access < record.tick {
            return Err(MemoryError::AccessBeforeCreation {
                tick: record.tick,
                last_access: record.last_access,
            });
        }
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(MemoryError::DuplicateId(record.id));
        }
        Ok(())
    }

    /// Inserts `record` keeping the store ordered by `(tick, id)`.
    pub fn append(&mut self, record: MemoryRecord) -> Result<(), MemoryError> {
        self.validate(&record)?;
        let key = (record.tick, record.id);
        let at = self.records.partition_point(|r| (r.tick, r.id) <= key);
        self.importance_accumulator = self
            .importance_accumulator
            .saturating_add(u32::from(record.importance));
        self.next_id = self.next_id.max(record.id + 1);
        self.records.insert(at, record);
        Ok(())
    }

    /// Builds and appends a record with a fresh id.
    pub fn record(
        &mut self,
        tick: u64,
        kind: MemoryKind,
        text: impl Into<String>,
        importance: u8,
        embedding: Vec<f64>,
    ) -> Result<MemoryRecord, MemoryError> {
        let record = MemoryRecord {
            id: self.next_id,
            tick,
            kind,
            text: text.into(),
            importance,
            embedding,
            last_access: tick,
        };
        self.append(record.clone())?;
        Ok(record)
    }

    /// Scores every record and returns the best `k` without touching
    /// `last_access`.
    pub fn rank(&self, query: &[f64], k: usize, now: u64, scoring: &Scoring) -> Result<Vec<ScoredMemory>, MemoryError> {
        if k == 0 || self.records.is_empty() {
            return Ok(Vec::new());
        }
        let mut scored = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| retrieval_score(r, query, now, scoring).map(|s| (s, i)))
            .collect::<Result<Vec<_>, _>>()?;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order(a.0, &self.records[a.1], b.0, &self.records[b.1]);
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| ScoredMemory {
                record: self.records[i].clone(),
                score,
            })
            .collect())
    }

    /// Marks the given records as accessed at `now`.
    pub fn touch(&mut self, ids: impl IntoIterator<Item = u64>, now: u64) {
        for id in ids {
            if let Some(r) = self.records.iter_mut().find(|r| r.id == id) {
                r.last_access = r.last_access.max(now);
            }
        }
    }

    /// The `k` best records for `query`; each one's `last_access` becomes `now`.
    pub fn retrieve_top_k(
        &mut self,
        query: &[f64],
        k: usize,
        now: u64,
        scoring: &Scoring,
    ) -> Result<Vec<ScoredMemory>, MemoryError> {
        let mut top = self.rank(query, k, now, scoring)?;
        self.touch(top.iter().map(|m| m.record.id), now);
        for m in &mut top {
            m.record.last_access = m.record.last_access.max(now);
        }
        Ok(top)
    }

    /// The `n` most recently created records, oldest first.
    pub fn most_recent(&self, n: usize) -> &[MemoryRecord] {
        &self.records[self.records.len().saturating_sub(n)..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, tick: u64, importance: u8, embedding: Vec<f64>) -> MemoryRecord {
        MemoryRecord {
            id,
            tick,
            kind: MemoryKind::Observation,
            text: format!("memory {id}"),
            importance,
            embedding,
            last_access: tick,
        }
    }

    #[test]
    fn append_tracks_accumulator_and_order() {
        let mut s = MemoryStore::new(2).unwrap();
        s.append(rec(5, 3, 4, vec![1.0, 0.0])).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.importance_accumulator(), 4);
        s.append(rec(2, 3, 6, vec![0.0, 1.0])).unwrap();
        s.append(rec(1, 1, 1, vec![0.0, 1.0])).unwrap();
        let ids: Vec<_> = s.records().iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 2, 5]);
        assert_eq!(s.importance_accumulator(), 11);
    }

    #[test]
    fn malformed_records_rejected() {
        let mut s = MemoryStore::new(2).unwrap();
        assert_eq!(s.append(rec(1, 0, 0, vec![0.0, 0.0])), Err(MemoryError::ImportanceOutOfRange(0)));
        assert_eq!(s.append(rec(1, 0, 11, vec![0.0, 0.0])), Err(MemoryError::ImportanceOutOfRange(11)));
        assert!(matches!(s.append(rec(1, 0, 3, vec![0.0])), Err(MemoryError::DimensionMismatch { .. })));
        let mut empty = rec(1, 0, 3, vec![0.0, 0.0]);
        empty.text = "  ".into();
        assert_eq!(s.append(empty), Err(MemoryError::EmptyText));
        let mut early = rec(1, 5, 3, vec![0.0, 0.0]);
        early.last_access = 4;
        assert!(matches!(s.append(early), Err(MemoryError::AccessBeforeCreation { .. })));
        s.append(rec(1, 0, 3, vec![0.0, 0.0])).unwrap();
        assert_eq!(s.append(rec(1, 2, 3, vec![0.0, 0.0])), Err(MemoryError::DuplicateId(1)));
        assert_eq!(s.importance_accumulator(), 3);
        assert!(MemoryStore::new(0).is_err());
    }

    #[test]
    fn recency_halves_per_half_life() {
        let r = rec(1, 0, 5, vec![1.0]);
        assert_eq!(recency_score(&r, 0, 100.0), 1.0);
        assert!((recency_score(&r, 100, 100.0) - 0.5).abs() < 1e-12);
        assert!((recency_score(&r, 200, 100.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn relevance_cases() {
        let r = rec(1, 0, 5, vec![1.0, 2.0]);
        assert!((relevance_score(&r, &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(relevance_score(&r, &[-1.0, -2.0]).unwrap().abs() < 1e-12);
        assert!((relevance_score(&r, &[2.0, -1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(relevance_score(&r, &[0.0, 0.0]).unwrap(), 0.5);
        assert!(relevance_score(&r, &[1.0]).is_err());
    }

    #[test]
    fn weighted_components() {
        let r = rec(1, 4, 10, vec![1.0, 0.0]);
        let only = |w: [f64; 3]| Scoring::new(RetrievalWeights::try_from(w).unwrap(), 100.0).unwrap();
        assert_eq!(retrieval_score(&r, &[0.0, 1.0], 4, &only([1.0, 0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(retrieval_score(&r, &[0.0, 1.0], 4, &only([0.0, 1.0, 0.0])).unwrap(), 1.0);
        let low = rec(2, 4, 1, vec![1.0, 0.0]);
        assert!((retrieval_score(&low, &[0.0, 1.0], 4, &only([0.0, 1.0, 0.0])).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(RetrievalWeights::new(0.0, 0.0, 0.0), Err(MemoryError::InvalidWeights));
        assert_eq!(RetrievalWeights::new(-1.0, 1.0, 0.0), Err(MemoryError::InvalidWeights));
        assert!(Scoring::new(RetrievalWeights::default(), 0.0).is_err());
    }

    #[test]
    fn retrieve_edge_cases_and_touch() {
        let mut s = MemoryStore::new(2).unwrap();
        let scoring = Scoring::default();
        assert!(s.retrieve_top_k(&[1.0, 0.0], 3, 0, &scoring).unwrap().is_empty());
        s.append(rec(1, 0, 5, vec![1.0, 0.0])).unwrap();
        assert!(s.retrieve_top_k(&[1.0, 0.0], 0, 50, &scoring).unwrap().is_empty());
        assert_eq!(s.records()[0].last_access, 0);
        let got = s.retrieve_top_k(&[1.0, 0.0], 5, 50, &scoring).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].record.last_access, 50);
        assert_eq!(recency_score(&s.records()[0], 50, 100.0), 1.0);
    }

    #[test]
    fn ties_prefer_recent_then_higher_id() {
        let mut s = MemoryStore::new(1).unwrap();
        s.append(rec(1, 2, 5, vec![1.0])).unwrap();
        s.append(rec(2, 2, 5, vec![1.0])).unwrap();
        s.append(rec(3, 1, 5, vec![1.0])).unwrap();
        let scoring = Scoring::new(RetrievalWeights::new(0.0, 1.0, 0.0).unwrap(), 10.0).unwrap();
        let got: Vec<_> = s.rank(&[1.0], 3, 5, &scoring).unwrap().iter().map(|m| m.record.id).collect();
        assert_eq!(got, vec![2, 1, 3]);
    }
}
