//! Temporal semantic cache.
//!
//! Lookup is retrieve-then-judge: cosine top-k over stored query embeddings,
//! a coarse similarity floor, a day-granular window gate, and finally a judger
//! score that must clear a strict acceptance threshold. Volatile queries never
//! touch the index.

pub mod index;
pub mod reference;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::temporal::{ClassifiedQuery, TemporalBucket, TimeWindow};
use index::FlatIndex;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ScorerError {
    pub message: String,
}

impl ScorerError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// Maps text to a vector of fixed dimension. Must be deterministic.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, ScorerError>;
}

/// Scores how well a cached (query, answer) pair answers a new query, in [0, 1].
pub trait Judger {
    fn score(
        &self,
        candidate_query: &str,
        candidate_answer: &str,
        new_query: &str,
    ) -> Result<f64, ScorerError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("invalid cache config: {0}")]
    Config(String),
    #[error("volatile queries cannot be cached")]
    VolatileInsert,
    #[error("cache is empty")]
    Empty,
    #[error("embedder: {0}")]
    Embedder(ScorerError),
    #[error("entry {0} violates a cache invariant: {1}")]
    BadEntry(EntryId, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub tau_sim: f64,
    pub tau_judge: f64,
    pub top_k: usize,
    pub capacity: usize,
    pub embedding_dim: usize,
    /// Reject candidates whose window differs from the query's before judging.
    #[serde(default = "default_true")]
    pub window_gate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            tau_sim: 0.75,
            tau_judge: 0.92,
            top_k: 5,
            capacity: 50,
            embedding_dim: reference::DEFAULT_EMBEDDING_DIM,
            window_gate: true,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(CacheError::Config(format!("{name}={v} outside [0, 1]")))
            }
        };
        unit("tau_sim", self.tau_sim)?;
        unit("tau_judge", self.tau_judge)?;
        if self.tau_judge < self.tau_sim {
            return Err(CacheError::Config(format!(
                "tau_judge={} below tau_sim={}",
                self.tau_judge, self.tau_sim
            )));
        }
        for (name, v) in [
            ("top_k", self.top_k),
            ("capacity", self.capacity),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v == 0 {
                return Err(CacheError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: EntryId,
    pub query_text: String,
    pub embedding: Vec<f32>,
    pub answer: String,
    pub window: Option<TimeWindow>,
    pub hit_count: u64,
    pub last_access: u64,
    pub inserted_at: DateTime<Utc>,
}

impl CacheEntry {
    /// Eviction order key: least hits, then least recent, then oldest.
    pub fn eviction_key(&self) -> (u64, u64, DateTime<Utc>, EntryId) {
        (self.hit_count, self.last_access, self.inserted_at, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Hit,
    Miss,
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupOutcome {
    pub decision: Decision,
    pub answer: Option<String>,
    pub matched_entry: Option<EntryId>,
    /// Cosine of the best judged (or best retrieved) candidate.
    pub similarity: Option<f64>,
    pub judge_score: Option<f64>,
    /// Set when a scorer failed and the lookup degraded to a miss.
    pub diagnostic: Option<String>,
}

impl LookupOutcome {
    fn bypass() -> Self {
        Self {
            decision: Decision::Bypass,
            answer: None,
            matched_entry: None,
            similarity: None,
            judge_score: None,
            diagnostic: None,
        }
    }

    fn miss() -> Self {
        Self {
            decision: Decision::Miss,
            ..Self::bypass()
        }
    }

    pub fn is_hit(&self) -> bool {
        self.decision == Decision::Hit
    }
}

/// Index access instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessCounters {
    pub index_reads: u64,
    pub index_writes: u64,
    pub evictions: u64,
}

/// Windows match when both are absent, or both present with the same UTC start
/// day and end day.
pub fn window_compatible(entry: Option<&TimeWindow>, query: Option<&TimeWindow>) -> bool {
    match (entry, query) {
        (None, None) => true,
        (Some(a), Some(b)) => a.start_day() == b.start_day() && a.end_day() == b.end_day(),
        _ => false,
    }
}

pub type DynEmbedder = Box<dyn Embedder + Send + Sync>;
pub type DynJudger = Box<dyn Judger + Send + Sync>;

pub struct SemanticCache {
    config: CacheConfig,
    embedder: DynEmbedder,
    judger: DynJudger,
    entries: BTreeMap<EntryId, CacheEntry>,
    index: FlatIndex,
    tick: u64,
    next_id: u64,
    counters: AccessCounters,
}

impl fmt::Debug for SemanticCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemanticCache")
            .field("config", &self.config)
            .field("len", &self.entries.len())
            .field("counters", &self.counters)
            .finish()
    }
}

impl SemanticCache {
    pub fn new(
        config: CacheConfig,
        embedder: DynEmbedder,
        judger: DynJudger,
    ) -> Result<Self, CacheError> {
        config.validate()?;
        if embedder.dim() != config.embedding_dim {
            return Err(CacheError::Config(format!(
                "embedder produces {} dims, config says {}",
                embedder.dim(),
                config.embedding_dim
            )));
        }
        Ok(Self {
            index: FlatIndex::new(config.embedding_dim),
            config,
            embedder,
            judger,
            entries: BTreeMap::new(),
            tick: 0,
            next_id: 1,
            counters: AccessCounters::default(),
        })
    }

    /// Cache with the trigram embedder and Jaccard judge.
    pub fn with_reference_scorers(config: CacheConfig) -> Result<Self, CacheError> {
        let dim = config.embedding_dim;
        Self::new(
            config,
            Box::new(reference::TrigramEmbedder::new(dim.max(1))),
            Box::new(reference::JaccardJudge),
        )
    }

    /// Seeds the cache with pre-built entries, e.g. to reproduce an eviction
    /// scenario. Entries must satisfy the cache invariants.
    pub fn with_entries(mut self, entries: Vec<CacheEntry>) -> Result<Self, CacheError> {
        if entries.len() > self.config.capacity {
            return Err(CacheError::Config(format!(
                "{} entries exceed capacity {}",
                entries.len(),
                self.config.capacity
            )));
        }
        for entry in entries {
            if entry.embedding.len() != self.config.embedding_dim {
                return Err(CacheError::BadEntry(entry.id, "wrong dimension".to_string()));
            }
            let norm = index::dot(&entry.embedding, &entry.embedding);
            if (libm::sqrt(norm) - 1.0).abs() > 1e-5 {
                return Err(CacheError::BadEntry(entry.id, "embedding not unit norm".to_string()));
            }
            if self.entries.contains_key(&entry.id) {
                return Err(CacheError::BadEntry(entry.id, "duplicate id".to_string()));
            }
            self.tick = self.tick.max(entry.last_access);
            self.next_id = self.next_id.max(entry.id.0 + 1);
            self.index.insert(entry.id, &entry.embedding);
            self.entries.insert(entry.id, entry);
        }
        Ok(self)
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counters(&self) -> AccessCounters {
        self.counters
    }

    pub fn entry(&self, id: EntryId) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    pub fn set_window_gate(&mut self, enabled: bool) {
        self.config.window_gate = enabled;
    }

    /// Embeds `text` and normalises the result, rejecting zero vectors.
    pub fn embed(&self, text: &str) -> Result<Vec<f32>, ScorerError> {
        let mut v = self.embedder.embed(text)?;
        if v.len() != self.config.embedding_dim {
            return Err(ScorerError::new(format!(
                "embedder returned {} dims, expected {}",
                v.len(),
                self.config.embedding_dim
            )));
        }
        let norm = libm::sqrt(index::dot(&v, &v));
        if !(norm.is_finite() && norm > 0.0) {
            return Err(ScorerError::new("embedder returned a zero or non-finite vector"));
        }
        let inv = (1.0 / norm) as f32;
        for x in &mut v {
            *x *= inv;
        }
        Ok(v)
    }

    /// Top-k candidates by cosine for an already-normalised embedding.
    pub fn candidates(&mut self, embedding: &[f32]) -> Vec<(EntryId, f64)> {
        self.counters.index_reads += 1;
        self.index.top_k(embedding, self.config.top_k)
    }

    pub fn lookup(&mut self, cq: &ClassifiedQuery) -> LookupOutcome {
        if cq.bucket() == TemporalBucket::Volatile {
            return LookupOutcome::bypass();
        }
        let embedding = match self.embed(cq.text()) {
            Ok(v) => v,
            Err(e) => {
                return LookupOutcome {
                    diagnostic: Some(format!("embedder failed: {e}")),
                    ..LookupOutcome::miss()
                }
            }
        };
        let retrieved = self.candidates(&embedding);
        let mut outcome = LookupOutcome::miss();
        outcome.similarity = retrieved.first().map(|c| c.1);

        let query_window = cq.window();
        let gated = retrieved.into_iter().filter(|&(id, sim)| {
            sim >= self.config.tau_sim
                && (!self.config.window_gate
                    || window_compatible(self.entries[&id].window.as_ref(), query_window.as_ref()))
        });

        // (score, sim, id) of the best judged candidate
        let mut best: Option<(f64, f64, EntryId)> = None;
        for (id, sim) in gated {
            let entry = &self.entries[&id];
            let score = match self.judger.score(&entry.query_text, &entry.answer, cq.text()) {
                Ok(s) => s,
                Err(e) => {
                    outcome.diagnostic = Some(format!("judger failed on {id}: {e}"));
                    continue;
                }
            };
            let better = match best {
                None => true,
                Some((bs, bsim, _)) => score > bs || (score == bs && sim > bsim),
            };
            if better {
                best = Some((score, sim, id));
            }
        }

        let Some((score, sim, id)) = best else {
            return outcome;
        };
        outcome.similarity = Some(sim);
        outcome.judge_score = Some(score);
        if score < self.config.tau_judge {
            return outcome;
        }
        self.tick += 1;
        let entry = self.entries.get_mut(&id).expect("candidate id is live");
        entry.hit_count += 1;
        entry.last_access = self.tick;
        outcome.decision = Decision::Hit;
        outcome.answer = Some(entry.answer.clone());
        outcome.matched_entry = Some(id);
        outcome
    }

    pub fn insert(&mut self, cq: &ClassifiedQuery, answer: &str) -> Result<EntryId, CacheError> {
        if !cq.is_cacheable() {
            return Err(CacheError::VolatileInsert);
        }
        let embedding = self.embed(cq.text()).map_err(CacheError::Embedder)?;
        if self.entries.len() >= self.config.capacity {
            self.evict_one()?;
        }
        self.tick += 1;
        let id = EntryId(self.next_id);
        self.next_id += 1;
        // Windowless Anchored queries take the Static path; only resolved
        // windows are stored.
        let window = match cq.bucket() {
            TemporalBucket::Anchored => cq.window(),
            _ => None,
        };
        self.index.insert(id, &embedding);
        self.counters.index_writes += 1;
        self.entries.insert(
            id,
            CacheEntry {
                id,
                query_text: cq.text().to_string(),
                embedding,
                answer: answer.to_string(),
                window,
                hit_count: 0,
                last_access: self.tick,
                inserted_at: cq.query().issued_at,
            },
        );
        Ok(id)
    }

    /// Removes the least-frequently used entry (LRU, then FIFO tie-breaks).
    pub fn evict_one(&mut self) -> Result<EntryId, CacheError> {
        let victim = self
            .entries
            .values()
            .min_by_key(|e| e.eviction_key())
            .map(|e| e.id)
            .ok_or(CacheError::Empty)?;
        self.entries.remove(&victim);
        self.index.remove(victim);
        self.counters.index_writes += 1;
        self.counters.evictions += 1;
        Ok(victim)
    }
}
