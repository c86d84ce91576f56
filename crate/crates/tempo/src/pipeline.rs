//! One query end to end: cache lookup, discovery, planning, prefetch,
//! execution, summarization and cache insert, each phase timed.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tempo_core::plan::{duration_micros, Plan, StepResult};
use tempo_core::planner::{make_plan, summarize, ModelClient};
use tempo_core::semcache::{CacheConfig, CacheError, Decision, EntryId, LookupOutcome, SemanticCache};
use tempo_core::temporal::{ClassifiedQuery, Query, TemporalBucket, TemporalClassifier};

use crate::clock::Clock;
use crate::discovery::{self, CatalogSource, DiscoverySettings};
use crate::executor::{execute, prefetch_sessions, ExecMode};
use crate::mcpio::pool::DEFAULT_TIMEOUT;
use crate::mcpio::{McpError, ServerPool, ServerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cache_enabled: bool,
    pub discovery_cache_enabled: bool,
    pub parallel_execution: bool,
    pub thresholds: CacheConfig,
    #[serde(with = "duration_micros")]
    pub timeout: Duration,
}

impl PipelineConfig {
    fn arm(cache: bool, discovery: bool, parallel: bool) -> Self {
        Self {
            cache_enabled: cache,
            discovery_cache_enabled: discovery,
            parallel_execution: parallel,
            thresholds: CacheConfig::default(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn baseline() -> Self {
        Self::arm(false, false, false)
    }

    pub fn mcp_only() -> Self {
        Self::arm(false, true, true)
    }

    pub fn cache_only() -> Self {
        Self::arm(true, false, false)
    }

    pub fn combined() -> Self {
        Self::arm(true, true, true)
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel_execution {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    #[serde(with = "duration_micros")]
    pub cache_lookup: Duration,
    #[serde(with = "duration_micros")]
    pub discovery: Duration,
    #[serde(with = "duration_micros")]
    pub planning: Duration,
    #[serde(with = "duration_micros")]
    pub prefetch: Duration,
    #[serde(with = "duration_micros")]
    pub execution: Duration,
    #[serde(with = "duration_micros")]
    pub summarization: Duration,
    #[serde(with = "duration_micros")]
    pub total: Duration,
}

impl PhaseTimings {
    pub const PHASES: [&'static str; 6] = [
        "cache_lookup",
        "discovery",
        "planning",
        "prefetch",
        "execution",
        "summarization",
    ];

    pub fn phase(&self, name: &str) -> Option<Duration> {
        Some(match name {
            "cache_lookup" => self.cache_lookup,
            "discovery" => self.discovery,
            "planning" => self.planning,
            "prefetch" => self.prefetch,
            "execution" => self.execution,
            "summarization" => self.summarization,
            "total" => self.total,
            _ => return None,
        })
    }

    pub fn phase_sum(&self) -> Duration {
        Self::PHASES.iter().filter_map(|p| self.phase(p)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheDecision {
    Hit,
    Miss,
    Bypass,
    Disabled,
}

impl CacheDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheDecision::Hit => "hit",
            CacheDecision::Miss => "miss",
            CacheDecision::Bypass => "bypass",
            CacheDecision::Disabled => "disabled",
        }
    }
}

impl From<Decision> for CacheDecision {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Hit => CacheDecision::Hit,
            Decision::Miss => CacheDecision::Miss,
            Decision::Bypass => CacheDecision::Bypass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub query_id: String,
    pub answer: String,
    /// Set when a phase failed; the answer is then degraded or empty.
    pub error: Option<String>,
    pub timings: PhaseTimings,
    pub cache_decision: CacheDecision,
    pub bucket: TemporalBucket,
    pub lookup: Option<LookupOutcome>,
    pub plan: Option<Plan>,
    pub step_results: Option<Vec<StepResult>>,
    pub discovery_source: Option<CatalogSource>,
    pub inserted: Option<EntryId>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Pool(#[from] McpError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

pub type SharedModel = Arc<dyn ModelClient + Send + Sync>;
type NowFn = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Entry {
    Lookup,
    Warm,
}

/// Owns its server pool; pipelines never share sessions.
pub struct Pipeline {
    config: PipelineConfig,
    classifier: TemporalClassifier,
    cache: Option<SemanticCache>,
    pool: ServerPool,
    model: SharedModel,
    discovery: DiscoverySettings,
    clock: Clock,
    model_latency: Duration,
    now: NowFn,
    /// Ground-truth parent of the query behind each inserted entry.
    entry_parents: BTreeMap<EntryId, Option<String>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("pool", &self.pool)
            .field("clock", &self.clock)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Cache (when enabled) uses the reference scorers; swap with
    /// [`with_cache`](Self::with_cache).
    pub fn new(
        config: PipelineConfig,
        registry: Vec<ServerSpec>,
        model: SharedModel,
        discovery: DiscoverySettings,
    ) -> Result<Self, PipelineError> {
        let cache = if config.cache_enabled {
            Some(SemanticCache::with_reference_scorers(config.thresholds.clone())?)
        } else {
            None
        };
        Ok(Self {
            pool: ServerPool::new(registry, config.timeout)?,
            classifier: TemporalClassifier::default(),
            cache,
            config,
            model,
            discovery,
            clock: Clock::Wall,
            model_latency: Duration::ZERO,
            now: Box::new(discovery::now_utc),
            entry_parents: BTreeMap::new(),
        })
    }

    pub fn with_cache(mut self, cache: SemanticCache) -> Self {
        if self.config.cache_enabled {
            self.cache = Some(cache);
        }
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Real delay added to every model call (wall clock only).
    pub fn with_model_latency(mut self, latency: Duration) -> Self {
        self.model_latency = latency;
        self
    }

    pub fn with_now(mut self, now: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.now = Box::new(now);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn pool(&self) -> &ServerPool {
        &self.pool
    }

    pub fn cache(&self) -> Option<&SemanticCache> {
        self.cache.as_ref()
    }

    pub fn cache_mut(&mut self) -> Option<&mut SemanticCache> {
        self.cache.as_mut()
    }

    /// Parent id of the query an entry was inserted for.
    pub fn entry_parent(&self, id: EntryId) -> Option<&str> {
        self.entry_parents.get(&id)?.as_deref()
    }

    pub async fn shutdown(&self) {
        self.pool.shutdown().await;
    }

    pub async fn answer_query(&mut self, query: Query) -> PipelineOutcome {
        self.run(query, Entry::Lookup).await
    }

    /// Runs plan-execute without a lookup and stores the answer for any
    /// cacheable query. No-op on the cache when it is disabled.
    pub async fn warm(&mut self, query: Query) -> PipelineOutcome {
        self.run(query, Entry::Warm).await
    }

    async fn model_pause(&self) {
        if !self.clock.is_simulated() && !self.model_latency.is_zero() {
            tokio::time::sleep(self.model_latency).await;
        }
    }

    async fn run(&mut self, query: Query, entry: Entry) -> PipelineOutcome {
        let started = Instant::now();
        let clock = self.clock;
        let mut t = PhaseTimings::default();

        let lookup_started = Instant::now();
        let cq: ClassifiedQuery = self.classifier.classify_and_resolve(query);
        let mut outcome = PipelineOutcome {
            query_id: cq.query().id.clone(),
            answer: String::new(),
            error: None,
            timings: t,
            cache_decision: CacheDecision::Disabled,
            bucket: cq.bucket(),
            lookup: None,
            plan: None,
            step_results: None,
            discovery_source: None,
            inserted: None,
        };
        if let (Some(cache), Entry::Lookup) = (self.cache.as_mut(), entry) {
            let l = cache.lookup(&cq);
            t.cache_lookup = clock.charge(lookup_started.elapsed(), |m| m.lookup);
            outcome.cache_decision = l.decision.into();
            if let Some(answer) = &l.answer {
                outcome.answer = answer.clone();
            }
            outcome.lookup = Some(l);
            if outcome.cache_decision == CacheDecision::Hit {
                return finish(outcome, t, started, clock);
            }
        }

        let phase = Instant::now();
        let discovered = if self.config.discovery_cache_enabled {
            discovery::load_or_discover(&self.pool, &self.discovery, (self.now)()).await
        } else {
            discovery::discover_uncached(&self.pool, (self.now)()).await
        };
        let catalog = match discovered {
            Ok(d) => {
                t.discovery = clock.charge(phase.elapsed(), |m| m.discovery(&d, !self.config.discovery_cache_enabled));
                outcome.discovery_source = Some(d.source);
                d.catalog
            }
            Err(e) => {
                t.discovery = clock.charge(phase.elapsed(), |m| m.spawn);
                outcome.error = Some(format!("discovery: {e}"));
                return finish(outcome, t, started, clock);
            }
        };

        let phase = Instant::now();
        let planned = make_plan(cq.query(), &catalog, &*self.model);
        self.model_pause().await;
        t.planning = clock.charge(phase.elapsed(), |m| m.model);
        let plan = match planned {
            Ok(p) => p,
            Err(e) => {
                outcome.error = Some(format!("planning: {e}"));
                return finish(outcome, t, started, clock);
            }
        };

        if self.config.parallel_execution {
            let p = prefetch_sessions(&self.pool, &plan).await;
            t.prefetch = clock.charge(p.elapsed, |m| m.prefetch(&p));
        }

        let execution = match execute(&plan, &self.pool, self.config.exec_mode()).await {
            Ok(e) => e,
            Err(e) => {
                outcome.error = Some(format!("execution: {e}"));
                outcome.plan = Some(plan);
                return finish(outcome, t, started, clock);
            }
        };
        t.execution = clock.charge(execution.elapsed, |m| m.execution(&execution));

        let phase = Instant::now();
        let summary = summarize(cq.query(), &execution.results, &*self.model);
        self.model_pause().await;
        t.summarization = clock.charge(phase.elapsed(), |m| m.model);

        let all_ok = execution.all_ok();
        outcome.plan = Some(plan);
        outcome.step_results = Some(execution.results);
        match summary {
            Ok(answer) => {
                let eligible = match entry {
                    Entry::Warm => cq.is_cacheable(),
                    Entry::Lookup => {
                        outcome.cache_decision == CacheDecision::Miss
                            && matches!(cq.bucket(), TemporalBucket::Static | TemporalBucket::Anchored)
                            && all_ok
                    }
                };
                if eligible {
                    if let Some(cache) = self.cache.as_mut() {
                        match cache.insert(&cq, &answer) {
                            Ok(id) => {
                                self.entry_parents.insert(id, cq.query().parent_id.clone());
                                outcome.inserted = Some(id);
                            }
                            Err(e) => outcome.error = Some(format!("cache insert: {e}")),
                        }
                    }
                }
                outcome.answer = answer;
            }
            Err(e) => {
                outcome.error = Some(format!("summarization: {e}"));
                outcome.answer = format!("Unable to summarize results: {e}");
            }
        }
        finish(outcome, t, started, clock)
    }
}

fn finish(mut outcome: PipelineOutcome, mut t: PhaseTimings, started: Instant, clock: Clock) -> PipelineOutcome {
    t.total = if clock.is_simulated() {
        t.phase_sum()
    } else {
        started.elapsed()
    };
    outcome.timings = t;
    outcome
}
