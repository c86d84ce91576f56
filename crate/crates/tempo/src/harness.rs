//! Workload files, paired baseline/optimized runs, statistics and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tempo_core::stats::{median, median_of_ratios, trimmed_mean, ConfusionMatrix, DecisionMetrics};
use tempo_core::temporal::{Query, TemporalBucket};
use tempo_core::workload::{ScenarioRow, Tier};

use crate::pipeline::{CacheDecision, PhaseTimings, Pipeline, PipelineOutcome};

pub const SCHEMA_VERSION: u32 = 1;
pub const TRIM_FRACTION: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads an `id,parent_id,text,tier,timestamp` file.
pub fn read_rows(path: &Path) -> Result<Vec<ScenarioRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))
}

/// RFC 4180 text with the standard header, quoting only where needed.
pub fn rows_to_csv(rows: &[ScenarioRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    if rows.is_empty() {
        w.write_record(["id", "parent_id", "text", "tier", "timestamp"])
            .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv is utf-8")
}

pub fn write_rows(path: &Path, rows: &[ScenarioRow]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    std::fs::write(path, rows_to_csv(rows)).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    Optimized,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Optimized => "optimized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_id: String,
    pub parent_id: String,
    pub tier: Tier,
    pub arm: Arm,
    pub outcome: PipelineOutcome,
    /// Query text of the entry a hit was served from.
    pub matched_query: Option<String>,
    /// Parent id of the query that entry was stored for.
    pub matched_parent: Option<String>,
    /// Measured, regardless of the pipeline clock. Not part of reports.
    pub wall_latency: Duration,
}

impl RunRecord {
    /// Latency on the pipeline's clock.
    pub fn latency(&self) -> Duration {
        self.outcome.timings.total
    }

    pub fn is_hit(&self) -> bool {
        self.outcome.cache_decision == CacheDecision::Hit
    }
}

fn failed_outcome(row: &ScenarioRow, message: String) -> PipelineOutcome {
    PipelineOutcome {
        query_id: row.id.clone(),
        answer: String::new(),
        error: Some(message),
        timings: PhaseTimings::default(),
        cache_decision: CacheDecision::Disabled,
        bucket: TemporalBucket::Volatile,
        lookup: None,
        plan: None,
        step_results: None,
        discovery_source: None,
        inserted: None,
    }
}

fn query_of(row: &ScenarioRow) -> Result<Query, String> {
    Query::new(row.id.clone(), row.text.clone(), row.timestamp)
        .map(|q| q.with_parent(row.parent_id.clone()))
        .map_err(|e| e.to_string())
}

pub async fn run_row(pipeline: &mut Pipeline, row: &ScenarioRow, arm: Arm) -> RunRecord {
    let started = Instant::now();
    let outcome = match query_of(row) {
        Ok(q) => pipeline.answer_query(q).await,
        Err(e) => failed_outcome(row, e),
    };
    let matched = outcome
        .lookup
        .as_ref()
        .filter(|_| outcome.cache_decision == CacheDecision::Hit)
        .and_then(|l| l.matched_entry);
    let matched_query = matched
        .and_then(|id| pipeline.cache()?.entry(id))
        .map(|e| e.query_text.clone());
    let matched_parent = matched.and_then(|id| pipeline.entry_parent(id)).map(str::to_string);
    RunRecord {
        scenario_id: row.id.clone(),
        parent_id: row.parent_id.clone(),
        tier: row.tier,
        arm,
        outcome,
        matched_query,
        matched_parent,
        wall_latency: started.elapsed(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarmSummary {
    pub seed_rows: usize,
    pub inserted: usize,
    pub failed: usize,
}

/// Runs every seed row through plan-execute and caches its answer.
pub async fn warm_from_seeds(pipeline: &mut Pipeline, seeds: &[ScenarioRow]) -> WarmSummary {
    let mut summary = WarmSummary {
        seed_rows: seeds.len(),
        ..Default::default()
    };
    for row in seeds {
        match query_of(row) {
            Ok(q) => {
                let out = pipeline.warm(q).await;
                if out.inserted.is_some() {
                    summary.inserted += 1;
                }
                if out.error.is_some() {
                    summary.failed += 1;
                }
            }
            Err(_) => summary.failed += 1,
        }
    }
    summary
}

pub async fn run_arm(pipeline: &mut Pipeline, rows: &[ScenarioRow], arm: Arm) -> Vec<RunRecord> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        out.push(run_row(pipeline, row, arm).await);
    }
    out
}

/// Warms the optimized arm from `seeds`, then runs each test row on the
/// baseline and immediately after on the optimized arm.
pub async fn run_paired(
    test: &[ScenarioRow],
    seeds: &[ScenarioRow],
    baseline: &mut Pipeline,
    optimized: &mut Pipeline,
) -> (WarmSummary, Vec<(RunRecord, RunRecord)>) {
    let warm = warm_from_seeds(optimized, seeds).await;
    let mut pairs = Vec::with_capacity(test.len());
    for row in test {
        let b = run_row(baseline, row, Arm::Baseline).await;
        let o = run_row(optimized, row, Arm::Optimized).await;
        pairs.push((b, o));
    }
    (warm, pairs)
}

pub fn warm_parents_of(seeds: &[ScenarioRow]) -> BTreeSet<String> {
    seeds.iter().map(|r| r.parent_id.clone()).collect()
}

/// Hit decisions on optimized records scored against warm-parent membership.
pub fn decision_quality<'a>(records: impl IntoIterator<Item = &'a RunRecord>, warm_parents: &BTreeSet<String>) -> ConfusionMatrix {
    ConfusionMatrix::tally(
        records
            .into_iter()
            .filter(|r| r.arm == Arm::Optimized)
            .map(|r| (warm_parents.contains(&r.parent_id), r.is_hit())),
    )
}

pub fn ms(d: Duration) -> f64 {
    d.as_micros() as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub rows: usize,
    pub median_ms: Option<f64>,
    pub trimmed_mean_ms: Option<f64>,
    pub phase_medians_ms: BTreeMap<String, f64>,
}

pub fn arm_stats<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> ArmStats {
    let records: Vec<&RunRecord> = records.into_iter().collect();
    let totals: Vec<f64> = records.iter().map(|r| ms(r.latency())).collect();
    let phase_medians_ms = PhaseTimings::PHASES
        .iter()
        .chain(std::iter::once(&"total"))
        .filter_map(|&p| {
            let v: Vec<f64> = records
                .iter()
                .filter_map(|r| r.outcome.timings.phase(p))
                .map(ms)
                .collect();
            median(&v).map(|m| (p.to_string(), m))
        })
        .collect();
    ArmStats {
        rows: records.len(),
        median_ms: median(&totals),
        trimmed_mean_ms: trimmed_mean(&totals, TRIM_FRACTION),
        phase_medians_ms,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub rows: usize,
    /// Median over rows of baseline / optimized.
    pub median_ratio: Option<f64>,
    pub hits: usize,
    pub hit_rate: f64,
    pub median_hit_speedup: Option<f64>,
    pub miss_rows: usize,
    /// Median over non-hit rows of optimized minus baseline.
    pub median_miss_delta_ms: Option<f64>,
    pub miss_median_baseline_ms: Option<f64>,
    pub miss_median_optimized_ms: Option<f64>,
}

pub fn latency_stats(pairs: &[(RunRecord, RunRecord)]) -> PairedStats {
    let ratio_pair = |(b, o): &(RunRecord, RunRecord)| (ms(b.latency()), ms(o.latency()));
    let (hits, misses): (Vec<_>, Vec<_>) = pairs.iter().partition(|(_, o)| o.is_hit());
    let hit_pairs: Vec<(f64, f64)> = hits.iter().map(|p| ratio_pair(p)).collect();
    let miss_deltas: Vec<f64> = misses
        .iter()
        .map(|(b, o)| ms(o.latency()) - ms(b.latency()))
        .collect();
    let miss_b: Vec<f64> = misses.iter().map(|(b, _)| ms(b.latency())).collect();
    let miss_o: Vec<f64> = misses.iter().map(|(_, o)| ms(o.latency())).collect();
    PairedStats {
        rows: pairs.len(),
        median_ratio: median_of_ratios(&pairs.iter().map(ratio_pair).collect::<Vec<_>>()),
        hits: hits.len(),
        hit_rate: if pairs.is_empty() {
            0.0
        } else {
            hits.len() as f64 / pairs.len() as f64
        },
        median_hit_speedup: median_of_ratios(&hit_pairs),
        miss_rows: misses.len(),
        median_miss_delta_ms: median(&miss_deltas),
        miss_median_baseline_ms: median(&miss_b),
        miss_median_optimized_ms: median(&miss_o),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub confusion: ConfusionMatrix,
    pub metrics: DecisionMetrics,
}

impl From<ConfusionMatrix> for DecisionReport {
    fn from(confusion: ConfusionMatrix) -> Self {
        Self {
            metrics: confusion.metrics(),
            confusion,
        }
    }
}

/// An optimized-arm hit served from an entry stored for a different parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub row_id: String,
    pub parent_id: String,
    pub text: String,
    pub matched_parent: Option<String>,
    pub matched_query: Option<String>,
    pub similarity: Option<f64>,
    pub judge_score: Option<f64>,
}

pub fn collisions<'a>(records: impl IntoIterator<Item = &'a RunRecord>, texts: &BTreeMap<String, String>) -> Vec<Collision> {
    records
        .into_iter()
        .filter(|r| r.arm == Arm::Optimized && r.is_hit() && r.matched_parent.as_deref() != Some(r.parent_id.as_str()))
        .map(|r| Collision {
            row_id: r.scenario_id.clone(),
            parent_id: r.parent_id.clone(),
            text: texts.get(&r.scenario_id).cloned().unwrap_or_default(),
            matched_parent: r.matched_parent.clone(),
            matched_query: r.matched_query.clone(),
            similarity: r.outcome.lookup.as_ref().and_then(|l| l.similarity),
            judge_score: r.outcome.lookup.as_ref().and_then(|l| l.judge_score),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: usize,
    pub arms: BTreeMap<Arm, ArmStats>,
    pub paired: Option<PairedStats>,
    pub decision_quality: Option<DecisionReport>,
    pub warm: Option<WarmSummary>,
    pub collisions: Vec<Collision>,
    pub errors: usize,
}

/// Everything a finished run produced, in row order.
#[derive(Debug, Clone, Default)]
pub struct RunSet {
    pub rows: Vec<ScenarioRow>,
    pub baseline: Vec<RunRecord>,
    pub optimized: Vec<RunRecord>,
    pub warm: Option<WarmSummary>,
    pub warm_parents: BTreeSet<String>,
}

impl RunSet {
    pub fn from_pairs(rows: Vec<ScenarioRow>, warm: WarmSummary, pairs: Vec<(RunRecord, RunRecord)>, warm_parents: BTreeSet<String>) -> Self {
        let (baseline, optimized) = pairs.into_iter().unzip();
        Self {
            rows,
            baseline,
            optimized,
            warm: Some(warm),
            warm_parents,
        }
    }

    pub fn pairs(&self) -> Vec<(RunRecord, RunRecord)> {
        if self.baseline.len() != self.optimized.len() {
            return Vec::new();
        }
        self.baseline
            .iter()
            .cloned()
            .zip(self.optimized.iter().cloned())
            .collect()
    }

    pub fn report(&self) -> Report {
        let mut arms = BTreeMap::new();
        if !self.baseline.is_empty() {
            arms.insert(Arm::Baseline, arm_stats(&self.baseline));
        }
        if !self.optimized.is_empty() {
            arms.insert(Arm::Optimized, arm_stats(&self.optimized));
        }
        let pairs = self.pairs();
        let texts = self.rows.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
        Report {
            schema_version: SCHEMA_VERSION,
            rows: self.rows.len(),
            arms,
            paired: (!pairs.is_empty()).then(|| latency_stats(&pairs)),
            decision_quality: (!self.optimized.is_empty())
                .then(|| decision_quality(&self.optimized, &self.warm_parents).into()),
            warm: self.warm,
            collisions: collisions(&self.optimized, &texts),
            errors: self
                .baseline
                .iter()
                .chain(&self.optimized)
                .filter(|r| r.outcome.error.is_some())
                .count(),
        }
    }

    /// One line per test row.
    pub fn rows_csv(&self) -> String {
        let by_id = |recs: &[RunRecord]| -> BTreeMap<String, RunRecord> {
            recs.iter().map(|r| (r.scenario_id.clone(), r.clone())).collect()
        };
        let (b, o) = (by_id(&self.baseline), by_id(&self.optimized));
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id", "parent_id", "tier", "warm_parent", "bucket", "decision", "baseline_ms", "optimized_ms", "ratio",
            "similarity", "judge_score", "baseline_error", "optimized_error",
        ])
        .expect("in-memory csv write");
        for row in &self.rows {
            let (rb, ro) = (b.get(&row.id), o.get(&row.id));
            let any = ro.or(rb);
            let lb = rb.map(|r| ms(r.latency()));
            let lo = ro.map(|r| ms(r.latency()));
            let lookup = ro.and_then(|r| r.outcome.lookup.as_ref());
            w.write_record([
                row.id.clone(),
                row.parent_id.clone(),
                row.tier.as_str().to_string(),
                self.warm_parents.contains(&row.parent_id).to_string(),
                any.map(|r| r.outcome.bucket.as_str().to_string()).unwrap_or_default(),
                ro.map(|r| r.outcome.cache_decision.as_str().to_string()).unwrap_or_default(),
                fmt(lb),
                fmt(lo),
                fmt(lb.zip(lo).filter(|(_, o)| *o > 0.0).map(|(b, o)| b / o)),
                fmt(lookup.and_then(|l| l.similarity)),
                fmt(lookup.and_then(|l| l.judge_score)),
                rb.and_then(|r| r.outcome.error.clone()).unwrap_or_default(),
                ro.and_then(|r| r.outcome.error.clone()).unwrap_or_default(),
            ])
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv is utf-8")
    }
}

fn opt_ms(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

/// Plain-text table of the headline numbers.
pub fn summary_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "rows: {}  errors: {}", report.rows, report.errors);
    if let Some(w) = &report.warm {
        let _ = writeln!(s, "warm: {} seed rows, {} cached, {} failed", w.seed_rows, w.inserted, w.failed);
    }
    let _ = writeln!(s);
    let arms: Vec<(&Arm, &ArmStats)> = report.arms.iter().collect();
    let _ = write!(s, "{:<16}", "phase (median ms)");
    for (arm, _) in &arms {
        let _ = write!(s, "{:>12}", arm.as_str());
    }
    let _ = writeln!(s);
    for phase in PhaseTimings::PHASES.iter().chain(std::iter::once(&"total")) {
        let _ = write!(s, "{phase:<16}");
        for (_, st) in &arms {
            let _ = write!(s, "{:>12}", opt_ms(st.phase_medians_ms.get(*phase).copied()));
        }
        let _ = writeln!(s);
    }
    let _ = write!(s, "{:<16}", "trimmed mean");
    for (_, st) in &arms {
        let _ = write!(s, "{:>12}", opt_ms(st.trimmed_mean_ms));
    }
    let _ = writeln!(s);
    if let Some(p) = &report.paired {
        let _ = writeln!(s);
        let _ = writeln!(s, "median speedup (per-row ratio): {}", p.median_ratio.map_or("-".into(), |r| format!("{r:.2}x")));
        let _ = writeln!(s, "hit rate: {:.1}% ({} of {})", p.hit_rate * 100.0, p.hits, p.rows);
        let _ = writeln!(s, "median hit speedup: {}", p.median_hit_speedup.map_or("-".into(), |r| format!("{r:.2}x")));
        let _ = writeln!(
            s,
            "miss rows: {}  median baseline {} ms, optimized {} ms, median delta {} ms",
            p.miss_rows,
            opt_ms(p.miss_median_baseline_ms),
            opt_ms(p.miss_median_optimized_ms),
            opt_ms(p.median_miss_delta_ms)
        );
    }
    if let Some(d) = &report.decision_quality {
        let c = d.confusion;
        let m = d.metrics;
        let _ = writeln!(s);
        let _ = writeln!(s, "tp {}  fp {}  fn {}  tn {}", c.tp, c.fp, c.fn_, c.tn);
        let _ = writeln!(
            s,
            "precision {:.4}  recall {:.4}  f1 {:.4}  specificity {:.4}",
            m.precision, m.recall, m.f1, m.specificity
        );
    }
    if !report.collisions.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "hits on another parent's entry: {}", report.collisions.len());
        for c in &report.collisions {
            let _ = writeln!(
                s,
                "  {} judge={} : {:?} <- {:?}",
                c.row_id,
                c.judge_score.map_or("-".into(), |j| format!("{j:.4}")),
                c.text,
                c.matched_query.as_deref().unwrap_or("")
            );
        }
    }
    s
}

/// Writes `report.json`, `rows.csv` and `summary.txt` into `dir`.
pub fn emit_report(run: &RunSet, dir: &Path) -> Result<Report, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let report = run.report();
    let json_path = dir.join("report.json");
    let mut body = serde_json::to_string_pretty(&report).map_err(|source| HarnessError::Json {
        path: json_path.display().to_string(),
        source,
    })?;
    body.push('\n');
    std::fs::write(&json_path, body).map_err(io_err(&json_path))?;
    let rows_path = dir.join("rows.csv");
    std::fs::write(&rows_path, run.rows_csv()).map_err(io_err(&rows_path))?;
    let summary_path = dir.join("summary.txt");
    std::fs::write(&summary_path, summary_text(&report)).map_err(io_err(&summary_path))?;
    Ok(report)
}

pub fn load_report(dir: &Path) -> Result<Report, HarnessError> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Issue time stamped on the bundled corpus rows.
pub fn corpus_timestamp() -> chrono::DateTime<chrono::Utc> {
    use chrono::TimeZone;
    chrono::Utc.with_ymd_and_hms(2020, 6, 10, 9, 0, 0).unwrap()
}

/// The 40 bundled parent queries (two parameterisations of 20 scenarios).
pub fn bundled_corpus() -> Vec<ScenarioRow> {
    tempo_core::workload::bundled_corpus(&tempo_core::planner::ScenarioBook::default(), corpus_timestamp())
}

/// Seed and test files from parent rows, using the template paraphraser.
pub fn generate_workload(
    parents: &[ScenarioRow],
    spec: &tempo_core::workload::WorkloadSpec,
) -> Result<tempo_core::workload::Workload, tempo_core::workload::WorkloadError> {
    let book = tempo_core::planner::ScenarioBook::default();
    tempo_core::workload::build_workload(
        parents,
        spec,
        &tempo_core::workload::TemplateParaphraser::from_book(&book),
        &tempo_core::workload::ParameterShifter::new(&book),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmSelection {
    Baseline,
    Optimized,
    Both,
}

impl std::str::FromStr for ArmSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "optimized" => Ok(Self::Optimized),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown arm {other:?} (baseline, optimized or both)")),
        }
    }
}

/// Builds fresh pipelines from `cfg` (baseline = everything off, optimized =
/// everything on) and runs the selected arms over `test`.
pub async fn run_experiment(
    cfg: &crate::config::TempoConfig,
    test: &[ScenarioRow],
    seeds: &[ScenarioRow],
    arms: ArmSelection,
) -> Result<RunSet, crate::config::ConfigError> {
    let mut run = RunSet {
        rows: test.to_vec(),
        warm_parents: warm_parents_of(seeds),
        ..Default::default()
    };
    let mut baseline = match arms {
        ArmSelection::Optimized => None,
        _ => Some(cfg.build(cfg.arm(false, false, false))?),
    };
    let mut optimized = match arms {
        ArmSelection::Baseline => None,
        _ => Some(cfg.build(cfg.arm(true, true, true))?),
    };
    if let Some(o) = optimized.as_mut() {
        run.warm = Some(warm_from_seeds(o, seeds).await);
    }
    for row in test {
        if let Some(b) = baseline.as_mut() {
            run.baseline.push(run_row(b, row, Arm::Baseline).await);
        }
        if let Some(o) = optimized.as_mut() {
            run.optimized.push(run_row(o, row, Arm::Optimized).await);
        }
    }
    for p in baseline.iter().chain(optimized.iter()) {
        p.shutdown().await;
    }
    Ok(run)
}
