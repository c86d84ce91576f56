//! Planning and summarisation through a pluggable model client, plus the
//! deterministic rule-based client used when no model is configured.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::ToolCatalog;
use crate::plan::{render_output, Plan, PlanError, PlanStep, StepResult, StepStatus};
use crate::semcache::reference::tokens;
use crate::temporal::{Query, TemporalClassifier, TimeWindow};

pub const BUNDLED_SCENARIOS: &str = include_str!("../data/scenarios.json");

const PLAN_HEADER: &str = "### PLAN";
const SUMMARIZE_HEADER: &str = "### SUMMARIZE";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("model client: {message}")]
pub struct ModelError {
    pub message: String,
}

impl ModelError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// Text-in, text-out completion backend.
pub trait ModelClient {
    fn complete(&self, prompt: &str) -> Result<String, ModelError>;
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlanningError {
    #[error("tool catalog is empty")]
    EmptyCatalog,
    #[error(transparent)]
    Client(#[from] ModelError),
    #[error("planner output is not a plan ({reason}): {raw}")]
    Unparseable { raw: String, reason: String },
    #[error("invalid plan: {0}")]
    Invalid(#[from] PlanError),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SummarizeError {
    #[error("nothing to summarise")]
    NoResults,
    #[error(transparent)]
    Client(#[from] ModelError),
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn plan_prompt(query: &Query, catalog: &ToolCatalog) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{PLAN_HEADER}");
    let _ = writeln!(p, "query_id: {}", query.id);
    let _ = writeln!(p, "issued_at: {}", query.issued_at.to_rfc3339());
    let _ = writeln!(p, "query: {}", one_line(&query.text));
    let _ = writeln!(p, "### TOOLS");
    for t in &catalog.tools {
        let _ = writeln!(
            p,
            "{}.{}: {} params={}",
            t.server,
            t.tool,
            one_line(&t.description),
            t.params_schema
        );
    }
    let _ = writeln!(p, "### FORMAT");
    let _ = writeln!(
        p,
        "Reply with one JSON object {{\"query_id\": str, \"steps\": [{{\"step_id\": int, \"server\": str, \"tool\": str, \"args_template\": object, \"depends_on\": [int]}}]}}. \
         String arguments may reference an earlier step's output as $stepN; that step must be listed in depends_on."
    );
    p
}

/// Asks `client` for a plan and validates it against `catalog`.
pub fn make_plan(
    query: &Query,
    catalog: &ToolCatalog,
    client: &(impl ModelClient + ?Sized),
) -> Result<Plan, PlanningError> {
    if catalog.is_empty() {
        return Err(PlanningError::EmptyCatalog);
    }
    let raw = client.complete(&plan_prompt(query, catalog))?;
    let body = extract_json_object(&raw).unwrap_or(&raw);
    let mut plan: Plan =
        serde_json::from_str(body).map_err(|e| PlanningError::Unparseable {
            raw: raw.clone(),
            reason: e.to_string(),
        })?;
    if plan.query_id.is_empty() {
        plan.query_id = query.id.clone();
    }
    plan.validate(catalog)?;
    Ok(plan)
}

/// The outermost `{ ... }` span, for clients that wrap JSON in prose.
fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (start < end).then(|| &raw[start..=end])
}

#[derive(Serialize, Deserialize)]
struct PromptResult {
    step_id: u32,
    status: StepStatus,
    #[serde(default)]
    output: Option<Value>,
    #[serde(default)]
    error: Option<String>,
}

pub fn summarize_prompt(query: &Query, results: &[StepResult]) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{SUMMARIZE_HEADER}");
    let _ = writeln!(p, "query: {}", one_line(&query.text));
    let _ = writeln!(p, "### RESULTS");
    for r in results {
        let line = PromptResult {
            step_id: r.step_id,
            status: r.status,
            output: r.output.clone(),
            error: r.error.clone(),
        };
        let _ = writeln!(
            p,
            "{}",
            serde_json::to_string(&line).expect("prompt result serialises")
        );
    }
    let _ = writeln!(p, "### FORMAT");
    let _ = writeln!(p, "Answer the query using only the results above.");
    p
}

pub fn summarize(
    query: &Query,
    results: &[StepResult],
    client: &(impl ModelClient + ?Sized),
) -> Result<String, SummarizeError> {
    if results.is_empty() {
        return Err(SummarizeError::NoResults);
    }
    Ok(client.complete(&summarize_prompt(query, results))?)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub template: String,
    pub keywords: Vec<String>,
    pub params: Vec<BTreeMap<String, String>>,
    pub plan: Vec<PlanStep>,
}

impl Scenario {
    /// Text of parameterisation `i`, or `None` when out of range.
    pub fn render(&self, i: usize) -> Option<String> {
        let params = self.params.get(i)?;
        let mut text = self.template.clone();
        for (k, v) in params {
            text = text.replace(&format!("{{{k}}}"), v);
        }
        Some(text)
    }

    /// Parent id for parameterisation `i`: `S01a`, `S01b`, ...
    pub fn parent_id(&self, i: usize) -> String {
        let mut id = self.id.clone();
        id.push((b'a' + i as u8) as char);
        id
    }
}

#[derive(Debug, Clone, Deserialize)]
struct BookFile {
    assets: Vec<String>,
    sites: Vec<String>,
    sensors: Vec<String>,
    synonyms: Vec<(String, String)>,
    scenarios: Vec<Scenario>,
}

#[derive(Debug, Error)]
pub enum BookError {
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("scenario {id}: {reason}")]
    Scenario { id: String, reason: String },
}

/// Parameters pulled out of free query text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extracted {
    pub asset: Option<String>,
    pub sensor: Option<String>,
    pub site: Option<String>,
    pub wo: Option<String>,
    pub horizon: Option<u32>,
    pub window: Option<TimeWindow>,
    pub today: Option<NaiveDate>,
}

impl Extracted {
    fn get(&self, key: &str) -> Option<String> {
        match key {
            "asset" => self.asset.clone(),
            "sensor" => self.sensor.clone(),
            "site" => self.site.clone(),
            "wo" => self.wo.clone(),
            "horizon" => self.horizon.map(|h| h.to_string()),
            "start" => self.window.as_ref().map(|w| w.start_day().to_string()),
            "end" => self.window.as_ref().map(|w| ceil_day(w.end()).to_string()),
            "today" => self.today.map(|d| d.to_string()),
            _ => None,
        }
    }
}

fn ceil_day(t: DateTime<Utc>) -> NaiveDate {
    let d = t.date_naive();
    if t.num_seconds_from_midnight() == 0 {
        d
    } else {
        d + Duration::days(1)
    }
}

/// Bundled scenario templates with their fixture plans and vocabulary.
pub struct ScenarioBook {
    scenarios: Vec<Scenario>,
    sensors: Vec<String>,
    sites: Vec<String>,
    assets: Vec<String>,
    synonyms: Vec<(String, String)>,
    asset_re: Regex,
    wo_re: Regex,
    horizon_re: Regex,
    fill_re: Regex,
    classifier: TemporalClassifier,
}

impl core::fmt::Debug for ScenarioBook {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ScenarioBook")
            .field("scenarios", &self.scenarios.len())
            .finish_non_exhaustive()
    }
}

impl Default for ScenarioBook {
    fn default() -> Self {
        Self::from_json(BUNDLED_SCENARIOS).expect("bundled scenarios are valid")
    }
}

impl ScenarioBook {
    pub fn from_json(text: &str) -> Result<Self, BookError> {
        let file: BookFile =
            serde_json::from_str(text).map_err(|e| BookError::Parse(e.to_string()))?;
        let mut seen = alloc::collections::BTreeSet::new();
        for s in &file.scenarios {
            let err = |reason: &str| BookError::Scenario {
                id: s.id.clone(),
                reason: reason.to_owned(),
            };
            if !seen.insert(s.id.as_str()) {
                return Err(err("duplicate id"));
            }
            if s.params.is_empty() || s.params.len() > 26 {
                return Err(err("needs between 1 and 26 parameterisations"));
            }
            Plan::new(s.id.clone(), s.plan.clone())
                .validate_structure()
                .map_err(|e| err(&e.to_string()))?;
        }
        let mut sensors = file.sensors;
        // longest first so "Supply Air Temperature" wins over "Supply Temperature"
        sensors.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(Self {
            scenarios: file.scenarios,
            sensors,
            sites: file.sites,
            assets: file.assets,
            synonyms: file.synonyms,
            asset_re: Regex::new(r"(?i)\b(chiller|ahu)\s*-?\s*(\d+)\b").expect("static regex"),
            wo_re: Regex::new(r"(?i)\bWO-(\d+)\b").expect("static regex"),
            horizon_re: Regex::new(r"(?i)\b(\d+)\s+days\b").expect("static regex"),
            fill_re: Regex::new(r"\{([a-z]+)\}").expect("static regex"),
            classifier: TemporalClassifier::default(),
        })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    /// `(canonical, alternative)` word pairs.
    pub fn synonyms(&self) -> &[(String, String)] {
        &self.synonyms
    }

    /// Lowercased tokens with synonym alternatives folded back to canonical.
    pub fn canonical_tokens(&self, text: &str) -> alloc::collections::BTreeSet<String> {
        tokens(text)
            .into_iter()
            .map(|t| {
                self.synonyms
                    .iter()
                    .find(|(_, alt)| *alt == t)
                    .map_or(t, |(canon, _)| canon.clone())
            })
            .collect()
    }

    /// First scenario whose keywords all occur in `text`.
    pub fn match_scenario(&self, text: &str) -> Option<&Scenario> {
        let toks = self.canonical_tokens(text);
        self.scenarios
            .iter()
            .find(|s| s.keywords.iter().all(|k| toks.contains(k.as_str())))
    }

    pub fn extract(&self, text: &str, issued_at: DateTime<Utc>) -> Extracted {
        let asset = self.asset_re.captures(text).map(|c| {
            let kind = if c[1].eq_ignore_ascii_case("ahu") {
                "AHU"
            } else {
                "Chiller"
            };
            format!("{kind}{}", &c[2])
        });
        let lower = text.to_lowercase();
        let sensor = self
            .sensors
            .iter()
            .find(|s| contains_phrase(&lower, &s.to_lowercase()))
            .cloned();
        let site = self
            .sites
            .iter()
            .find(|s| contains_phrase(text, s))
            .cloned();
        let wo = self.wo_re.captures(text).map(|c| format!("WO-{}", &c[1]));
        let horizon = self
            .horizon_re
            .captures(text)
            .and_then(|c| c[1].parse().ok());
        let window = Query::new("x", text, issued_at)
            .ok()
            .and_then(|q| self.classifier.classify_and_resolve(q).window());
        Extracted {
            asset,
            sensor,
            site,
            wo,
            horizon,
            window,
            today: Some(issued_at.date_naive()),
        }
    }

    /// Instantiates a scenario's fixture plan; `None` if a parameter it needs
    /// could not be extracted.
    pub fn instantiate(&self, scenario: &Scenario, params: &Extracted, query_id: &str) -> Option<Plan> {
        let mut steps = Vec::with_capacity(scenario.plan.len());
        for step in &scenario.plan {
            let mut args = Map::new();
            for (k, v) in &step.args_template {
                args.insert(k.clone(), self.fill(v, params)?);
            }
            steps.push(PlanStep {
                args_template: args,
                ..step.clone()
            });
        }
        Some(Plan::new(query_id, steps))
    }

    fn fill(&self, v: &Value, params: &Extracted) -> Option<Value> {
        match v {
            Value::String(s) => {
                let mut out = String::with_capacity(s.len());
                let mut last = 0;
                for c in self.fill_re.captures_iter(s) {
                    let m = c.get(0).expect("whole match");
                    out.push_str(&s[last..m.start()]);
                    out.push_str(&params.get(&c[1])?);
                    last = m.end();
                }
                out.push_str(&s[last..]);
                Some(Value::String(out))
            }
            Value::Array(items) => items
                .iter()
                .map(|i| self.fill(i, params))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array),
            Value::Object(map) => map
                .iter()
                .map(|(k, i)| Some((k.clone(), self.fill(i, params)?)))
                .collect::<Option<Map<_, _>>>()
                .map(Value::Object),
            other => Some(other.clone()),
        }
    }

    /// Single-step plan against the domain the text most likely concerns.
    pub fn fallback(&self, text: &str, params: &Extracted, query_id: &str) -> Plan {
        let toks = self.canonical_tokens(text);
        let has = |w: &str| toks.contains(w);
        let asset = params.asset.clone();
        let site = params
            .site
            .clone()
            .or_else(|| self.sites.first().cloned())
            .unwrap_or_default();
        let (server, tool, args) = if has("work") && (has("order") || has("orders")) {
            match (&params.wo, &asset) {
                (Some(wo), _) => ("wo", "get_work_order", [("id", wo.clone())].to_vec()),
                (None, Some(a)) => ("wo", "list_work_orders", [("asset", a.clone())].to_vec()),
                (None, None) => ("iot", "list_assets", [("site", site)].to_vec()),
            }
        } else if has("failure") && asset.is_some() {
            ("fmsr", "get_failure_modes", [("asset", asset.unwrap_or_default())].to_vec())
        } else if has("forecast") || has("forecasting") || has("anomalies") || has("models") {
            ("tsfm", "list_models", Vec::new())
        } else if let Some(a) = asset {
            ("iot", "list_sensors", [("asset", a)].to_vec())
        } else {
            ("iot", "list_assets", [("site", site)].to_vec())
        };
        Plan::new(
            query_id,
            alloc::vec![PlanStep {
                step_id: 1,
                server: server.to_string(),
                tool: tool.to_string(),
                args_template: args
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), Value::String(v)))
                    .collect(),
                depends_on: Default::default(),
            }],
        )
    }

    /// The stub planner's full behaviour for one query.
    pub fn plan_for(&self, text: &str, issued_at: DateTime<Utc>, query_id: &str) -> Plan {
        let params = self.extract(text, issued_at);
        self.match_scenario(text)
            .and_then(|s| self.instantiate(s, &params, query_id))
            .unwrap_or_else(|| self.fallback(text, &params, query_id))
    }
}

/// Case-sensitive phrase search on word boundaries.
fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric();
    haystack.match_indices(needle).any(|(i, m)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + m.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

/// Deterministic planner and summariser over [`ScenarioBook`]. Understands
/// only the prompts produced by [`plan_prompt`] and [`summarize_prompt`].
#[derive(Debug, Default)]
pub struct StubModelClient {
    book: ScenarioBook,
}

impl StubModelClient {
    pub fn new(book: ScenarioBook) -> Self {
        Self { book }
    }

    pub fn book(&self) -> &ScenarioBook {
        &self.book
    }

    fn plan(&self, prompt: &str) -> Result<String, ModelError> {
        let field = |name: &str| {
            prompt
                .lines()
                .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix(": ")))
        };
        let text = field("query").ok_or_else(|| ModelError::new("plan prompt without query"))?;
        let query_id = field("query_id").unwrap_or_default();
        let issued_at = field("issued_at")
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .ok_or_else(|| ModelError::new("plan prompt without issued_at"))?
            .with_timezone(&Utc);
        let plan = self.book.plan_for(text, issued_at, query_id);
        serde_json::to_string(&plan).map_err(|e| ModelError::new(e.to_string()))
    }

    fn summarize(&self, prompt: &str) -> Result<String, ModelError> {
        let mut lines = prompt.lines();
        let query = lines
            .find_map(|l| l.strip_prefix("query: "))
            .ok_or_else(|| ModelError::new("summary prompt without query"))?;
        let results: Vec<PromptResult> = lines
            .skip_while(|l| *l != "### RESULTS")
            .skip(1)
            .take_while(|l| !l.starts_with("### "))
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::new(format!("summary prompt results: {e}")))?;
        let ok: Vec<&PromptResult> = results
            .iter()
            .filter(|r| r.status == StepStatus::Ok)
            .collect();
        let mut out = String::new();
        if ok.is_empty() {
            let _ = write!(out, "Unable to answer \"{query}\": every step failed.");
            for r in &results {
                let _ = write!(
                    out,
                    "\n[step {}] {}: {}",
                    r.step_id,
                    match r.status {
                        StepStatus::Skipped => "skipped",
                        _ => "error",
                    },
                    r.error.as_deref().unwrap_or("unknown error")
                );
            }
        } else {
            let _ = write!(
                out,
                "Answer to \"{query}\" from {} of {} steps:",
                ok.len(),
                results.len()
            );
            for r in ok {
                let rendered = r.output.as_ref().map(render_output).unwrap_or_default();
                let _ = write!(out, "\n[step {}] {rendered}", r.step_id);
            }
        }
        Ok(out)
    }
}

impl ModelClient for StubModelClient {
    fn complete(&self, prompt: &str) -> Result<String, ModelError> {
        match prompt.lines().next() {
            Some(PLAN_HEADER) => self.plan(prompt),
            Some(SUMMARIZE_HEADER) => self.summarize(prompt),
            _ => Err(ModelError::new("unrecognised prompt")),
        }
    }
}
