//! Temporal classification of incoming queries.
//!
//! Every query is routed into one of four buckets before it reaches the
//! semantic cache. Relative phrases ("yesterday", "last week") are resolved
//! against the query's issue timestamp into concrete half-open windows, so a
//! classified query is only ever Volatile, Static or Anchored.
//!
//! All calendar arithmetic is done in UTC.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Timelike, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The rule table shipped with the crate.
pub const BUNDLED_RULES: &str = include_str!("../data/temporal_rules.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemporalError {
    #[error("query text is empty")]
    EmptyText,
    #[error("rule table line {line}: {reason}")]
    RuleTable { line: usize, reason: String },
    #[error("window start {start} is not before end {end}")]
    EmptyWindow {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("relative bucket cannot be attached to a classified query")]
    UnresolvedRelative,
    #[error("{0:?} queries cannot carry a time window")]
    UnexpectedWindow(TemporalBucket),
}

/// A user query paired with the instant it was issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub issued_at: DateTime<Utc>,
    /// Ground-truth parent, only used by evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl Query {
    /// Builds a query, truncating the timestamp to whole seconds.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        issued_at: DateTime<Utc>,
    ) -> Result<Self, TemporalError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TemporalError::EmptyText);
        }
        Ok(Self {
            id: id.into(),
            text,
            issued_at: truncate_to_seconds(issued_at),
            parent_id: None,
        })
    }

    pub fn with_parent(mut self, parent_id: impl Into<String>) -> Self {
        self.parent_id = Some(parent_id.into());
        self
    }
}

fn truncate_to_seconds(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_nanosecond(0).unwrap_or(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalBucket {
    Volatile,
    Static,
    Relative,
    Anchored,
}

impl TemporalBucket {
    pub fn as_str(self) -> &'static str {
        match self {
            TemporalBucket::Volatile => "volatile",
            TemporalBucket::Static => "static",
            TemporalBucket::Relative => "relative",
            TemporalBucket::Anchored => "anchored",
        }
    }
}

impl fmt::Display for TemporalBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalBucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "volatile" => Ok(TemporalBucket::Volatile),
            "static" => Ok(TemporalBucket::Static),
            "relative" => Ok(TemporalBucket::Relative),
            "anchored" => Ok(TemporalBucket::Anchored),
            other => Err(alloc::format!("unknown bucket {other:?}")),
        }
    }
}

/// Half-open interval `[start, end)` with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct TimeWindow {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
}

#[derive(Deserialize)]
struct RawWindow {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = TemporalError;

    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(raw.start, raw.end)
    }
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, TemporalError> {
        if start < end {
            Ok(Self { start, end })
        } else {
            Err(TemporalError::EmptyWindow { start, end })
        }
    }

    /// Whole UTC days `[first, last_exclusive)`.
    pub fn days(first: NaiveDate, last_exclusive: NaiveDate) -> Result<Self, TemporalError> {
        Self::new(midnight(first), midnight(last_exclusive))
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.end
    }

    pub fn start_day(&self) -> NaiveDate {
        self.start.date_naive()
    }

    pub fn end_day(&self) -> NaiveDate {
        self.end.date_naive()
    }

    pub fn shifted(&self, by: Duration) -> Self {
        Self {
            start: self.start + by,
            end: self.end + by,
        }
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {})",
            self.start.format("%Y-%m-%dT%H:%M:%SZ"),
            self.end.format("%Y-%m-%dT%H:%M:%SZ")
        )
    }
}

fn midnight(day: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&day.and_time(NaiveTime::MIN))
}

/// A query after temporal routing. Never carries [`TemporalBucket::Relative`].
///
/// An Anchored query without a window (e.g. "June 2020") is matched on the
/// Static path downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassifiedQuery {
    query: Query,
    bucket: TemporalBucket,
    window: Option<TimeWindow>,
}

impl ClassifiedQuery {
    pub fn new(
        query: Query,
        bucket: TemporalBucket,
        window: Option<TimeWindow>,
    ) -> Result<Self, TemporalError> {
        match bucket {
            TemporalBucket::Relative => return Err(TemporalError::UnresolvedRelative),
            TemporalBucket::Volatile | TemporalBucket::Static if window.is_some() => {
                return Err(TemporalError::UnexpectedWindow(bucket))
            }
            _ => {}
        }
        Ok(Self {
            query,
            bucket,
            window,
        })
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn text(&self) -> &str {
        &self.query.text
    }

    pub fn bucket(&self) -> TemporalBucket {
        self.bucket
    }

    pub fn window(&self) -> Option<TimeWindow> {
        self.window
    }

    pub fn is_cacheable(&self) -> bool {
        self.bucket != TemporalBucket::Volatile
    }
}

struct Rule {
    bucket: TemporalBucket,
    pattern: Regex,
}

/// Ordered regex rule table plus the fixed window-resolution grammar.
pub struct TemporalClassifier {
    rules: Vec<Rule>,
    resolver: WindowResolver,
}

impl fmt::Debug for TemporalClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemporalClassifier")
            .field("rules", &self.rules.len())
            .finish()
    }
}

impl Default for TemporalClassifier {
    fn default() -> Self {
        Self::from_table(BUNDLED_RULES).expect("bundled rule table is valid")
    }
}

impl TemporalClassifier {
    /// Parses a rule table: one `<bucket>\t<pattern>` per line, `#` comments,
    /// blank lines ignored.
    pub fn from_table(table: &str) -> Result<Self, TemporalError> {
        let mut rules = Vec::new();
        for (idx, line) in table.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (bucket, pattern) =
                line.split_once('\t')
                    .ok_or_else(|| TemporalError::RuleTable {
                        line: line_no,
                        reason: "expected <bucket>\\t<pattern>".to_string(),
                    })?;
            let bucket = bucket
                .parse::<TemporalBucket>()
                .map_err(|reason| TemporalError::RuleTable {
                    line: line_no,
                    reason,
                })?;
            let pattern = Regex::new(pattern).map_err(|e| TemporalError::RuleTable {
                line: line_no,
                reason: e.to_string(),
            })?;
            rules.push(Rule { bucket, pattern });
        }
        Ok(Self {
            rules,
            resolver: WindowResolver::new(),
        })
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// First matching rule wins; no match means Static.
    pub fn classify(&self, text: &str) -> TemporalBucket {
        self.rules
            .iter()
            .find(|rule| rule.pattern.is_match(text))
            .map(|rule| rule.bucket)
            .unwrap_or(TemporalBucket::Static)
    }

    pub fn resolve_window(
        &self,
        bucket: TemporalBucket,
        text: &str,
        issued_at: DateTime<Utc>,
    ) -> Option<TimeWindow> {
        self.resolver.resolve(bucket, text, issued_at)
    }

    /// Classifies and resolves. A resolved Relative query becomes Anchored; an
    /// unresolvable one is demoted to Volatile so it is never cached.
    pub fn classify_and_resolve(&self, query: Query) -> ClassifiedQuery {
        let bucket = self.classify(&query.text);
        let (bucket, window) = match bucket {
            TemporalBucket::Volatile | TemporalBucket::Static => (bucket, None),
            TemporalBucket::Anchored => (
                TemporalBucket::Anchored,
                self.resolve_window(bucket, &query.text, query.issued_at),
            ),
            TemporalBucket::Relative => {
                match self.resolve_window(bucket, &query.text, query.issued_at) {
                    Some(w) => (TemporalBucket::Anchored, Some(w)),
                    None => (TemporalBucket::Volatile, None),
                }
            }
        };
        ClassifiedQuery {
            query,
            bucket,
            window,
        }
    }
}

struct WindowResolver {
    yesterday: Regex,
    today: Regex,
    last_week: Regex,
    last_month: Regex,
    last_n: Regex,
    iso_range: Regex,
    iso_date: Regex,
}

impl WindowResolver {
    fn new() -> Self {
        let re = |p: &str| Regex::new(p).expect("resolver grammar is valid");
        Self {
            yesterday: re(r"(?i)\byesterday\b"),
            today: re(r"(?i)\btoday\b"),
            last_week: re(r"(?i)\b(?:last|previous)\s+week\b"),
            last_month: re(r"(?i)\b(?:last|previous)\s+month\b"),
            last_n: re(r"(?i)\b(?:last|past)\s+(\d+)\s+(hour|day)s?\b"),
            iso_range: re(
                r"(?i)\b(?:from|between)\s+(\d{4}-\d{2}-\d{2})\s+(?:to|and|through|until)\s+(\d{4}-\d{2}-\d{2})\b",
            ),
            iso_date: re(r"\b(\d{4}-\d{2}-\d{2})\b"),
        }
    }

    fn resolve(
        &self,
        bucket: TemporalBucket,
        text: &str,
        issued_at: DateTime<Utc>,
    ) -> Option<TimeWindow> {
        match bucket {
            TemporalBucket::Relative => self.relative(text, issued_at),
            TemporalBucket::Anchored => self.anchored(text),
            TemporalBucket::Volatile | TemporalBucket::Static => None,
        }
    }

    fn relative(&self, text: &str, issued_at: DateTime<Utc>) -> Option<TimeWindow> {
        let today = issued_at.date_naive();
        if self.yesterday.is_match(text) {
            return TimeWindow::days(today.pred_opt()?, today).ok();
        }
        if self.today.is_match(text) {
            return TimeWindow::days(today, today.succ_opt()?).ok();
        }
        if self.last_week.is_match(text) {
            let this_monday =
                today - Duration::days(i64::from(today.weekday().num_days_from_monday()));
            return TimeWindow::days(this_monday - Duration::days(7), this_monday).ok();
        }
        if self.last_month.is_match(text) {
            let first_of_this = today.with_day(1)?;
            let first_of_prev = if first_of_this.month() == 1 {
                NaiveDate::from_ymd_opt(first_of_this.year() - 1, 12, 1)?
            } else {
                NaiveDate::from_ymd_opt(first_of_this.year(), first_of_this.month() - 1, 1)?
            };
            return TimeWindow::days(first_of_prev, first_of_this).ok();
        }
        if let Some(caps) = self.last_n.captures(text) {
            let n: i64 = caps[1].parse().ok()?;
            if n <= 0 {
                return None;
            }
            let span = if caps[2].eq_ignore_ascii_case("hour") {
                Duration::try_hours(n)?
            } else {
                Duration::try_days(n)?
            };
            return TimeWindow::new(issued_at.checked_sub_signed(span)?, issued_at).ok();
        }
        None
    }

    fn anchored(&self, text: &str) -> Option<TimeWindow> {
        if let Some(caps) = self.iso_range.captures(text) {
            let first = parse_iso_day(&caps[1])?;
            let last = parse_iso_day(&caps[2])?;
            return TimeWindow::days(first, last.succ_opt()?).ok();
        }
        let mut dates = self.iso_date.captures_iter(text);
        let only = dates.next()?;
        if dates.next().is_some() {
            // several bare dates without range grammar are ambiguous
            return None;
        }
        let day = parse_iso_day(&only[1])?;
        TimeWindow::days(day, day.succ_opt()?).ok()
    }
}

fn parse_iso_day(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}
