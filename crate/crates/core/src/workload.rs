//! Paraphrase-tier workloads with parent-id ground truth.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::ScenarioBook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Seed,
    Warm,
    Cold,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Seed => "seed",
            Tier::Warm => "warm",
            Tier::Cold => "cold",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown tier {0:?}")]
pub struct UnknownTier(pub String);

impl FromStr for Tier {
    type Err = UnknownTier;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "seed" => Ok(Tier::Seed),
            "warm" => Ok(Tier::Warm),
            "cold" => Ok(Tier::Cold),
            _ => Err(UnknownTier(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub id: String,
    pub parent_id: String,
    pub text: String,
    pub tier: Tier,
    pub timestamp: DateTime<Utc>,
}

/// Rewrites a query without changing what it asks for.
pub trait Paraphraser {
    fn paraphrase(&self, text: &str, variant: u32, seed: u64) -> String;
}

const POLITENESS: [(&str, &str); 4] = [
    ("Please ", ""),
    ("Could you tell me ", ""),
    ("", ", please"),
    ("Kindly ", ""),
];

/// Sentence openers safe to lowercase when the sentence gets a new prefix.
const OPENERS: [&str; 18] = [
    "what", "which", "show", "list", "how", "were", "for", "detect", "compare", "summarize",
    "forecast", "display", "enumerate", "contrast", "recap", "from", "on", "between",
];

const CLAUSE_MARKERS: [&str; 6] = [" from ", " between ", " during ", " over ", " on ", " for "];

const POLITE: u32 = 1;
const SYNONYM: u32 = 2;
const REORDER: u32 = 4;
const PUNCT: u32 = 8;

/// Rewrite families: politeness wrappers, synonym substitution, clause
/// reordering and terminal punctuation. Variant `v` applies the family mask
/// `((v + seed) mod 15) + 1`, so neighbouring variants always differ in the
/// politeness or punctuation family, both of which change every input.
#[derive(Debug, Clone)]
pub struct TemplateParaphraser {
    synonyms: Vec<(String, String)>,
}

impl TemplateParaphraser {
    pub fn new(synonyms: Vec<(String, String)>) -> Self {
        Self { synonyms }
    }

    pub fn from_book(book: &ScenarioBook) -> Self {
        Self::new(book.synonyms().to_vec())
    }

    fn substitute(&self, text: &str) -> String {
        let mut words: Vec<String> = text.split(' ').map(String::from).collect();
        for w in &mut words {
            let lower = w.to_lowercase();
            if let Some((_, alt)) = self.synonyms.iter().find(|(canon, _)| *canon == lower) {
                *w = match_case(w, alt);
            }
        }
        words.join(" ")
    }
}

impl Default for TemplateParaphraser {
    fn default() -> Self {
        Self::from_book(&ScenarioBook::default())
    }
}

fn match_case(model: &str, word: &str) -> String {
    if model.chars().next().is_some_and(char::is_uppercase) {
        capitalise(word)
    } else {
        word.to_string()
    }
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Lowercases the first character only if the first word is a known opener.
fn decapitalise_opener(s: &str) -> String {
    let first = s.split(' ').next().unwrap_or_default().to_lowercase();
    if OPENERS.contains(&first.as_str()) {
        let mut c = s.chars();
        match c.next() {
            Some(f) => f.to_lowercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        s.to_string()
    }
}

fn reorder(text: &str) -> Option<String> {
    let at = CLAUSE_MARKERS
        .iter()
        .filter_map(|m| text.rfind(m))
        .max()
        .filter(|&i| i > 0)?;
    let (head, tail) = text.split_at(at);
    let tail = tail.trim_start();
    Some(format!("{}, {}", capitalise(tail), decapitalise_opener(head)))
}

fn is_question(text: &str) -> bool {
    let first = text.split(' ').next().unwrap_or_default().to_lowercase();
    matches!(first.as_str(), "what" | "which" | "how" | "were" | "could")
}

impl Paraphraser for TemplateParaphraser {
    fn paraphrase(&self, text: &str, variant: u32, seed: u64) -> String {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let mask = ((u64::from(variant) + seed) % 15) as u32 + 1;
        let mut out = text.trim_end_matches(['?', '.', '!']).to_string();
        if mask & SYNONYM != 0 {
            out = self.substitute(&out);
        }
        if mask & REORDER != 0 {
            if let Some(r) = reorder(&out) {
                out = r;
            }
        }
        if mask & POLITE != 0 {
            let idx = ((u64::from(variant) / 15 + seed) % POLITENESS.len() as u64) as usize;
            let (pre, post) = POLITENESS[idx];
            let body = if pre.is_empty() {
                out
            } else {
                decapitalise_opener(&out)
            };
            out = format!("{pre}{body}{post}");
        }
        let ended = text.ends_with(['?', '.', '!']);
        if (mask & PUNCT != 0) != ended {
            out.push(if is_question(&out) { '?' } else { '.' });
        }
        out
    }
}

/// Parameter-shifted variant of `text` for the parameter-collision suite.
/// Dates move six months when present (the window changes); otherwise the
/// asset, site or work order changes. `None` if nothing can be shifted.
#[derive(Debug)]
pub struct ParameterShifter {
    date: Regex,
    asset: Regex,
    wo: Regex,
    assets: Vec<String>,
    sites: Vec<String>,
}

impl Default for ParameterShifter {
    fn default() -> Self {
        Self::new(&ScenarioBook::default())
    }
}

impl ParameterShifter {
    pub fn new(book: &ScenarioBook) -> Self {
        Self {
            date: Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").expect("static regex"),
            asset: Regex::new(r"\b(Chiller|AHU) (\d+)\b").expect("static regex"),
            wo: Regex::new(r"\bWO-(\d+)\b").expect("static regex"),
            assets: book.assets().to_vec(),
            sites: book.sites().to_vec(),
        }
    }

    pub fn shift(&self, text: &str) -> Option<String> {
        if self.date.is_match(text) {
            let mut ok = true;
            let out = self.date.replace_all(text, |c: &regex::Captures<'_>| {
                let shifted = NaiveDate::from_ymd_opt(
                    c[1].parse().unwrap_or(0),
                    c[2].parse().unwrap_or(0),
                    c[3].parse().unwrap_or(0),
                )
                .and_then(|d| {
                    let m0 = d.month0();
                    NaiveDate::from_ymd_opt(d.year(), (m0 + 6) % 12 + 1, d.day())
                });
                match shifted {
                    Some(d) => d.to_string(),
                    None => {
                        ok = false;
                        c[0].to_string()
                    }
                }
            });
            return ok.then(|| out.into_owned());
        }
        if let Some(c) = self.asset.captures(text) {
            let id = format!("{}{}", &c[1], &c[2]);
            let same_kind: Vec<&String> = self
                .assets
                .iter()
                .filter(|a| a.starts_with(&c[1]))
                .collect();
            let pos = same_kind.iter().position(|a| **a == id)?;
            let next = same_kind[(pos + 1) % same_kind.len()];
            if *next == id {
                return None;
            }
            let display = format!("{} {}", &c[1], &next[c[1].len()..]);
            return Some(text.replacen(&c[0], &display, 1));
        }
        if let Some(c) = self.wo.captures(text) {
            let n: u64 = c[1].parse().ok()?;
            return Some(text.replacen(&c[0], &format!("WO-{}", n + 1), 1));
        }
        let pos = self.sites.iter().position(|s| {
            text.split(|ch: char| !ch.is_alphanumeric())
                .any(|w| w == s.as_str())
        })?;
        let from = &self.sites[pos];
        let to = &self.sites[(pos + 1) % self.sites.len()];
        (from != to).then(|| text.replacen(from.as_str(), to, 1))
    }
}

/// Every parameterisation of every bundled scenario, one row per parent.
pub fn bundled_corpus(book: &ScenarioBook, timestamp: DateTime<Utc>) -> Vec<ScenarioRow> {
    book.scenarios()
        .iter()
        .flat_map(|s| {
            (0..s.params.len()).map(move |i| ScenarioRow {
                id: s.parent_id(i),
                parent_id: s.parent_id(i),
                text: s.render(i).expect("index in range"),
                tier: Tier::Seed,
                timestamp,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub warm_count: usize,
    pub test_size: usize,
    pub warm_fraction: f64,
    pub rng_seed: u64,
    /// Cold rows become parameter-shifted copies of warm seed rows.
    pub adversarial: bool,
}

impl WorkloadSpec {
    pub fn warm_rows(&self) -> usize {
        libm::ceil(self.warm_fraction * self.test_size as f64 - 1e-9) as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("warm fraction {0} outside (0, 1)")]
    WarmFraction(f64),
    #[error("{warm} warm parents requested but only {available} seeds")]
    TooFewSeeds { warm: usize, available: usize },
    #[error("no warm parents")]
    NoWarmParents,
    #[error("{needed} cold rows need at least one cold parent")]
    InsufficientCold { needed: usize },
    #[error("duplicate parent id {0}")]
    DuplicateParent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub seeds: Vec<ScenarioRow>,
    pub test: Vec<ScenarioRow>,
    pub warm_parents: BTreeSet<String>,
}

/// Splits `parents` into warm and cold sets with a seeded shuffle, emits one
/// variant-0 paraphrase per warm parent as the seed file, and a shuffled
/// test file with `ceil(warm_fraction * test_size)` warm rows.
pub fn build_workload(
    parents: &[ScenarioRow],
    spec: &WorkloadSpec,
    paraphraser: &(impl Paraphraser + ?Sized),
    shifter: &ParameterShifter,
) -> Result<Workload, WorkloadError> {
    if !(spec.warm_fraction > 0.0 && spec.warm_fraction < 1.0) {
        return Err(WorkloadError::WarmFraction(spec.warm_fraction));
    }
    if spec.warm_count > parents.len() {
        return Err(WorkloadError::TooFewSeeds {
            warm: spec.warm_count,
            available: parents.len(),
        });
    }
    if spec.warm_count == 0 {
        return Err(WorkloadError::NoWarmParents);
    }
    let mut seen = BTreeSet::new();
    for p in parents {
        if !seen.insert(p.parent_id.as_str()) {
            return Err(WorkloadError::DuplicateParent(p.parent_id.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut order: Vec<&ScenarioRow> = parents.iter().collect();
    order.shuffle(&mut rng);
    let (warm, cold) = order.split_at(spec.warm_count);

    let n_warm = spec.warm_rows();
    let n_cold = spec.test_size - n_warm;

    let seeds: Vec<ScenarioRow> = warm
        .iter()
        .enumerate()
        .map(|(i, p)| ScenarioRow {
            id: format!("s{:03}", i + 1),
            parent_id: p.parent_id.clone(),
            text: paraphraser.paraphrase(&p.text, 0, spec.rng_seed),
            tier: Tier::Seed,
            timestamp: p.timestamp,
        })
        .collect();

    let variant_row = |p: &ScenarioRow, i: usize, pool: usize, tier: Tier| ScenarioRow {
        id: String::new(),
        parent_id: p.parent_id.clone(),
        text: paraphraser.paraphrase(&p.text, 1 + (i / pool) as u32, spec.rng_seed),
        tier,
        timestamp: p.timestamp,
    };

    let mut test: Vec<ScenarioRow> = (0..n_warm)
        .map(|i| variant_row(warm[i % warm.len()], i, warm.len(), Tier::Warm))
        .collect();

    if spec.adversarial {
        // a shift that lands exactly on another seed is that seed, not a collision
        let seed_texts: BTreeSet<&str> = seeds.iter().map(|s| s.text.as_str()).collect();
        let shifted: Vec<ScenarioRow> = seeds
            .iter()
            .filter_map(|s| {
                Some(ScenarioRow {
                    id: String::new(),
                    parent_id: format!("{}~shift", s.parent_id),
                    text: shifter.shift(&s.text).filter(|t| !seed_texts.contains(t.as_str()))?,
                    tier: Tier::Cold,
                    timestamp: s.timestamp,
                })
            })
            .collect();
        if n_cold > 0 && shifted.is_empty() {
            return Err(WorkloadError::InsufficientCold { needed: n_cold });
        }
        test.extend((0..n_cold).map(|i| shifted[i % shifted.len()].clone()));
    } else {
        if n_cold > 0 && cold.is_empty() {
            return Err(WorkloadError::InsufficientCold { needed: n_cold });
        }
        test.extend((0..n_cold).map(|i| variant_row(cold[i % cold.len()], i, cold.len(), Tier::Cold)));
    }

    test.shuffle(&mut rng);
    for (i, row) in test.iter_mut().enumerate() {
        row.id = format!("t{:03}", i + 1);
    }

    Ok(Workload {
        seeds,
        test,
        warm_parents: warm.iter().map(|p| p.parent_id.clone()).collect(),
    })
}
