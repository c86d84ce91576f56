//! Plans as DAGs of tool invocations.
//!
//! A plan step's argument template may reference earlier outputs with
//! `$stepN` placeholders inside string leaves. A placeholder that spans the
//! whole leaf and an embedded one are substituted the same way: with the
//! string rendering of step N's output (the string itself, or compact JSON
//! for any other value).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::ToolCatalog;

pub type StepId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    pub step_id: StepId,
    pub server: String,
    pub tool: String,
    #[serde(default)]
    pub args_template: Map<String, Value>,
    #[serde(default)]
    pub depends_on: BTreeSet<StepId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    #[serde(default)]
    pub query_id: String,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("step id 0 is not allowed")]
    ZeroStepId,
    #[error("step id {0} declared twice")]
    DuplicateStepId(StepId),
    #[error("step {step} uses unknown tool {server}.{tool}")]
    UnknownTool {
        step: StepId,
        server: String,
        tool: String,
    },
    #[error("step {step} depends on missing step {dep}")]
    UnknownDependency { step: StepId, dep: StepId },
    #[error("dependency cycle through steps {0:?}")]
    Cycle(Vec<StepId>),
    #[error("step {step} depends on later-declared step {dep}")]
    ForwardDependency { step: StepId, dep: StepId },
    #[error("step {step} references $step{referenced} which is not among its dependencies")]
    DanglingPlaceholder { step: StepId, referenced: StepId },
}

impl Plan {
    pub fn new(query_id: impl Into<String>, steps: Vec<PlanStep>) -> Self {
        Self {
            query_id: query_id.into(),
            steps,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, id: StepId) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.step_id == id)
    }

    pub fn servers(&self) -> BTreeSet<&str> {
        self.steps.iter().map(|s| s.server.as_str()).collect()
    }

    /// Structural validation plus a check that every tool is in `catalog`.
    pub fn validate(&self, catalog: &ToolCatalog) -> Result<(), PlanError> {
        self.validate_structure()?;
        for s in &self.steps {
            if !catalog.contains(&s.server, &s.tool) {
                return Err(PlanError::UnknownTool {
                    step: s.step_id,
                    server: s.server.clone(),
                    tool: s.tool.clone(),
                });
            }
        }
        Ok(())
    }

    /// Unique positive ids, known dependencies, acyclic, dependencies declared
    /// earlier, placeholders housed in `depends_on`.
    pub fn validate_structure(&self) -> Result<(), PlanError> {
        let mut ids = BTreeSet::new();
        for s in &self.steps {
            if s.step_id == 0 {
                return Err(PlanError::ZeroStepId);
            }
            if !ids.insert(s.step_id) {
                return Err(PlanError::DuplicateStepId(s.step_id));
            }
        }
        for s in &self.steps {
            if let Some(&dep) = s.depends_on.iter().find(|d| !ids.contains(*d)) {
                return Err(PlanError::UnknownDependency {
                    step: s.step_id,
                    dep,
                });
            }
        }
        layer_plan(self)?;
        let mut declared = BTreeSet::new();
        for s in &self.steps {
            if let Some(&dep) = s.depends_on.iter().find(|d| !declared.contains(*d)) {
                return Err(PlanError::ForwardDependency {
                    step: s.step_id,
                    dep,
                });
            }
            declared.insert(s.step_id);
            for referenced in template_placeholders(&s.args_template) {
                if !s.depends_on.contains(&referenced) {
                    return Err(PlanError::DanglingPlaceholder {
                        step: s.step_id,
                        referenced,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Steps grouped into dependency layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayeredPlan {
    pub layers: Vec<Vec<StepId>>,
}

impl LayeredPlan {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_of(&self, id: StepId) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(&id))
    }
}

/// Kahn's algorithm, frontier by frontier. A step lands in layer
/// `1 + max(layer of its dependencies)`, i.e. the length of its longest
/// dependency chain; steps within a layer are in ascending id order.
pub fn layer_plan(plan: &Plan) -> Result<LayeredPlan, PlanError> {
    let mut indegree: BTreeMap<StepId, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<StepId, Vec<StepId>> = BTreeMap::new();
    for s in &plan.steps {
        indegree.insert(s.step_id, s.depends_on.len());
        dependents.entry(s.step_id).or_default();
    }
    for s in &plan.steps {
        for &dep in &s.depends_on {
            dependents
                .get_mut(&dep)
                .ok_or(PlanError::UnknownDependency {
                    step: s.step_id,
                    dep,
                })?
                .push(s.step_id);
        }
    }

    let mut frontier: Vec<StepId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut layers = Vec::new();
    let mut placed = 0;
    while !frontier.is_empty() {
        frontier.sort_unstable();
        let mut next = Vec::new();
        for &id in &frontier {
            for &child in &dependents[&id] {
                let d = indegree.get_mut(&child).expect("child is a plan step");
                *d -= 1;
                if *d == 0 {
                    next.push(child);
                }
            }
        }
        placed += frontier.len();
        layers.push(core::mem::replace(&mut frontier, next));
    }
    if placed != indegree.len() {
        let stuck = indegree
            .into_iter()
            .filter(|&(_, d)| d > 0)
            .map(|(id, _)| id)
            .collect();
        return Err(PlanError::Cycle(stuck));
    }
    Ok(LayeredPlan { layers })
}

/// Every `$stepN` reference in `s`, in order of appearance.
pub fn placeholders(s: &str) -> Vec<StepId> {
    let mut out = Vec::new();
    scan_placeholders(s, |id, _, _| out.push(id));
    out
}

fn scan_placeholders(s: &str, mut found: impl FnMut(StepId, usize, usize)) {
    const TAG: &str = "$step";
    let bytes = s.as_bytes();
    let mut from = 0;
    while let Some(pos) = s[from..].find(TAG) {
        let start = from + pos;
        let digits_start = start + TAG.len();
        let mut end = digits_start;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        if end > digits_start {
            if let Ok(id) = s[digits_start..end].parse::<StepId>() {
                found(id, start, end);
            }
        }
        from = end.max(start + 1);
    }
}

pub fn template_placeholders(template: &Map<String, Value>) -> BTreeSet<StepId> {
    fn walk(v: &Value, out: &mut BTreeSet<StepId>) {
        match v {
            Value::String(s) => out.extend(placeholders(s)),
            Value::Array(items) => items.iter().for_each(|i| walk(i, out)),
            Value::Object(map) => map.values().for_each(|i| walk(i, out)),
            _ => {}
        }
    }
    let mut out = BTreeSet::new();
    template.values().for_each(|v| walk(v, &mut out));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step_id: StepId,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(with = "duration_micros")]
    pub latency: Duration,
    pub layer_index: usize,
}

impl StepResult {
    pub fn ok(step_id: StepId, output: Value, latency: Duration, layer_index: usize) -> Self {
        Self {
            step_id,
            status: StepStatus::Ok,
            output: Some(output),
            error: None,
            latency,
            layer_index,
        }
    }

    pub fn error(
        step_id: StepId,
        error: impl Into<String>,
        latency: Duration,
        layer_index: usize,
    ) -> Self {
        Self {
            step_id,
            status: StepStatus::Error,
            output: None,
            error: Some(error.into()),
            latency,
            layer_index,
        }
    }

    pub fn skipped(step_id: StepId, reason: impl Into<String>, layer_index: usize) -> Self {
        Self {
            step_id,
            status: StepStatus::Skipped,
            output: None,
            error: Some(reason.into()),
            latency: Duration::ZERO,
            layer_index,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == StepStatus::Ok
    }
}

pub mod duration_micros {
    use core::time::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_micros)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("step {step}: dependency {dep} has no result")]
    MissingDependency { step: StepId, dep: StepId },
    #[error("step {step}: dependency {dep} did not succeed")]
    FailedDependency { step: StepId, dep: StepId },
}

/// String rendering used for substitution.
pub fn render_output(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Substitutes `$stepN` placeholders with completed outputs.
pub fn resolve_args(
    step: &PlanStep,
    completed: &BTreeMap<StepId, StepResult>,
) -> Result<Map<String, Value>, ResolveError> {
    let mut needed: BTreeSet<StepId> = step.depends_on.clone();
    needed.extend(template_placeholders(&step.args_template));
    let mut rendered: BTreeMap<StepId, String> = BTreeMap::new();
    for dep in needed {
        let result = completed
            .get(&dep)
            .ok_or(ResolveError::MissingDependency {
                step: step.step_id,
                dep,
            })?;
        match (&result.status, &result.output) {
            (StepStatus::Ok, Some(out)) => {
                rendered.insert(dep, render_output(out));
            }
            _ => {
                return Err(ResolveError::FailedDependency {
                    step: step.step_id,
                    dep,
                })
            }
        }
    }

    fn subst(v: &Value, rendered: &BTreeMap<StepId, String>) -> Value {
        match v {
            Value::String(s) => {
                let mut out = String::with_capacity(s.len());
                let mut last = 0;
                scan_placeholders(s, |id, start, end| {
                    out.push_str(&s[last..start]);
                    out.push_str(&rendered[&id]);
                    last = end;
                });
                out.push_str(&s[last..]);
                Value::String(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(|i| subst(i, rendered)).collect()),
            Value::Object(map) => Value::Object(
                map.iter()
                    .map(|(k, v)| (k.clone(), subst(v, rendered)))
                    .collect(),
            ),
            other => other.clone(),
        }
    }

    Ok(step
        .args_template
        .iter()
        .map(|(k, v)| (k.clone(), subst(v, &rendered)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    pub(crate) fn step(id: StepId, deps: &[StepId]) -> PlanStep {
        PlanStep {
            step_id: id,
            server: "iot".to_string(),
            tool: "t".to_string(),
            args_template: Map::new(),
            depends_on: deps.iter().copied().collect(),
        }
    }

    fn layers(plan: &Plan) -> Vec<Vec<StepId>> {
        layer_plan(plan).unwrap().layers
    }

    #[test]
    fn layering_examples() {
        let chain = Plan::new("q", vec![step(1, &[]), step(2, &[1]), step(3, &[2])]);
        assert_eq!(layers(&chain), vec![vec![1], vec![2], vec![3]]);

        let q6 = Plan::new(
            "q",
            vec![step(1, &[]), step(2, &[]), step(3, &[1]), step(4, &[2]), step(5, &[3, 4])],
        );
        assert_eq!(layers(&q6), vec![vec![1, 2], vec![3, 4], vec![5]]);

        let diamond = Plan::new(
            "q",
            vec![step(1, &[]), step(2, &[1]), step(3, &[1]), step(4, &[2, 3])],
        );
        assert_eq!(layers(&diamond), vec![vec![1], vec![2, 3], vec![4]]);

        assert!(layers(&Plan::new("q", vec![])).is_empty());
    }

    #[test]
    fn layering_detects_cycle() {
        let p = Plan::new("q", vec![step(1, &[2]), step(2, &[1]), step(3, &[])]);
        assert_eq!(layer_plan(&p), Err(PlanError::Cycle(vec![1, 2])));
    }

    #[test]
    fn validation_classes() {
        let dup = Plan::new("q", vec![step(1, &[]), step(1, &[])]);
        assert_eq!(dup.validate_structure(), Err(PlanError::DuplicateStepId(1)));

        let cyc = Plan::new("q", vec![step(1, &[2]), step(2, &[1])]);
        assert!(matches!(cyc.validate_structure(), Err(PlanError::Cycle(_))));

        let fwd = Plan::new("q", vec![step(1, &[2]), step(2, &[])]);
        assert_eq!(
            fwd.validate_structure(),
            Err(PlanError::ForwardDependency { step: 1, dep: 2 })
        );

        let unknown = Plan::new("q", vec![step(1, &[9])]);
        assert_eq!(
            unknown.validate_structure(),
            Err(PlanError::UnknownDependency { step: 1, dep: 9 })
        );

        let mut dangling = step(2, &[]);
        dangling.args_template.insert("a".to_string(), json!("x $step1 y"));
        let p = Plan::new("q", vec![step(1, &[]), dangling]);
        assert_eq!(
            p.validate_structure(),
            Err(PlanError::DanglingPlaceholder {
                step: 2,
                referenced: 1
            })
        );
    }

    #[test]
    fn placeholder_scanning() {
        assert_eq!(placeholders("$step1 and $step12, $stepx $step"), vec![1, 12]);
        assert!(placeholders("no refs").is_empty());
    }

    fn done(id: StepId, out: Value) -> (StepId, StepResult) {
        (id, StepResult::ok(id, out, Duration::ZERO, 0))
    }

    #[test]
    fn resolve_args_substitutes() {
        let mut s = step(2, &[1]);
        s.args_template.insert("asset".to_string(), json!("$step1"));
        let completed: BTreeMap<_, _> = [done(1, json!("Chiller6"))].into_iter().collect();
        assert_eq!(resolve_args(&s, &completed).unwrap(), json!({"asset": "Chiller6"}).as_object().unwrap().clone());
    }

    #[test]
    fn resolve_args_renders_non_strings_compactly() {
        let mut s = step(3, &[1, 2]);
        s.args_template.insert("list".to_string(), json!("$step1"));
        s.args_template.insert("nested".to_string(), json!({"k": ["pre $step2 post", 4]}));
        let completed: BTreeMap<_, _> = [done(1, json!(["a", "b"])), done(2, json!({"x": 1}))]
            .into_iter()
            .collect();
        let got = resolve_args(&s, &completed).unwrap();
        assert_eq!(got["list"], json!("[\"a\",\"b\"]"));
        assert_eq!(got["nested"], json!({"k": ["pre {\"x\":1} post", 4]}));
    }

    #[test]
    fn resolve_args_identity_without_placeholders() {
        let mut s = step(1, &[]);
        s.args_template.insert("a".to_string(), json!({"b": [1, "c"]}));
        let got = resolve_args(&s, &BTreeMap::new()).unwrap();
        assert_eq!(got, s.args_template);
    }

    #[test]
    fn resolve_args_failed_dependency() {
        let mut s = step(2, &[1]);
        s.args_template.insert("a".to_string(), json!("$step1"));
        let failed: BTreeMap<_, _> =
            [(1, StepResult::error(1, "boom", Duration::ZERO, 0))].into_iter().collect();
        assert_eq!(
            resolve_args(&s, &failed),
            Err(ResolveError::FailedDependency { step: 2, dep: 1 })
        );
        assert_eq!(
            resolve_args(&s, &BTreeMap::new()),
            Err(ResolveError::MissingDependency { step: 2, dep: 1 })
        );
    }

    #[test]
    fn plan_json_is_strict() {
        let ok: Plan = serde_json::from_str(
            r#"{"query_id":"q","steps":[{"step_id":1,"server":"iot","tool":"t","args_template":{},"depends_on":[]}]}"#,
        )
        .unwrap();
        assert_eq!(ok.steps.len(), 1);
        let bad = serde_json::from_str::<Plan>(
            r#"{"steps":[{"step_id":1,"server":"iot","tool":"t","extra":1}]}"#,
        );
        assert!(bad.is_err());
    }
}
