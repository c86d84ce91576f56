//! Plan execution: per-step throwaway sessions in declaration order, or
//! layer-synchronous fan-out over the session pool.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tempo_core::plan::{layer_plan, resolve_args, Plan, PlanError, PlanStep, StepId, StepResult};

use crate::mcpio::{McpError, ServerPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Per-step bookkeeping used by the cost model and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTrace {
    pub step_id: StepId,
    pub server: String,
    pub layer: usize,
    /// A request was sent (false for skipped steps).
    pub dispatched: bool,
    /// The call had to start a process.
    pub spawned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub mode: ExecMode,
    /// In plan declaration order.
    pub results: Vec<StepResult>,
    pub trace: Vec<StepTrace>,
    pub elapsed: Duration,
}

impl Execution {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(StepResult::is_ok)
    }

    pub fn result(&self, id: StepId) -> Option<&StepResult> {
        self.results.iter().find(|r| r.step_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prefetch {
    pub elapsed: Duration,
    /// Servers whose session had to be started.
    pub spawned: Vec<String>,
    pub failures: BTreeMap<String, McpError>,
}

/// Acquires one pooled session per server the plan names, all at once.
pub async fn prefetch_sessions(pool: &ServerPool, plan: &Plan) -> Prefetch {
    let started = Instant::now();
    let servers: Vec<&str> = plan.servers().into_iter().collect();
    let outcomes = join_all(servers.iter().map(|&name| async move {
        let r = pool.acquire(name).await.map(|s| s.spawned());
        (name, r)
    }))
    .await;
    let mut spawned = Vec::new();
    let mut failures = BTreeMap::new();
    for (name, r) in outcomes {
        match r {
            Ok(true) => spawned.push(name.to_string()),
            Ok(false) => {}
            Err(e) => {
                spawned.push(name.to_string());
                failures.insert(name.to_string(), e);
            }
        }
    }
    Prefetch {
        elapsed: started.elapsed(),
        spawned,
        failures,
    }
}

fn finish(step: &PlanStep, layer: usize, outcome: Result<serde_json::Value, McpError>, latency: Duration) -> StepResult {
    match outcome {
        Ok(v) => StepResult::ok(step.step_id, v, latency, layer),
        Err(e) => StepResult::error(step.step_id, e.to_string(), latency, layer),
    }
}

/// Runs every step; a failed step never stops the plan, it only skips the
/// steps that depend on it.
pub async fn execute(plan: &Plan, pool: &ServerPool, mode: ExecMode) -> Result<Execution, PlanError> {
    let layers = layer_plan(plan)?;
    let started = Instant::now();
    let mut done: BTreeMap<StepId, StepResult> = BTreeMap::new();
    let mut trace: BTreeMap<StepId, StepTrace> = BTreeMap::new();
    let layer_of = |id| layers.layer_of(id).expect("every step is layered");

    match mode {
        ExecMode::Sequential => {
            for step in &plan.steps {
                let layer = layer_of(step.step_id);
                let (result, dispatched) = match resolve_args(step, &done) {
                    Err(e) => (StepResult::skipped(step.step_id, e.to_string(), layer), false),
                    Ok(args) => {
                        let t = Instant::now();
                        let out = pool.ephemeral_call(&step.server, &step.tool, args).await;
                        (finish(step, layer, out, t.elapsed()), true)
                    }
                };
                trace.insert(
                    step.step_id,
                    StepTrace {
                        step_id: step.step_id,
                        server: step.server.clone(),
                        layer,
                        dispatched,
                        spawned: dispatched,
                    },
                );
                done.insert(step.step_id, result);
            }
        }
        ExecMode::Parallel => {
            for (layer, ids) in layers.layers.iter().enumerate() {
                let mut ready = Vec::new();
                for &id in ids {
                    let step = plan.step(id).expect("layered ids come from the plan");
                    match resolve_args(step, &done) {
                        Ok(args) => ready.push((step, args)),
                        Err(e) => {
                            trace.insert(
                                id,
                                StepTrace {
                                    step_id: id,
                                    server: step.server.clone(),
                                    layer,
                                    dispatched: false,
                                    spawned: false,
                                },
                            );
                            done.insert(id, StepResult::skipped(id, e.to_string(), layer));
                        }
                    }
                }
                let finished = join_all(ready.into_iter().map(|(step, args)| async move {
                    let t = Instant::now();
                    let report = pool.call(&step.server, &step.tool, args).await;
                    (step, report.spawned, finish(step, layer, report.result, t.elapsed()))
                }))
                .await;
                // barrier: the next layer only starts once every call above returned
                for (step, spawned, result) in finished {
                    trace.insert(
                        step.step_id,
                        StepTrace {
                            step_id: step.step_id,
                            server: step.server.clone(),
                            layer,
                            dispatched: true,
                            spawned,
                        },
                    );
                    done.insert(step.step_id, result);
                }
            }
        }
    }

    let elapsed = started.elapsed();
    let order = plan.steps.iter().map(|s| s.step_id);
    Ok(Execution {
        mode,
        results: order.clone().map(|id| done.remove(&id).expect("every step finishes")).collect(),
        trace: order.map(|id| trace.remove(&id).expect("every step is traced")).collect(),
        elapsed,
    })
}
