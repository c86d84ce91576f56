mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use serde_json::json;
use tempo::core::plan::{Plan, PlanStep, StepStatus};
use tempo::core::planner::StubModelClient;
use tempo::executor::{execute, prefetch_sessions, ExecMode};
use tempo::harness::corpus_timestamp;
use tempo::mcpio::ServerPool;

use common::*;

const Q6: &str = "What failure modes of Chiller 6 can be detected by its Efficiency sensor";

fn q6() -> Plan {
    StubModelClient::default().book().plan_for(Q6, corpus_timestamp(), "q6")
}

fn step(id: u32, server: &str, tool: &str, args: serde_json::Value, deps: &[u32]) -> PlanStep {
    PlanStep {
        step_id: id,
        server: server.into(),
        tool: tool.into(),
        args_template: args.as_object().cloned().unwrap(),
        depends_on: deps.iter().copied().collect(),
    }
}

#[tokio::test]
async fn q6_runs_in_three_layers() {
    let plan = q6();
    assert_eq!(plan.steps.len(), 5);
    let pool = pool(0, 0, None);
    let exec = execute(&plan, &pool, ExecMode::Parallel).await.unwrap();
    assert!(exec.all_ok(), "{:?}", exec.results);
    let layers: Vec<usize> = exec.results.iter().map(|r| r.layer_index).collect();
    assert_eq!(layers, [0, 0, 1, 1, 2]);
    let answer = exec.result(5).unwrap().output.clone().unwrap();
    assert_eq!(answer.as_array().map(Vec::len), Some(3), "{answer}");
    pool.shutdown().await;
}

#[tokio::test]
async fn parallel_follows_the_critical_path() {
    let l = Duration::from_millis(100);
    let pool = pool(l.as_millis() as u64, 0, None);
    let plan = q6();
    let seq = execute(&plan, &pool, ExecMode::Sequential).await.unwrap();
    prefetch_sessions(&pool, &plan).await;
    let par = execute(&plan, &pool, ExecMode::Parallel).await.unwrap();
    assert!(seq.elapsed >= l * 5, "{:?}", seq.elapsed);
    assert!(par.elapsed >= l * 3 && par.elapsed < l * 4, "{:?}", par.elapsed);
    pool.shutdown().await;
}

#[tokio::test]
async fn no_step_starts_before_its_dependencies_finish() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sim.log");
    let pool = pool(30, 0, Some(&log));
    let plan = q6();
    let exec = execute(&plan, &pool, ExecMode::Parallel).await.unwrap();
    assert!(exec.all_ok());
    pool.shutdown().await;
    let events = read_log(&log);
    let at = |tool: &str, event: &str| events.iter().find(|e| e.tool == tool && e.event == event).unwrap().nanos;
    for s in &plan.steps {
        for d in &s.depends_on {
            let dep = plan.step(*d).unwrap();
            assert!(at(&s.tool, "recv") >= at(&dep.tool, "done"), "{} before {}", s.tool, dep.tool);
        }
    }
}

#[tokio::test]
async fn same_server_steps_do_not_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sim.log");
    let pool = pool(50, 0, Some(&log));
    let plan = Plan::new(
        "q",
        vec![
            step(1, "wo", "list_work_orders", json!({"asset": "Chiller 6"}), &[]),
            step(2, "wo", "count_work_orders", json!({"asset": "Chiller 6"}), &[]),
            step(3, "wo", "get_work_order", json!({"id": "WO-1001"}), &[]),
        ],
    );
    let exec = execute(&plan, &pool, ExecMode::Parallel).await.unwrap();
    assert!(exec.all_ok(), "{:?}", exec.results);
    assert!(exec.elapsed >= Duration::from_millis(150));
    pool.shutdown().await;
    let events = read_log(&log);
    assert_eq!(events.len(), 6);
    // recv/done strictly alternate on a single server
    for pair in events.chunks(2) {
        assert_eq!((pair[0].event.as_str(), pair[1].event.as_str()), ("recv", "done"));
        assert_eq!(pair[0].id, pair[1].id);
    }
}

#[tokio::test]
async fn failing_step_skips_only_its_dependents() {
    let mut specs = registry(0, 0, None);
    for s in &mut specs {
        if s.name == "iot" {
            s.env.insert("TEMPO_SIM_FAULT".into(), "error".into());
        }
    }
    let pool = ServerPool::new(specs, TIMEOUT).unwrap();
    for mode in [ExecMode::Parallel, ExecMode::Sequential] {
        let exec = execute(&q6(), &pool, mode).await.unwrap();
        let status: Vec<StepStatus> = exec.results.iter().map(|r| r.status).collect();
        assert_eq!(
            status,
            [StepStatus::Error, StepStatus::Ok, StepStatus::Skipped, StepStatus::Ok, StepStatus::Skipped],
            "{mode:?}"
        );
        assert!(!exec.trace[2].dispatched && !exec.trace[4].dispatched);
    }
    pool.shutdown().await;
}

#[tokio::test]
async fn other_servers_finish_when_one_always_errors() {
    let mut specs = registry(0, 0, None);
    for s in &mut specs {
        if s.name == "wo" {
            s.env.insert("TEMPO_SIM_FAULT".into(), "error".into());
        }
    }
    let pool = ServerPool::new(specs, TIMEOUT).unwrap();
    let book = StubModelClient::default();
    for sc in book.book().scenarios() {
        let plan = book.book().plan_for(&sc.render(0).unwrap(), corpus_timestamp(), &sc.id);
        let exec = execute(&plan, &pool, ExecMode::Parallel).await.unwrap();
        for (s, r) in plan.steps.iter().zip(&exec.results) {
            let upstream_wo = s.server == "wo" || s.depends_on.iter().any(|d| plan.step(*d).unwrap().server == "wo");
            if !upstream_wo {
                assert_eq!(r.status, StepStatus::Ok, "{} step {}", sc.id, s.step_id);
            }
        }
    }
    pool.shutdown().await;
}

#[tokio::test]
async fn both_modes_produce_the_same_outputs() {
    let pool = pool(0, 0, None);
    let book = StubModelClient::default();
    for sc in book.book().scenarios() {
        for i in 0..sc.params.len() {
            let plan = book.book().plan_for(&sc.render(i).unwrap(), corpus_timestamp(), &sc.parent_id(i));
            let seq = execute(&plan, &pool, ExecMode::Sequential).await.unwrap();
            let par = execute(&plan, &pool, ExecMode::Parallel).await.unwrap();
            assert!(seq.all_ok(), "{}: {:?}", sc.parent_id(i), seq.results);
            let outputs = |e: &tempo::executor::Execution| -> BTreeMap<u32, serde_json::Value> {
                e.results.iter().map(|r| (r.step_id, r.output.clone().unwrap())).collect()
            };
            assert_eq!(outputs(&seq), outputs(&par), "{}", sc.parent_id(i));
        }
    }
    pool.shutdown().await;
}

#[tokio::test]
async fn empty_plan_is_a_no_op() {
    let pool = pool(0, 0, None);
    let exec = execute(&Plan::new("q", vec![]), &pool, ExecMode::Parallel).await.unwrap();
    assert!(exec.results.is_empty() && exec.elapsed < Duration::from_millis(10));
    assert_eq!(pool.stats().total_spawns(), 0);
}

#[tokio::test]
async fn prefetch_starts_servers_together() {
    let startup = Duration::from_millis(250);
    let pool = pool(0, startup.as_millis() as u64, None);
    let plan = q6();
    let cold = prefetch_sessions(&pool, &plan).await;
    assert_eq!(cold.spawned, ["fmsr", "iot"]);
    assert!(cold.elapsed >= startup && cold.elapsed < startup * 2, "{:?}", cold.elapsed);
    let warm = prefetch_sessions(&pool, &plan).await;
    assert!(warm.spawned.is_empty() && warm.elapsed < Duration::from_millis(10));
    pool.shutdown().await;
}

#[tokio::test]
async fn prefetch_isolates_unreachable_servers() {
    let mut specs = registry(0, 0, None);
    specs.retain(|s| s.name != "fmsr");
    specs.push(tempo::mcpio::ServerSpec::new("fmsr", "/nonexistent/fmsr"));
    let pool = ServerPool::new(specs, TIMEOUT).unwrap();
    let p = prefetch_sessions(&pool, &q6()).await;
    assert!(p.failures.contains_key("fmsr") && !p.failures.contains_key("iot"));
    assert_eq!(pool.state("iot").await.unwrap(), Some(tempo::mcpio::SessionState::Ready));
    let exec = execute(&q6(), &pool, ExecMode::Parallel).await.unwrap();
    assert!(exec.results[0].is_ok() && exec.results[2].is_ok());
    pool.shutdown().await;
}
