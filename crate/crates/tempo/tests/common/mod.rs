#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use tempo::config::{sim_registry, SimSection};
use tempo::mcpio::{ServerPool, ServerSpec};

pub const TIMEOUT: Duration = Duration::from_secs(10);

pub fn sim_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_tempo-sim"))
}

pub fn sim(domain: &str) -> ServerSpec {
    ServerSpec::new(domain, sim_bin()).arg(domain)
}

/// The four simulators with the given latency, startup delay and optional log.
pub fn registry(latency_ms: u64, startup_ms: u64, log: Option<&Path>) -> Vec<ServerSpec> {
    let sim = SimSection {
        latency_ms,
        startup_ms,
        ..Default::default()
    };
    let mut specs = sim_registry(&sim_bin(), &sim);
    if let Some(log) = log {
        for s in &mut specs {
            s.env.insert("TEMPO_SIM_LOG".into(), log.display().to_string());
        }
    }
    specs
}

pub fn pool(latency_ms: u64, startup_ms: u64, log: Option<&Path>) -> ServerPool {
    ServerPool::new(registry(latency_ms, startup_ms, log), TIMEOUT).unwrap()
}

/// One line of a simulator log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    pub domain: String,
    pub pid: u32,
    pub event: String,
    pub id: u64,
    pub tool: String,
    pub nanos: u128,
}

pub fn read_log(path: &Path) -> Vec<LogEvent> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            LogEvent {
                domain: f[0].into(),
                pid: f[1].parse().unwrap(),
                event: f[2].into(),
                id: f[3].parse().unwrap(),
                tool: f[4].into(),
                nanos: f[5].parse().unwrap(),
            }
        })
        .collect()
}
