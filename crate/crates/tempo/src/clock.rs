//! Phase timing: measured wall time, or a deterministic cost model.
//!
//! The simulated clock charges fixed costs for the events a phase performed
//! (process starts, wire round trips, model calls) and composes them the way
//! the work actually overlapped, so reports are reproducible byte for byte.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::discovery::{CatalogSource, Discovery};
use crate::executor::{ExecMode, Execution, Prefetch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Starting a server process and completing the handshake.
    #[serde(with = "millis")]
    pub spawn: Duration,
    /// One `tools/list` round trip.
    #[serde(with = "millis")]
    pub list: Duration,
    /// One `tools/call` round trip.
    #[serde(with = "millis")]
    pub call: Duration,
    /// Reading the discovery cache file.
    #[serde(with = "millis")]
    pub disk_read: Duration,
    /// One planner or summarizer completion.
    #[serde(with = "millis")]
    pub model: Duration,
    /// Classification plus cache lookup.
    #[serde(with = "millis")]
    pub lookup: Duration,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            spawn: Duration::from_millis(300),
            list: Duration::from_millis(20),
            call: Duration::from_millis(200),
            disk_read: Duration::from_millis(1),
            model: Duration::from_millis(1500),
            lookup: Duration::from_millis(5),
        }
    }
}

pub(crate) mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl CostModel {
    pub fn discovery(&self, d: &Discovery, mode_sequential: bool) -> Duration {
        if d.source == CatalogSource::DiskCache {
            return self.disk_read;
        }
        let per = d
            .contacted
            .iter()
            .map(|(_, spawned)| self.list + if *spawned { self.spawn } else { Duration::ZERO });
        if mode_sequential {
            per.sum()
        } else {
            per.max().unwrap_or_default()
        }
    }

    pub fn prefetch(&self, p: &Prefetch) -> Duration {
        if p.spawned.is_empty() {
            Duration::ZERO
        } else {
            self.spawn
        }
    }

    /// Sequential: every executed step pays a spawn and a call. Parallel:
    /// layers add up; within a layer servers overlap and each server's calls
    /// queue behind one another.
    pub fn execution(&self, e: &Execution) -> Duration {
        let ran = e.trace.iter().filter(|t| t.dispatched);
        match e.mode {
            ExecMode::Sequential => ran
                .map(|t| self.call + if t.spawned { self.spawn } else { Duration::ZERO })
                .sum(),
            ExecMode::Parallel => {
                let mut per_layer: BTreeMap<usize, BTreeMap<&str, Duration>> = BTreeMap::new();
                for t in ran {
                    let slot = per_layer
                        .entry(t.layer)
                        .or_default()
                        .entry(t.server.as_str())
                        .or_default();
                    *slot += self.call + if t.spawned { self.spawn } else { Duration::ZERO };
                }
                per_layer
                    .values()
                    .map(|servers| servers.values().copied().max().unwrap_or_default())
                    .sum()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Wall,
    Simulated(CostModel),
}

impl Clock {
    pub fn is_simulated(&self) -> bool {
        matches!(self, Clock::Simulated(_))
    }

    /// Picks the measured or the modelled duration.
    pub fn charge(&self, wall: Duration, modelled: impl FnOnce(&CostModel) -> Duration) -> Duration {
        match self {
            Clock::Wall => wall,
            Clock::Simulated(m) => modelled(m),
        }
    }
}
