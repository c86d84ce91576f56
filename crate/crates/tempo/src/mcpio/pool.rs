use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tempo_core::catalog::ToolSignature;
use tokio::sync::{Mutex, OwnedMutexGuard};

use super::session::{ServerSession, ServerSpec, SessionState, WireCounters};
use super::McpError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const CLOSE_GRACE: Duration = Duration::from_secs(2);

enum Slot {
    Empty,
    Live(Box<ServerSession>),
    Failed,
}

struct Entry {
    spec: ServerSpec,
    slot: Arc<Mutex<Slot>>,
    counters: Arc<WireCounters>,
    respawns: AtomicU64,
}

/// Per-server counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    /// Pooled sessions started.
    pub spawns: u64,
    /// Short-lived sessions started outside the pool.
    pub ephemeral_spawns: u64,
    /// Requests written to the wire, handshakes included.
    pub messages: u64,
    /// Pooled spawns that replaced a failed session.
    pub respawns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub servers: BTreeMap<String, ServerStats>,
}

impl PoolStats {
    pub fn total_spawns(&self) -> u64 {
        self.servers
            .values()
            .map(|s| s.spawns + s.ephemeral_spawns)
            .sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.servers.values().map(|s| s.messages).sum()
    }

    pub fn get(&self, server: &str) -> ServerStats {
        self.servers.get(server).copied().unwrap_or_default()
    }
}

/// Exclusive handle on a pooled session; the server stays locked until drop.
pub struct PooledSession {
    guard: OwnedMutexGuard<Slot>,
    spawned: bool,
}

impl PooledSession {
    /// Whether this acquisition had to start a process.
    pub fn spawned(&self) -> bool {
        self.spawned
    }
}

impl Deref for PooledSession {
    type Target = ServerSession;

    fn deref(&self) -> &ServerSession {
        match &*self.guard {
            Slot::Live(s) => s,
            _ => unreachable!("PooledSession always wraps a live slot"),
        }
    }
}

impl DerefMut for PooledSession {
    fn deref_mut(&mut self) -> &mut ServerSession {
        match &mut *self.guard {
            Slot::Live(s) => s,
            _ => unreachable!("PooledSession always wraps a live slot"),
        }
    }
}

/// Result of one tool call plus whether it paid for a process start.
#[derive(Debug, Clone, PartialEq)]
pub struct CallReport {
    pub result: Result<Value, McpError>,
    pub spawned: bool,
}

/// At most one live session per registered server. Each server sits behind
/// its own async mutex, so calls to one server are serialized while distinct
/// servers proceed independently.
pub struct ServerPool {
    entries: BTreeMap<String, Entry>,
    timeout: Duration,
}

impl std::fmt::Debug for ServerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerPool")
            .field("servers", &self.entries.keys().collect::<Vec<_>>())
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ServerPool {
    /// Errors on duplicate names.
    pub fn new(specs: impl IntoIterator<Item = ServerSpec>, timeout: Duration) -> Result<Self, McpError> {
        let mut entries = BTreeMap::new();
        for spec in specs {
            let name = spec.name.clone();
            let entry = Entry {
                spec,
                slot: Arc::new(Mutex::new(Slot::Empty)),
                counters: Arc::default(),
                respawns: AtomicU64::new(0),
            };
            if entries.insert(name.clone(), entry).is_some() {
                return Err(McpError::Spawn {
                    server: name,
                    reason: "registered twice".into(),
                });
            }
        }
        Ok(Self { entries, timeout })
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ServerSpec> {
        self.entries.values().map(|e| &e.spec)
    }

    pub fn spec(&self, name: &str) -> Option<&ServerSpec> {
        self.entries.get(name).map(|e| &e.spec)
    }

    fn entry(&self, name: &str) -> Result<&Entry, McpError> {
        self.entries
            .get(name)
            .ok_or_else(|| McpError::Unregistered(name.to_string()))
    }

    /// Returns the live session, or starts one. A failed session gets exactly
    /// one replacement attempt per call.
    pub async fn acquire(&self, name: &str) -> Result<PooledSession, McpError> {
        let entry = self.entry(name)?;
        let mut guard = entry.slot.clone().lock_owned().await;
        if let Slot::Live(s) = &*guard {
            if s.is_ready() {
                return Ok(PooledSession {
                    guard,
                    spawned: false,
                });
            }
        }
        let replacing = !matches!(*guard, Slot::Empty);
        if let Slot::Live(old) = std::mem::replace(&mut *guard, Slot::Failed) {
            old.close(Duration::ZERO).await;
        }
        if replacing {
            entry.respawns.fetch_add(1, Ordering::Relaxed);
        }
        entry.counters.spawns.fetch_add(1, Ordering::Relaxed);
        match ServerSession::spawn(&entry.spec, self.timeout, entry.counters.clone()).await {
            Ok(session) => {
                *guard = Slot::Live(Box::new(session));
                Ok(PooledSession {
                    guard,
                    spawned: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Current state of a server's pooled session, `None` if never started.
    pub async fn state(&self, name: &str) -> Result<Option<SessionState>, McpError> {
        let entry = self.entry(name)?;
        Ok(match &*entry.slot.lock().await {
            Slot::Empty => None,
            Slot::Live(s) => Some(s.state()),
            Slot::Failed => Some(SessionState::Failed),
        })
    }

    pub async fn call(&self, server: &str, tool: &str, args: Map<String, Value>) -> CallReport {
        let mut session = match self.acquire(server).await {
            Ok(s) => s,
            Err(e) => {
                return CallReport {
                    result: Err(e),
                    spawned: true,
                }
            }
        };
        let spawned = session.spawned();
        let result = session.call_tool(tool, args, self.timeout).await;
        CallReport { result, spawned }
    }

    pub async fn list_tools(&self, server: &str) -> Result<Vec<ToolSignature>, McpError> {
        let mut session = self.acquire(server).await?;
        session.list_tools(self.timeout).await
    }

    /// Starts a throwaway session, makes one call, and shuts it down.
    pub async fn ephemeral_call(&self, server: &str, tool: &str, args: Map<String, Value>) -> Result<Value, McpError> {
        let mut session = self.ephemeral(server).await?;
        let out = session.call_tool(tool, args, self.timeout).await;
        session.close(CLOSE_GRACE).await;
        out
    }

    pub async fn ephemeral_list(&self, server: &str) -> Result<Vec<ToolSignature>, McpError> {
        let mut session = self.ephemeral(server).await?;
        let out = session.list_tools(self.timeout).await;
        session.close(CLOSE_GRACE).await;
        out
    }

    async fn ephemeral(&self, server: &str) -> Result<ServerSession, McpError> {
        let entry = self.entry(server)?;
        entry.counters.ephemeral_spawns.fetch_add(1, Ordering::Relaxed);
        ServerSession::spawn(&entry.spec, self.timeout, entry.counters.clone()).await
    }

    pub fn stats(&self) -> PoolStats {
        PoolStats {
            servers: self
                .entries
                .iter()
                .map(|(name, e)| {
                    (
                        name.clone(),
                        ServerStats {
                            spawns: e.counters.spawns.load(Ordering::Relaxed),
                            ephemeral_spawns: e.counters.ephemeral_spawns.load(Ordering::Relaxed),
                            messages: e.counters.messages.load(Ordering::Relaxed),
                            respawns: e.respawns.load(Ordering::Relaxed),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Closes every live session; the pool can be reused afterwards.
    pub async fn shutdown(&self) {
        for entry in self.entries.values() {
            let mut guard = entry.slot.lock().await;
            if let Slot::Live(s) = std::mem::replace(&mut *guard, Slot::Empty) {
                s.close(CLOSE_GRACE).await;
            }
        }
    }
}
