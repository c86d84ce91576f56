//! MCP stdio client, the session pool and the simulated domain servers.

use std::time::Duration;

pub mod pool;
pub mod session;
pub mod sim;
pub mod wire;

pub use pool::{PoolStats, PooledSession, ServerPool, ServerStats};
pub use session::{ServerSession, ServerSpec, SessionState, WireCounters};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McpError {
    #[error("server {0:?} is not registered")]
    Unregistered(String),
    #[error("cannot start server {server:?}: {reason}")]
    Spawn { server: String, reason: String },
    #[error("protocol error from {server:?}: {detail}")]
    Protocol { server: String, detail: String },
    #[error("{server:?} did not answer {method} within {after:?}")]
    Timeout {
        server: String,
        method: String,
        after: Duration,
    },
    #[error("{server:?} returned JSON-RPC error {code}: {message}")]
    Rpc {
        server: String,
        code: i64,
        message: String,
    },
    #[error("{server}.{tool} failed: {message}")]
    Tool {
        server: String,
        tool: String,
        message: String,
    },
    #[error("session for {0:?} has failed")]
    Failed(String),
    #[error("session for {0:?} is closed")]
    Closed(String),
}

impl McpError {
    /// True for errors that leave the session usable.
    pub fn is_tool_error(&self) -> bool {
        matches!(self, Self::Tool { .. } | Self::Rpc { .. })
    }
}
