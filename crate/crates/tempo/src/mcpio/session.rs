use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tempo_core::catalog::ToolSignature;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::process::{Child, Command};

use super::wire::{self, Request, PROTOCOL_VERSION};
use super::McpError;

/// How to launch one tool server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub name: String,
    pub command: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

impl ServerSpec {
    pub fn new(name: impl Into<String>, command: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            command: command.into(),
            args: Vec::new(),
            env: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, a: impl Into<String>) -> Self {
        self.args.push(a.into());
        self
    }

    pub fn env(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.env.insert(k.into(), v.into());
        self
    }

    /// Program and arguments joined by spaces.
    pub fn command_line(&self) -> String {
        std::iter::once(self.command.display().to_string())
            .chain(self.args.iter().cloned())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Starting,
    Ready,
    Failed,
    Closed,
}

/// Wire instrumentation shared by every session of one server.
#[derive(Debug, Default)]
pub struct WireCounters {
    pub spawns: AtomicU64,
    pub ephemeral_spawns: AtomicU64,
    pub messages: AtomicU64,
}

type Reader = Box<dyn AsyncBufRead + Unpin + Send>;
type Writer = Box<dyn AsyncWrite + Unpin + Send>;

/// One JSON-RPC conversation with a server. Callers get `&mut` access only,
/// so a session never has more than one request in flight.
pub struct ServerSession {
    server: String,
    reader: Reader,
    writer: Writer,
    child: Option<Child>,
    next_id: u64,
    state: SessionState,
    counters: Arc<WireCounters>,
}

impl std::fmt::Debug for ServerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerSession")
            .field("server", &self.server)
            .field("state", &self.state)
            .field("next_id", &self.next_id)
            .finish_non_exhaustive()
    }
}

impl ServerSession {
    /// Wraps an already-connected stream pair; the session starts in
    /// `Starting` until [`initialize`](Self::initialize) succeeds.
    pub fn from_streams(
        server: impl Into<String>,
        reader: impl AsyncBufRead + Unpin + Send + 'static,
        writer: impl AsyncWrite + Unpin + Send + 'static,
        counters: Arc<WireCounters>,
    ) -> Self {
        Self {
            server: server.into(),
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            next_id: 1,
            state: SessionState::Starting,
            counters,
        }
    }

    /// Spawns the server process and performs the `initialize` handshake.
    pub async fn spawn(
        spec: &ServerSpec,
        timeout: Duration,
        counters: Arc<WireCounters>,
    ) -> Result<Self, McpError> {
        let mut child = Command::new(&spec.command)
            .args(&spec.args)
            .envs(&spec.env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| McpError::Spawn {
                server: spec.name.clone(),
                reason: format!("{}: {e}", spec.command.display()),
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut session =
            Self::from_streams(spec.name.clone(), BufReader::new(stdout), stdin, counters);
        session.child = Some(child);
        session.initialize(timeout).await?;
        Ok(session)
    }

    pub async fn initialize(&mut self, timeout: Duration) -> Result<Value, McpError> {
        let params = json!({
            "protocolVersion": PROTOCOL_VERSION,
            "capabilities": {},
            "clientInfo": {"name": "tempo", "version": env!("CARGO_PKG_VERSION")},
        });
        let result = self.request("initialize", params, timeout).await?;
        self.state = SessionState::Ready;
        Ok(result)
    }

    pub fn server(&self) -> &str {
        &self.server
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_ready(&self) -> bool {
        self.state == SessionState::Ready
    }

    pub fn mark_failed(&mut self) {
        self.state = SessionState::Failed;
        if let Some(child) = self.child.as_mut() {
            let _ = child.start_kill();
        }
    }

    fn protocol(&self, detail: impl Into<String>) -> McpError {
        McpError::Protocol {
            server: self.server.clone(),
            detail: detail.into(),
        }
    }

    /// Sends one request and waits for its response. Timeouts, IO failures
    /// and malformed lines fail the session; JSON-RPC error objects do not.
    pub async fn request(
        &mut self,
        method: &str,
        params: Value,
        timeout: Duration,
    ) -> Result<Value, McpError> {
        match self.state {
            SessionState::Ready | SessionState::Starting => {}
            SessionState::Failed => return Err(McpError::Failed(self.server.clone())),
            SessionState::Closed => return Err(McpError::Closed(self.server.clone())),
        }
        let id = self.next_id;
        self.next_id += 1;
        let line = wire::encode(&Request::new(id, method, params));
        match tokio::time::timeout(timeout, self.exchange(line, id)).await {
            Ok(Ok(resp)) => Ok(resp),
            Ok(Err(e)) => {
                if !matches!(e, McpError::Rpc { .. }) {
                    self.mark_failed();
                }
                Err(e)
            }
            Err(_) => {
                self.mark_failed();
                Err(McpError::Timeout {
                    server: self.server.clone(),
                    method: method.to_string(),
                    after: timeout,
                })
            }
        }
    }

    async fn exchange(&mut self, line: String, id: u64) -> Result<Value, McpError> {
        self.writer
            .write_all(line.as_bytes())
            .await
            .map_err(|e| self.protocol(format!("write failed: {e}")))?;
        self.writer
            .flush()
            .await
            .map_err(|e| self.protocol(format!("flush failed: {e}")))?;
        self.counters.messages.fetch_add(1, Ordering::Relaxed);

        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = self
                .reader
                .read_until(b'\n', &mut buf)
                .await
                .map_err(|e| self.protocol(format!("read failed: {e}")))?;
            if n == 0 {
                return Err(self.protocol("server closed its output"));
            }
            let text = std::str::from_utf8(&buf)
                .map_err(|_| self.protocol("response is not UTF-8"))?;
            if text.trim().is_empty() {
                continue;
            }
            // server-initiated notifications carry a method and no id
            if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(text) {
                if m.contains_key("method") && !m.contains_key("id") {
                    continue;
                }
            }
            let resp = wire::decode_response(text).map_err(|e| self.protocol(e.to_string()))?;
            if resp.id != id {
                return Err(self.protocol(format!("expected id {id}, got {}", resp.id)));
            }
            if let Some(err) = resp.error {
                return Err(McpError::Rpc {
                    server: self.server.clone(),
                    code: err.code,
                    message: err.message,
                });
            }
            return Ok(resp.result.expect("decode_response guarantees a result"));
        }
    }

    /// `tools/list`, tagged with this session's server name.
    pub async fn list_tools(&mut self, timeout: Duration) -> Result<Vec<ToolSignature>, McpError> {
        let result = self.request("tools/list", json!({}), timeout).await?;
        let tools = result
            .get("tools")
            .and_then(Value::as_array)
            .ok_or_else(|| self.protocol("tools/list result has no tools array"))?;
        tools
            .iter()
            .map(|t| {
                let name = t
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| self.protocol("tool without a name"))?;
                Ok(ToolSignature {
                    server: self.server.clone(),
                    tool: name.to_string(),
                    description: t
                        .get("description")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    params_schema: t
                        .get("inputSchema")
                        .cloned()
                        .unwrap_or_else(|| json!({"type": "object"})),
                })
            })
            .collect()
    }

    /// `tools/call`. Text content that parses as JSON is returned parsed,
    /// anything else as a JSON string.
    pub async fn call_tool(
        &mut self,
        tool: &str,
        args: serde_json::Map<String, Value>,
        timeout: Duration,
    ) -> Result<Value, McpError> {
        let result = self
            .request(
                "tools/call",
                json!({"name": tool, "arguments": args}),
                timeout,
            )
            .await
            .map_err(|e| match e {
                McpError::Rpc { server, message, .. } => McpError::Tool {
                    server,
                    tool: tool.to_string(),
                    message,
                },
                other => other,
            })?;
        let text: String = result
            .get("content")
            .and_then(Value::as_array)
            .map(|parts| {
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect()
            })
            .ok_or_else(|| self.protocol("tools/call result has no content array"))?;
        if result.get("isError").and_then(Value::as_bool) == Some(true) {
            return Err(McpError::Tool {
                server: self.server.clone(),
                tool: tool.to_string(),
                message: text,
            });
        }
        Ok(serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    /// Closes stdin and reaps the process, killing it after `grace`.
    pub async fn close(mut self, grace: Duration) {
        self.state = SessionState::Closed;
        let _ = self.writer.shutdown().await;
        drop(self.writer);
        if let Some(mut child) = self.child.take() {
            if tokio::time::timeout(grace, child.wait()).await.is_err() {
                let _ = child.kill().await;
            }
        }
    }
}
