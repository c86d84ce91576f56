//! Newline-delimited JSON-RPC 2.0 framing.
//!
//! Every message is one line of compact UTF-8 JSON terminated by `\n`.
//! `serde_json` never emits raw newlines in compact output (they are escaped
//! inside strings), so encoding is a plain `to_string` plus the terminator.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const JSONRPC: &str = "2.0";
pub const PROTOCOL_VERSION: &str = "2024-11-05";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub jsonrpc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
}

impl Request {
    pub fn new(id: u64, method: impl Into<String>, params: Value) -> Self {
        Self {
            jsonrpc: JSONRPC.to_string(),
            id: Some(Value::from(id)),
            method: method.into(),
            params: Some(params),
        }
    }

    pub fn is_notification(&self) -> bool {
        self.id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl Response {
    pub fn ok(id: Value, result: Value) -> Self {
        Self {
            jsonrpc: JSONRPC.to_string(),
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: Value, code: i64, message: impl Into<String>) -> Self {
        Self {
            jsonrpc: JSONRPC.to_string(),
            id,
            result: None,
            error: Some(RpcError {
                code,
                message: message.into(),
                data: None,
            }),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("line is not valid JSON: {0}")]
    NotJson(String),
    #[error("not a JSON-RPC 2.0 response: {0}")]
    NotResponse(String),
    #[error("response has both or neither of result and error")]
    Ambiguous,
}

/// Compact JSON plus the LF terminator.
pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("wire messages serialise");
    line.push('\n');
    line
}

/// Parses one line (terminator optional) as a response.
pub fn decode_response(line: &str) -> Result<Response, WireError> {
    let value: Value = serde_json::from_str(line.trim_end_matches(['\n', '\r']))
        .map_err(|e| WireError::NotJson(e.to_string()))?;
    let resp: Response =
        serde_json::from_value(value).map_err(|e| WireError::NotResponse(e.to_string()))?;
    if resp.jsonrpc != JSONRPC {
        return Err(WireError::NotResponse(format!("jsonrpc = {:?}", resp.jsonrpc)));
    }
    if resp.result.is_some() == resp.error.is_some() {
        return Err(WireError::Ambiguous);
    }
    Ok(resp)
}

/// Tool-call result body: MCP text content plus the error flag.
pub fn tool_result(text: String, is_error: bool) -> Value {
    serde_json::json!({
        "content": [{"type": "text", "text": text}],
        "isError": is_error,
    })
}
