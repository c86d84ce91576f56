//! Aggregated tool catalog and its invalidation fingerprint.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use chrono::{DateTime, Utc};
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSignature {
    pub server: String,
    pub tool: String,
    pub description: String,
    pub params_schema: Value,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("tool {server}.{tool} listed twice")]
    Duplicate { server: String, tool: String },
}

/// On-disk shape of the discovery cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCatalog {
    pub fingerprint: String,
    pub created_at: DateTime<Utc>,
    pub tools: Vec<ToolSignature>,
}

impl ToolCatalog {
    pub fn new(
        tools: Vec<ToolSignature>,
        fingerprint: String,
        created_at: DateTime<Utc>,
    ) -> Result<Self, CatalogError> {
        let catalog = Self {
            fingerprint,
            created_at,
            tools,
        };
        catalog.check_unique()?;
        Ok(catalog)
    }

    pub fn check_unique(&self) -> Result<(), CatalogError> {
        let mut seen = BTreeSet::new();
        for t in &self.tools {
            if !seen.insert((t.server.as_str(), t.tool.as_str())) {
                return Err(CatalogError::Duplicate {
                    server: t.server.clone(),
                    tool: t.tool.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn find(&self, server: &str, tool: &str) -> Option<&ToolSignature> {
        self.tools
            .iter()
            .find(|t| t.server == server && t.tool == tool)
    }

    pub fn contains(&self, server: &str, tool: &str) -> bool {
        self.find(server, tool).is_some()
    }

    pub fn servers(&self) -> BTreeSet<&str> {
        self.tools.iter().map(|t| t.server.as_str()).collect()
    }
}

/// Everything whose change must invalidate a cached catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FingerprintInputs {
    /// Registered server command lines. Order does not matter.
    pub server_paths: Vec<String>,
    /// Modification time (whole seconds) of every watched source file.
    pub source_mtimes: BTreeMap<String, i64>,
    /// Modification time of the project configuration file.
    pub config_mtime: i64,
}

impl FingerprintInputs {
    /// Byte-exact serialisation that gets hashed: sorted server paths one per
    /// line, then sorted `path:mtime` records, then `config:mtime`, all joined
    /// with `\n`.
    pub fn canonical(&self) -> String {
        let mut servers: Vec<&str> = self.server_paths.iter().map(String::as_str).collect();
        servers.sort_unstable();
        let mut lines: Vec<String> = servers.into_iter().map(String::from).collect();
        for (path, mtime) in &self.source_mtimes {
            let mut line = String::new();
            let _ = write!(line, "{path}:{mtime}");
            lines.push(line);
        }
        let mut cfg = String::new();
        let _ = write!(cfg, "config:{}", self.config_mtime);
        lines.push(cfg);
        lines.join("\n")
    }

    /// Lowercase 32-hex-digit MD5 of [`canonical`](Self::canonical).
    pub fn fingerprint(&self) -> String {
        let digest = Md5::digest(self.canonical().as_bytes());
        let mut out = String::with_capacity(32);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}
