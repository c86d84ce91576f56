//! Disk-backed tool catalog with fingerprint and TTL invalidation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tempo_core::catalog::{CatalogError, FingerprintInputs, ToolCatalog, ToolSignature};

use crate::mcpio::{McpError, ServerPool};

pub const DEFAULT_CACHE_PATH: &str = ".tempo/discovery_cache.json";
pub const DEFAULT_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    #[error("watched path {0} does not exist")]
    MissingPath(PathBuf),
    #[error("reading metadata of {path}: {source}")]
    Metadata {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("discovery failed on {}", failed_list(.0))]
    Servers(BTreeMap<String, McpError>),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn failed_list(failed: &BTreeMap<String, McpError>) -> String {
    failed
        .iter()
        .map(|(name, e)| format!("{name} ({e})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogSource {
    DiskCache,
    Fresh,
}

/// How live discovery reaches the servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryMode {
    /// Pooled sessions, all servers concurrently.
    Pooled,
    /// A throwaway session per server, one after another.
    Ephemeral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoverySettings {
    pub cache_path: PathBuf,
    #[serde(with = "secs")]
    pub ttl: Duration,
    /// Directory whose files are hashed into the fingerprint.
    #[serde(default)]
    pub servers_dir: Option<PathBuf>,
    /// Project config file whose mtime is hashed into the fingerprint.
    #[serde(default)]
    pub config_file: Option<PathBuf>,
}

impl Default for DiscoverySettings {
    fn default() -> Self {
        Self {
            cache_path: PathBuf::from(DEFAULT_CACHE_PATH),
            ttl: DEFAULT_TTL,
            servers_dir: None,
            config_file: None,
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

/// What a discovery call did, for timing and instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub catalog: ToolCatalog,
    pub source: CatalogSource,
    /// Servers contacted and whether each contact started a process.
    pub contacted: Vec<(String, bool)>,
}

fn mtime_secs(path: &Path) -> Result<i64, DiscoveryError> {
    let meta = std::fs::metadata(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DiscoveryError::MissingPath(path.to_path_buf())
        } else {
            DiscoveryError::Metadata {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let modified = meta.modified().map_err(|source| DiscoveryError::Metadata {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match modified.duration_since(UNIX_EPOCH) {
        Ok(d) => d.as_secs() as i64,
        Err(e) => -(e.duration().as_secs() as i64),
    })
}

/// Collects the three fingerprint components from the filesystem. Server
/// commands given as paths (containing a separator) are watched too.
pub fn fingerprint_inputs(pool: &ServerPool, settings: &DiscoverySettings) -> Result<FingerprintInputs, DiscoveryError> {
    let mut source_mtimes = BTreeMap::new();
    for spec in pool.specs() {
        if spec.command.components().count() > 1 {
            source_mtimes.insert(spec.command.display().to_string(), mtime_secs(&spec.command)?);
        }
    }
    if let Some(dir) = &settings.servers_dir {
        if !dir.exists() {
            return Err(DiscoveryError::MissingPath(dir.clone()));
        }
        for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| DiscoveryError::Metadata {
                path: e.path().map_or_else(|| dir.clone(), Path::to_path_buf),
                source: e.into(),
            })?;
            if entry.file_type().is_file() {
                source_mtimes.insert(entry.path().display().to_string(), mtime_secs(entry.path())?);
            }
        }
    }
    let config_mtime = match &settings.config_file {
        Some(p) => mtime_secs(p)?,
        None => 0,
    };
    Ok(FingerprintInputs {
        server_paths: pool.specs().map(|s| s.command_line()).collect(),
        source_mtimes,
        config_mtime,
    })
}

/// Reads the cache file; anything unreadable or unparsable is `None`.
pub fn read_cache(path: &Path) -> Option<ToolCatalog> {
    let text = std::fs::read_to_string(path).ok()?;
    let catalog: ToolCatalog = serde_json::from_str(&text).ok()?;
    catalog.check_unique().ok()?;
    Some(catalog)
}

/// Writes through a temp file in the same directory and renames it into place.
pub fn write_cache(path: &Path, catalog: &ToolCatalog) -> Result<(), DiscoveryError> {
    let wrap = |source| DiscoveryError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    let body = serde_json::to_vec_pretty(catalog).expect("catalog serialises");
    tmp.write_all(&body).map_err(wrap)?;
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

/// Fresh within TTL: `0 <= age < ttl`.
pub fn is_fresh(catalog: &ToolCatalog, now: DateTime<Utc>, ttl: Duration) -> bool {
    let age = now - catalog.created_at;
    match age.to_std() {
        Ok(age) => age < ttl,
        Err(_) => age.is_zero(),
    }
}

type Contact = (String, Result<(Vec<ToolSignature>, bool), McpError>);

/// `tools/list` on every registered server.
pub async fn discover_live(pool: &ServerPool, mode: DiscoveryMode) -> Result<(Vec<ToolSignature>, Vec<(String, bool)>), DiscoveryError> {
    let names: Vec<String> = pool.names().map(str::to_string).collect();
    let outcomes: Vec<Contact> = match mode {
        DiscoveryMode::Pooled => {
            futures::future::join_all(names.into_iter().map(|name| async move {
                let out = async {
                    let mut session = pool.acquire(&name).await?;
                    let spawned = session.spawned();
                    let tools = session.list_tools(pool.timeout()).await?;
                    Ok((tools, spawned))
                }
                .await;
                (name, out)
            }))
            .await
        }
        DiscoveryMode::Ephemeral => {
            let mut out = Vec::new();
            for name in names {
                let r = pool.ephemeral_list(&name).await.map(|t| (t, true));
                out.push((name, r));
            }
            out
        }
    };
    let mut tools = Vec::new();
    let mut contacted = Vec::new();
    let mut failed = BTreeMap::new();
    for (name, r) in outcomes {
        match r {
            Ok((t, spawned)) => {
                tools.extend(t);
                contacted.push((name, spawned));
            }
            Err(e) => {
                contacted.push((name.clone(), true));
                failed.insert(name, e);
            }
        }
    }
    if !failed.is_empty() {
        return Err(DiscoveryError::Servers(failed));
    }
    Ok((tools, contacted))
}

/// Serves the catalog from disk when the file parses, matches the current
/// fingerprint and is younger than the TTL; otherwise discovers live through
/// the pool and rewrites the file.
pub async fn load_or_discover(
    pool: &ServerPool,
    settings: &DiscoverySettings,
    now: DateTime<Utc>,
) -> Result<Discovery, DiscoveryError> {
    let fingerprint = fingerprint_inputs(pool, settings)?.fingerprint();
    if let Some(catalog) = read_cache(&settings.cache_path) {
        if catalog.fingerprint == fingerprint && is_fresh(&catalog, now, settings.ttl) {
            return Ok(Discovery {
                catalog,
                source: CatalogSource::DiskCache,
                contacted: Vec::new(),
            });
        }
    }
    let (tools, contacted) = discover_live(pool, DiscoveryMode::Pooled).await?;
    let catalog = ToolCatalog::new(tools, fingerprint, now)?;
    write_cache(&settings.cache_path, &catalog)?;
    Ok(Discovery {
        catalog,
        source: CatalogSource::Fresh,
        contacted,
    })
}

/// Uncached discovery, as the unoptimized pipeline does it.
pub async fn discover_uncached(pool: &ServerPool, now: DateTime<Utc>) -> Result<Discovery, DiscoveryError> {
    let (tools, contacted) = discover_live(pool, DiscoveryMode::Ephemeral).await?;
    Ok(Discovery {
        catalog: ToolCatalog::new(tools, String::new(), now)?,
        source: CatalogSource::Fresh,
        contacted,
    })
}

/// Current wall time truncated to whole seconds.
pub fn now_utc() -> DateTime<Utc> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64);
    DateTime::from_timestamp(secs, 0).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn catalog(at: DateTime<Utc>) -> ToolCatalog {
        ToolCatalog::new(
            vec![ToolSignature {
                server: "iot".into(),
                tool: "list_assets".into(),
                description: "d".into(),
                params_schema: serde_json::json!({"type": "object"}),
            }],
            "0".repeat(32),
            at,
        )
        .unwrap()
    }

    #[test]
    fn ttl_boundary_is_expired() {
        let t0 = Utc.with_ymd_and_hms(2020, 6, 10, 9, 0, 0).unwrap();
        let ttl = Duration::from_secs(3600);
        let c = catalog(t0);
        assert!(is_fresh(&c, t0, ttl));
        assert!(is_fresh(&c, t0 + chrono::Duration::seconds(3599), ttl));
        assert!(!is_fresh(&c, t0 + chrono::Duration::seconds(3600), ttl));
        assert!(!is_fresh(&c, t0 - chrono::Duration::seconds(1), ttl));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/cache.json");
        let c = catalog(Utc.with_ymd_and_hms(2020, 6, 10, 9, 0, 0).unwrap());
        write_cache(&path, &c).unwrap();
        assert_eq!(read_cache(&path), Some(c));
        std::fs::write(&path, "{\"fingerprint\": ").unwrap();
        assert_eq!(read_cache(&path), None);
        assert_eq!(read_cache(&dir.path().join("absent.json")), None);
    }

    #[test]
    fn missing_watched_path_is_named() {
        let pool = ServerPool::new([], Duration::from_secs(1)).unwrap();
        let settings = DiscoverySettings {
            config_file: Some(PathBuf::from("/nonexistent/tempo.toml")),
            ..Default::default()
        };
        let err = fingerprint_inputs(&pool, &settings).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/tempo.toml"), "{err}");
    }
}
