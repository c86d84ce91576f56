//! TOML configuration and construction of pipelines from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tempo_core::planner::StubModelClient;
use tempo_core::semcache::{CacheConfig, SemanticCache};

use crate::clock::Clock;
use crate::discovery::DiscoverySettings;
use crate::http::{HttpEmbedder, HttpJudger, HttpModelClient};
use crate::mcpio::sim::Domain;
use crate::mcpio::ServerSpec;
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, SharedModel};

pub const SIM_BINARY: &str = "tempo-sim";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub timeout_secs: u64,
    /// Real delay per planner/summarizer call on the wall clock.
    pub model_latency_ms: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            timeout_secs: 30,
            model_latency_ms: 0,
        }
    }
}

/// Settings passed to the bundled simulators through their environment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub latency_ms: u64,
    pub startup_ms: u64,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    /// Explicit simulator binary; otherwise found next to the running program.
    pub binary: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSection {
    #[default]
    Stub,
    Http { url: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerSection {
    #[default]
    Reference,
    Http { embed_url: String, judge_url: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TempoConfig {
    pub pipeline: PipelineSection,
    pub cache: CacheConfig,
    pub discovery: DiscoverySettings,
    pub clock: Clock,
    pub sim: SimSection,
    pub model: ModelSection,
    pub scorers: ScorerSection,
    /// Empty means the four bundled simulators.
    pub servers: Vec<ServerSpec>,
}

impl TempoConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        if cfg.discovery.config_file.is_none() {
            cfg.discovery.config_file = Some(path.to_path_buf());
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.pipeline.timeout_secs)
    }

    pub fn sim_binary(&self) -> Result<PathBuf, ConfigError> {
        if let Some(p) = &self.sim.binary {
            return Ok(p.clone());
        }
        locate_sibling(SIM_BINARY).ok_or_else(|| {
            ConfigError::Invalid(format!("cannot find {SIM_BINARY} next to this program; set sim.binary"))
        })
    }

    pub fn registry(&self) -> Result<Vec<ServerSpec>, ConfigError> {
        if !self.servers.is_empty() {
            return Ok(self.servers.clone());
        }
        let bin = self.sim_binary()?;
        Ok(sim_registry(&bin, &self.sim))
    }

    /// Pipeline with this config's thresholds, timeout, clock and model.
    pub fn arm(&self, cache: bool, discovery: bool, parallel: bool) -> PipelineConfig {
        PipelineConfig {
            cache_enabled: cache,
            discovery_cache_enabled: discovery,
            parallel_execution: parallel,
            thresholds: self.cache.clone(),
            timeout: self.timeout(),
        }
    }

    pub fn model(&self) -> SharedModel {
        match &self.model {
            ModelSection::Stub => Arc::new(StubModelClient::default()),
            ModelSection::Http { url } => Arc::new(HttpModelClient::new(url.clone(), self.timeout())),
        }
    }

    pub fn build(&self, arm: PipelineConfig) -> Result<Pipeline, ConfigError> {
        let cache_cfg = arm.thresholds.clone();
        let mut p = Pipeline::new(arm, self.registry()?, self.model(), self.discovery.clone())?
            .with_clock(self.clock)
            .with_model_latency(Duration::from_millis(self.pipeline.model_latency_ms));
        if let ScorerSection::Http { embed_url, judge_url } = &self.scorers {
            let cache = SemanticCache::new(
                cache_cfg.clone(),
                Box::new(HttpEmbedder::new(embed_url.clone(), cache_cfg.embedding_dim, self.timeout())),
                Box::new(HttpJudger::new(judge_url.clone(), self.timeout())),
            )
            .map_err(PipelineError::from)?;
            p = p.with_cache(cache);
        }
        Ok(p)
    }
}

/// The four simulated domains, each started as `<bin> <domain>`.
pub fn sim_registry(bin: &Path, sim: &SimSection) -> Vec<ServerSpec> {
    let mut env = BTreeMap::new();
    env.insert("TEMPO_SIM_LATENCY_MS".to_string(), sim.latency_ms.to_string());
    env.insert("TEMPO_SIM_STARTUP_MS".to_string(), sim.startup_ms.to_string());
    env.insert("TEMPO_SIM_SEED".to_string(), sim.seed.to_string());
    if let Some(dir) = &sim.data_dir {
        env.insert("TEMPO_SIM_DATA_DIR".to_string(), dir.display().to_string());
    }
    Domain::ALL
        .into_iter()
        .map(|d| ServerSpec {
            name: d.as_str().to_string(),
            command: bin.to_path_buf(),
            args: vec![d.as_str().to_string()],
            env: env.clone(),
        })
        .collect()
}

/// Looks for `name` beside the current executable and one directory up
/// (test binaries live in `target/<profile>/deps`).
pub fn locate_sibling(name: &str) -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let file = format!("{name}{}", std::env::consts::EXE_SUFFIX);
    exe.ancestors()
        .skip(1)
        .take(2)
        .map(|dir| dir.join(&file))
        .find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = TempoConfig::parse("").unwrap();
        assert_eq!(cfg, TempoConfig::default());
        assert_eq!(cfg.cache.tau_judge, 0.92);
        assert_eq!(cfg.discovery.ttl, Duration::from_secs(86_400));
    }

    #[test]
    fn full_config_parses() {
        let cfg = TempoConfig::parse(
            r#"
            [pipeline]
            timeout_secs = 5
            [cache]
            tau_sim = 0.7
            tau_judge = 0.9
            top_k = 3
            capacity = 10
            embedding_dim = 256
            window_gate = false
            [discovery]
            cache_path = "/tmp/x.json"
            ttl = 60
            [clock]
            mode = "simulated"
            spawn = 300
            list = 20
            call = 200
            disk_read = 1
            model = 1000
            lookup = 5
            [sim]
            latency_ms = 50
            [model]
            kind = "http"
            url = "http://localhost:1/"
            [[servers]]
            name = "iot"
            command = "/usr/bin/sim"
            args = ["iot"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.timeout(), Duration::from_secs(5));
        assert!(!cfg.cache.window_gate);
        assert!(cfg.clock.is_simulated());
        assert_eq!(cfg.servers[0].command_line(), "/usr/bin/sim iot");
        assert_eq!(cfg.registry().unwrap().len(), 1);
    }

    #[test]
    fn example_config_parses() {
        let cfg = TempoConfig::parse(include_str!("../../../tempo.toml")).unwrap();
        assert_eq!(cfg.cache, CacheConfig::default());
        assert!(cfg.clock.is_simulated() && cfg.servers.is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(TempoConfig::parse("[pipeline]\ntimeout = 3\n").is_err());
    }

    #[test]
    fn sim_registry_carries_env() {
        let specs = sim_registry(Path::new("/bin/tempo-sim"), &SimSection { latency_ms: 200, ..Default::default() });
        assert_eq!(specs.len(), 4);
        assert!(specs.iter().all(|s| s.env["TEMPO_SIM_LATENCY_MS"] == "200"));
        assert_eq!(specs[3].command_line(), "/bin/tempo-sim wo");
    }
}
