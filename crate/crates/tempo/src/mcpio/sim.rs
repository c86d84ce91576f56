//! Deterministic stand-ins for the four domain tool servers.
//!
//! Every tool output is a pure function of its arguments, the CSV tables and
//! `TEMPO_SIM_SEED`. The same code serves in-process tests and the
//! `tempo-sim` binary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::NaiveDate;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::wire::{self, Request, Response, INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR, PROTOCOL_VERSION};

const ASSETS: &str = include_str!("../../data/sim/assets.csv");
const SENSORS: &str = include_str!("../../data/sim/sensors.csv");
const READINGS: &str = include_str!("../../data/sim/readings.csv");
const FAILURE_MODES: &str = include_str!("../../data/sim/failure_modes.csv");
const WORK_ORDERS: &str = include_str!("../../data/sim/work_orders.csv");
const MANIFEST_IOT: &str = include_str!("../../data/sim/manifests/iot.json");
const MANIFEST_FMSR: &str = include_str!("../../data/sim/manifests/fmsr.json");
const MANIFEST_TSFM: &str = include_str!("../../data/sim/manifests/tsfm.json");
const MANIFEST_WO: &str = include_str!("../../data/sim/manifests/wo.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Iot,
    Fmsr,
    Tsfm,
    Wo,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Iot, Domain::Fmsr, Domain::Tsfm, Domain::Wo];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Iot => "iot",
            Domain::Fmsr => "fmsr",
            Domain::Tsfm => "tsfm",
            Domain::Wo => "wo",
        }
    }

    fn bundled_manifest(self) -> &'static str {
        match self {
            Domain::Iot => MANIFEST_IOT,
            Domain::Fmsr => MANIFEST_FMSR,
            Domain::Tsfm => MANIFEST_TSFM,
            Domain::Wo => MANIFEST_WO,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| SimError::UnknownDomain(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown domain {0:?} (expected iot, fmsr, tsfm or wo)")]
    UnknownDomain(String),
    #[error("unknown fault {0:?}")]
    UnknownFault(String),
    #[error("bad value for {var}: {value:?}")]
    BadEnv { var: &'static str, value: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parsing {what}: {reason}")]
    Data { what: String, reason: String },
}

/// Deliberate misbehaviour for client robustness tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// `tools/list` returns no tools.
    EmptyTools,
    /// `tools/call` answers with a non-JSON line.
    Garbage,
    /// `tools/call` answers with the wrong id.
    BadId,
    /// every `tools/call` reports a tool error.
    Error,
    /// `tools/call` never answers.
    Hang,
    /// the process exits on `tools/call`.
    Crash,
}

impl FromStr for Fault {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Ok(match s {
            "empty-tools" => Fault::EmptyTools,
            "garbage" => Fault::Garbage,
            "bad-id" => Fault::BadId,
            "error" => Fault::Error,
            "hang" => Fault::Hang,
            "crash" => Fault::Crash,
            other => return Err(SimError::UnknownFault(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimConfig {
    pub latency: Duration,
    pub startup: Duration,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub fault: Option<Fault>,
}

impl SimConfig {
    /// Reads `TEMPO_SIM_*` variables.
    pub fn from_env() -> Result<Self, SimError> {
        fn var(name: &'static str) -> Option<String> {
            std::env::var(name).ok().filter(|v| !v.is_empty())
        }
        fn num(name: &'static str) -> Result<u64, SimError> {
            var(name).map_or(Ok(0), |v| {
                v.trim().parse().map_err(|_| SimError::BadEnv { var: name, value: v })
            })
        }
        Ok(Self {
            latency: Duration::from_millis(num("TEMPO_SIM_LATENCY_MS")?),
            startup: Duration::from_millis(num("TEMPO_SIM_STARTUP_MS")?),
            seed: num("TEMPO_SIM_SEED")?,
            data_dir: var("TEMPO_SIM_DATA_DIR").map(PathBuf::from),
            log: var("TEMPO_SIM_LOG").map(PathBuf::from),
            fault: var("TEMPO_SIM_FAULT").map(|f| f.parse()).transpose()?,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
struct AssetRow {
    site: String,
    asset: String,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Debug, Clone, Deserialize)]
struct SensorRow {
    asset: String,
    sensor: String,
    unit: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ReadingRow {
    asset: String,
    sensor: String,
    day: NaiveDate,
    min: f64,
    max: f64,
    mean: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct FailureModeRow {
    asset_type: String,
    failure_mode: String,
    sensors: String,
}

#[derive(Debug, Clone, Deserialize)]
struct WorkOrderRow {
    id: String,
    asset: String,
    opened: NaiveDate,
    status: String,
    description: String,
}

/// The seeded tables behind every domain.
#[derive(Debug, Clone)]
pub struct SimData {
    assets: Vec<AssetRow>,
    sensors: Vec<SensorRow>,
    readings: BTreeMap<(String, String), Vec<ReadingRow>>,
    failure_modes: Vec<FailureModeRow>,
    work_orders: Vec<WorkOrderRow>,
    manifests: BTreeMap<Domain, Vec<Value>>,
}

fn parse_csv<T: for<'de> Deserialize<'de>>(what: &str, text: &str) -> Result<Vec<T>, SimError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| SimError::Data {
            what: what.to_string(),
            reason: e.to_string(),
        })
}

impl SimData {
    pub fn bundled() -> Self {
        Self::from_sources(|name| {
            Ok(match name {
                "assets.csv" => ASSETS,
                "sensors.csv" => SENSORS,
                "readings.csv" => READINGS,
                "failure_modes.csv" => FAILURE_MODES,
                "work_orders.csv" => WORK_ORDERS,
                _ => unreachable!("no bundled table {name}"),
            }
            .to_string())
        }, |d| Ok(d.bundled_manifest().to_string()))
        .expect("bundled simulator data parses")
    }

    /// Loads the same file layout as `data/sim`: five CSVs plus `manifests/<domain>.json`.
    pub fn load(dir: &Path) -> Result<Self, SimError> {
        let read = |p: PathBuf| {
            std::fs::read_to_string(&p).map_err(|source| SimError::Io { path: p, source })
        };
        Self::from_sources(
            |name| read(dir.join(name)),
            |d| read(dir.join("manifests").join(format!("{d}.json"))),
        )
    }

    fn from_sources(
        table: impl Fn(&str) -> Result<String, SimError>,
        manifest: impl Fn(Domain) -> Result<String, SimError>,
    ) -> Result<Self, SimError> {
        let mut readings: BTreeMap<(String, String), Vec<ReadingRow>> = BTreeMap::new();
        for r in parse_csv::<ReadingRow>("readings.csv", &table("readings.csv")?)? {
            readings
                .entry((r.asset.clone(), r.sensor.clone()))
                .or_default()
                .push(r);
        }
        for rows in readings.values_mut() {
            rows.sort_by_key(|r| r.day);
        }
        let mut manifests = BTreeMap::new();
        for d in Domain::ALL {
            let tools: Vec<Value> = serde_json::from_str(&manifest(d)?).map_err(|e| SimError::Data {
                what: format!("{d} manifest"),
                reason: e.to_string(),
            })?;
            manifests.insert(d, tools);
        }
        Ok(Self {
            assets: parse_csv("assets.csv", &table("assets.csv")?)?,
            sensors: parse_csv("sensors.csv", &table("sensors.csv")?)?,
            readings,
            failure_modes: parse_csv("failure_modes.csv", &table("failure_modes.csv")?)?,
            work_orders: parse_csv("work_orders.csv", &table("work_orders.csv")?)?,
            manifests,
        })
    }

    /// The domain's declared tools, in manifest order.
    pub fn manifest(&self, domain: Domain) -> &[Value] {
        &self.manifests[&domain]
    }

    /// Daily (min, max, mean) straight from the table.
    pub fn reading(&self, asset: &str, sensor: &str, day: NaiveDate) -> Option<(f64, f64, f64)> {
        self.series(asset, sensor)?
            .iter()
            .find(|r| r.day == day)
            .map(|r| (r.min, r.max, r.mean))
    }

    fn asset(&self, name: &str) -> Option<&AssetRow> {
        let key = squash(name);
        self.assets.iter().find(|a| squash(&a.asset) == key)
    }

    fn series(&self, asset: &str, sensor: &str) -> Option<&[ReadingRow]> {
        let asset = self.asset(asset)?;
        let sensor = self.sensor_name(&asset.asset, sensor)?;
        self.readings
            .get(&(asset.asset.clone(), sensor.to_string()))
            .map(Vec::as_slice)
    }

    fn sensor_name(&self, asset: &str, sensor: &str) -> Option<&str> {
        let key = squash(sensor);
        self.sensors
            .iter()
            .find(|s| s.asset == asset && squash(&s.sensor) == key)
            .map(|s| s.sensor.as_str())
    }
}

/// Lowercase with whitespace removed, so "Chiller 6" names "Chiller6".
fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Why a tool call was rejected.
#[derive(Debug, PartialEq)]
enum ToolFailure {
    /// Missing or ill-typed arguments: JSON-RPC invalid-params.
    Params(String),
    /// Well-formed call the data cannot satisfy: an `isError` result.
    Domain(String),
}

type ToolResult = Result<Value, ToolFailure>;

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, ToolFailure> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolFailure::Params(format!("missing string argument {key:?}")))
}

fn day_arg(args: &Map<String, Value>, key: &str) -> Result<NaiveDate, ToolFailure> {
    let raw = str_arg(args, key)?;
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|_| ToolFailure::Params(format!("{key}={raw:?} is not YYYY-MM-DD")))
}

/// Accepts a JSON value of the wanted shape or a string holding its JSON text.
fn json_arg(args: &Map<String, Value>, key: &str) -> Result<Value, ToolFailure> {
    match args.get(key) {
        Some(Value::String(s)) => serde_json::from_str(s)
            .map_err(|_| ToolFailure::Params(format!("{key} is not JSON text"))),
        Some(v) => Ok(v.clone()),
        None => Err(ToolFailure::Params(format!("missing argument {key:?}"))),
    }
}

fn string_list(v: &Value, key: &str) -> Result<Vec<String>, ToolFailure> {
    v.as_array()
        .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect())
        .ok_or_else(|| ToolFailure::Params(format!("{key} must be a list of strings")))
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// FNV-1a, for seeded per-day noise without an RNG dependency.
fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub struct SimServer {
    domain: Domain,
    data: SimData,
    config: SimConfig,
}

/// What the server loop should do after a request.
#[derive(Debug, PartialEq)]
pub enum Reply {
    Line(String),
    Silent,
    Hang,
    Exit,
}

impl SimServer {
    pub fn new(domain: Domain, data: SimData, config: SimConfig) -> Self {
        Self { domain, data, config }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Handles one wire line. Latency is the caller's business.
    pub fn handle_line(&self, line: &str) -> Reply {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                return Reply::Line(wire::encode(&Response::err(Value::Null, PARSE_ERROR, e.to_string())))
            }
        };
        let req: Request = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                return Reply::Line(wire::encode(&Response::err(Value::Null, INVALID_REQUEST, e.to_string())))
            }
        };
        let Some(id) = req.id.clone() else {
            return Reply::Silent;
        };
        let params = req.params.unwrap_or(Value::Null);
        let resp = match req.method.as_str() {
            "initialize" => Response::ok(
                id,
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": {"tools": {}},
                    "serverInfo": {"name": format!("tempo-sim-{}", self.domain), "version": env!("CARGO_PKG_VERSION")},
                }),
            ),
            "tools/list" => {
                let tools = match self.config.fault {
                    Some(Fault::EmptyTools) => Vec::new(),
                    _ => self.data.manifest(self.domain).to_vec(),
                };
                Response::ok(id, json!({ "tools": tools }))
            }
            "tools/call" => match self.config.fault {
                Some(Fault::Garbage) => return Reply::Line("this is not json\n".into()),
                Some(Fault::Hang) => return Reply::Hang,
                Some(Fault::Crash) => return Reply::Exit,
                Some(Fault::BadId) => {
                    let bumped = id.as_u64().map_or(Value::from(0), |n| Value::from(n + 1000));
                    Response::ok(bumped, wire::tool_result("{}".into(), false))
                }
                Some(Fault::Error) => Response::ok(id, wire::tool_result("injected failure".into(), true)),
                _ => self.tools_call(id, &params),
            },
            other => Response::err(id, METHOD_NOT_FOUND, format!("method {other:?} not found")),
        };
        Reply::Line(wire::encode(&resp))
    }

    fn tools_call(&self, id: Value, params: &Value) -> Response {
        let Some(name) = params.get("name").and_then(Value::as_str) else {
            return Response::err(id, INVALID_PARAMS, "tools/call needs a tool name");
        };
        let empty = Map::new();
        let args = match params.get("arguments") {
            None | Some(Value::Null) => &empty,
            Some(Value::Object(m)) => m,
            Some(_) => return Response::err(id, INVALID_PARAMS, "arguments must be an object"),
        };
        match self.call(name, args) {
            Some(Ok(v)) => {
                let text = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                Response::ok(id, wire::tool_result(text, false))
            }
            Some(Err(ToolFailure::Domain(msg))) => Response::ok(id, wire::tool_result(msg, true)),
            Some(Err(ToolFailure::Params(msg))) => Response::err(id, INVALID_PARAMS, msg),
            None => Response::err(id, INVALID_PARAMS, format!("unknown tool {name:?} on {}", self.domain)),
        }
    }

    /// `None` when the domain has no such tool.
    fn call(&self, tool: &str, args: &Map<String, Value>) -> Option<ToolResult> {
        Some(match (self.domain, tool) {
            (Domain::Iot, "list_assets") => self.list_assets(args),
            (Domain::Iot, "list_sensors") => self.list_sensors(args),
            (Domain::Iot, "select_sensor") => select_sensor(args),
            (Domain::Iot, "get_sensor_reading") => self.get_sensor_reading(args),
            (Domain::Iot, "get_sensor_history") => self.get_sensor_history(args),
            (Domain::Fmsr, "get_failure_modes") => self.get_failure_modes(args),
            (Domain::Fmsr, "get_failure_mode_sensors") => self.get_failure_mode_sensors(args),
            (Domain::Fmsr, "filter_failure_modes") => filter_failure_modes(args),
            (Domain::Fmsr, "get_sensor_failure_modes") => self.get_sensor_failure_modes(args),
            (Domain::Tsfm, "list_models") => Ok(list_models()),
            (Domain::Tsfm, "forecast") => self.forecast(args),
            (Domain::Tsfm, "detect_anomalies") => self.detect_anomalies(args),
            (Domain::Wo, "get_work_order") => self.get_work_order(args),
            (Domain::Wo, "list_work_orders") => self.list_work_orders(args).map(Value::from),
            (Domain::Wo, "count_work_orders") => self.list_work_orders(args).map(|v| json!(v.len())),
            _ => return None,
        })
    }

    fn known_asset(&self, args: &Map<String, Value>) -> Result<&AssetRow, ToolFailure> {
        let name = str_arg(args, "asset")?;
        self.data
            .asset(name)
            .ok_or_else(|| ToolFailure::Domain(format!("unknown asset {name:?}")))
    }

    fn series(&self, args: &Map<String, Value>) -> Result<(&AssetRow, &str, &[ReadingRow]), ToolFailure> {
        let asset = self.known_asset(args)?;
        let sensor = str_arg(args, "sensor")?;
        let name = self
            .data
            .sensor_name(&asset.asset, sensor)
            .ok_or_else(|| ToolFailure::Domain(format!("{} has no sensor {sensor:?}", asset.asset)))?;
        let rows = self.data.series(&asset.asset, name).unwrap_or(&[]);
        Ok((asset, name, rows))
    }

    fn list_assets(&self, args: &Map<String, Value>) -> ToolResult {
        let site = str_arg(args, "site")?;
        let found: Vec<&str> = self
            .data
            .assets
            .iter()
            .filter(|a| a.site.eq_ignore_ascii_case(site))
            .map(|a| a.asset.as_str())
            .collect();
        if found.is_empty() {
            return Err(ToolFailure::Domain(format!("unknown site {site:?}")));
        }
        Ok(json!(found))
    }

    fn list_sensors(&self, args: &Map<String, Value>) -> ToolResult {
        let asset = self.known_asset(args)?;
        let names: Vec<&str> = self
            .data
            .sensors
            .iter()
            .filter(|s| s.asset == asset.asset)
            .map(|s| s.sensor.as_str())
            .collect();
        Ok(json!(names))
    }

    fn get_sensor_reading(&self, args: &Map<String, Value>) -> ToolResult {
        let (asset, sensor, rows) = self.series(args)?;
        let day = day_arg(args, "day")?;
        let row = rows
            .iter()
            .find(|r| r.day == day)
            .ok_or_else(|| ToolFailure::Domain(format!("no {sensor} reading for {} on {day}", asset.asset)))?;
        Ok(json!({
            "asset": asset.asset,
            "sensor": sensor,
            "day": day.to_string(),
            "min": row.min,
            "max": row.max,
            "mean": row.mean,
            "unit": self.unit(&asset.asset, sensor),
        }))
    }

    fn unit(&self, asset: &str, sensor: &str) -> &str {
        self.data
            .sensors
            .iter()
            .find(|s| s.asset == asset && s.sensor == sensor)
            .map_or("", |s| s.unit.as_str())
    }

    fn window<'a>(
        &self,
        args: &Map<String, Value>,
        rows: &'a [ReadingRow],
    ) -> Result<(NaiveDate, NaiveDate, Vec<&'a ReadingRow>), ToolFailure> {
        let start = day_arg(args, "start")?;
        let end = day_arg(args, "end")?;
        if end <= start {
            return Err(ToolFailure::Params(format!("end {end} is not after start {start}")));
        }
        let picked = rows.iter().filter(|r| r.day >= start && r.day < end).collect();
        Ok((start, end, picked))
    }

    fn get_sensor_history(&self, args: &Map<String, Value>) -> ToolResult {
        let (asset, sensor, rows) = self.series(args)?;
        let (start, end, picked) = self.window(args, rows)?;
        let days: Vec<Value> = picked
            .iter()
            .map(|r| json!({"day": r.day.to_string(), "min": r.min, "max": r.max, "mean": r.mean}))
            .collect();
        Ok(json!({
            "asset": asset.asset,
            "sensor": sensor,
            "start": start.to_string(),
            "end": end.to_string(),
            "unit": self.unit(&asset.asset, sensor),
            "days": days,
        }))
    }

    fn modes_for(&self, kind: &str) -> impl Iterator<Item = &FailureModeRow> {
        let kind = kind.to_string();
        self.data.failure_modes.iter().filter(move |m| m.asset_type == kind)
    }

    fn get_failure_modes(&self, args: &Map<String, Value>) -> ToolResult {
        let asset = self.known_asset(args)?;
        let names: Vec<&str> = self.modes_for(&asset.kind).map(|m| m.failure_mode.as_str()).collect();
        Ok(json!(names))
    }

    fn get_failure_mode_sensors(&self, args: &Map<String, Value>) -> ToolResult {
        let asset = self.known_asset(args)?;
        let wanted = string_list(&json_arg(args, "failure_modes")?, "failure_modes")?;
        let mut out = Map::new();
        for name in wanted {
            let mode = self
                .modes_for(&asset.kind)
                .find(|m| m.failure_mode.eq_ignore_ascii_case(&name))
                .ok_or_else(|| ToolFailure::Domain(format!("{name:?} is not a failure mode of {}", asset.asset)))?;
            out.insert(mode.failure_mode.clone(), json!(mode.sensors.split(';').collect::<Vec<_>>()));
        }
        Ok(Value::Object(out))
    }

    fn get_sensor_failure_modes(&self, args: &Map<String, Value>) -> ToolResult {
        let asset = self.known_asset(args)?;
        let sensor = squash(str_arg(args, "sensor")?);
        let names: Vec<&str> = self
            .modes_for(&asset.kind)
            .filter(|m| m.sensors.split(';').any(|s| squash(s) == sensor))
            .map(|m| m.failure_mode.as_str())
            .collect();
        Ok(json!(names))
    }

    fn forecast(&self, args: &Map<String, Value>) -> ToolResult {
        let (asset, sensor, rows) = self.series(args)?;
        let start = day_arg(args, "start")?;
        let horizon = match args.get("horizon_days") {
            Some(Value::Number(n)) => n.as_u64(),
            Some(Value::String(s)) => s.trim().parse().ok(),
            _ => None,
        }
        .filter(|h| (1..=90).contains(h))
        .ok_or_else(|| ToolFailure::Params("horizon_days must be an integer in 1..=90".into()))?;
        let history: Vec<f64> = rows.iter().filter(|r| r.day < start).map(|r| r.mean).collect();
        if history.is_empty() {
            return Err(ToolFailure::Domain(format!("no {sensor} history for {} before {start}", asset.asset)));
        }
        let tail = &history[history.len().saturating_sub(7)..];
        let level = tail.iter().sum::<f64>() / tail.len() as f64;
        let seed = self.config.seed.to_le_bytes();
        let points: Vec<Value> = (0..horizon)
            .map(|i| {
                let day = start + chrono::Days::new(i);
                let day_s = day.to_string();
                let h = fnv(&[&seed, asset.asset.as_bytes(), sensor.as_bytes(), day_s.as_bytes()]);
                // noise in [-1%, +1%)
                let jitter = (h % 2000) as f64 / 100_000.0 - 0.01;
                json!({"day": day_s, "mean": round1(level * (1.0 + jitter))})
            })
            .collect();
        Ok(json!({"asset": asset.asset, "sensor": sensor, "model": "ttm-r1", "forecast": points}))
    }

    fn detect_anomalies(&self, args: &Map<String, Value>) -> ToolResult {
        let (asset, sensor, rows) = self.series(args)?;
        let (start, end, picked) = self.window(args, rows)?;
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.mean).sum::<f64>() / n.max(1.0);
        let sd = (rows.iter().map(|r| (r.mean - mean).powi(2)).sum::<f64>() / n.max(1.0)).sqrt();
        let anomalies: Vec<Value> = picked
            .iter()
            .filter_map(|r| {
                let z = if sd > 0.0 { (r.mean - mean) / sd } else { 0.0 };
                (z.abs() >= 1.5).then(|| json!({"day": r.day.to_string(), "mean": r.mean, "z": round1(z)}))
            })
            .collect();
        Ok(json!({
            "asset": asset.asset,
            "sensor": sensor,
            "start": start.to_string(),
            "end": end.to_string(),
            "days_checked": picked.len(),
            "anomalies": anomalies,
        }))
    }

    fn get_work_order(&self, args: &Map<String, Value>) -> ToolResult {
        let id = str_arg(args, "id")?;
        let wo = self
            .data
            .work_orders
            .iter()
            .find(|w| w.id.eq_ignore_ascii_case(id))
            .ok_or_else(|| ToolFailure::Domain(format!("no work order {id:?}")))?;
        Ok(work_order_json(wo))
    }

    fn list_work_orders(&self, args: &Map<String, Value>) -> Result<Vec<Value>, ToolFailure> {
        let asset = self.known_asset(args)?;
        Ok(self
            .data
            .work_orders
            .iter()
            .filter(|w| w.asset == asset.asset)
            .map(work_order_json)
            .collect())
    }
}

fn work_order_json(wo: &WorkOrderRow) -> Value {
    json!({
        "id": wo.id,
        "asset": wo.asset,
        "opened": wo.opened.to_string(),
        "status": wo.status,
        "description": wo.description,
    })
}

fn select_sensor(args: &Map<String, Value>) -> ToolResult {
    let sensors = string_list(&json_arg(args, "sensors")?, "sensors")?;
    let query = squash(str_arg(args, "query")?);
    let exact = sensors.iter().find(|s| squash(s) == query);
    let partial = || {
        sensors
            .iter()
            .find(|s| squash(s).contains(&query) || query.contains(&squash(s)))
    };
    exact
        .or_else(partial)
        .map(|s| Value::String(s.clone()))
        .ok_or_else(|| ToolFailure::Domain(format!("no sensor matches {query:?}")))
}

fn filter_failure_modes(args: &Map<String, Value>) -> ToolResult {
    let sensor = squash(str_arg(args, "sensor")?);
    let mapping = json_arg(args, "mapping")?;
    let mapping = mapping
        .as_object()
        .ok_or_else(|| ToolFailure::Params("mapping must be an object".into()))?;
    let mut hits = Vec::new();
    for (mode, sensors) in mapping {
        if string_list(sensors, "mapping")?.iter().any(|s| squash(s) == sensor) {
            hits.push(mode.clone());
        }
    }
    Ok(json!(hits))
}

fn list_models() -> Value {
    json!([
        {"model": "ttm-r1", "task": "forecast", "context_days": 7},
        {"model": "zscore", "task": "anomaly", "threshold": 1.5},
    ])
}

fn log_event(path: &Path, domain: Domain, event: &str, id: &Value, tool: &str) {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let line = format!("{domain} {} {event} {id} {tool} {nanos}\n", std::process::id());
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = f.write_all(line.as_bytes());
    }
}

/// Serves stdin until EOF. Used as the simulator binary's main loop.
pub fn serve_stdio(server: &SimServer) -> io::Result<()> {
    std::thread::sleep(server.config.startup);
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let head: Option<(Value, String)> = serde_json::from_str::<Value>(&line).ok().and_then(|v| {
            (v.get("method")? == "tools/call").then(|| {
                let tool = v["params"]["name"].as_str().unwrap_or("?").to_string();
                (v.get("id").cloned().unwrap_or(Value::Null), tool)
            })
        });
        if let (Some(log), Some((id, tool))) = (&server.config.log, &head) {
            log_event(log, server.domain, "recv", id, tool);
        }
        if head.is_some() {
            std::thread::sleep(server.config.latency);
        }
        match server.handle_line(&line) {
            Reply::Line(out) => {
                if let (Some(log), Some((id, tool))) = (&server.config.log, &head) {
                    log_event(log, server.domain, "done", id, tool);
                }
                stdout.write_all(out.as_bytes())?;
                stdout.flush()?;
            }
            Reply::Silent => {}
            Reply::Hang => loop {
                std::thread::sleep(Duration::from_secs(3600));
            },
            Reply::Exit => std::process::exit(3),
        }
    }
    Ok(())
}
