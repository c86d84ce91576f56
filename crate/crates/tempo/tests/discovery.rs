mod common;

use std::fs::File;
use std::time::{Duration, Instant, SystemTime};

use chrono::{TimeDelta, TimeZone, Utc};
use tempo::discovery::{
    discover_live, fingerprint_inputs, load_or_discover, CatalogSource, DiscoveryError, DiscoveryMode, DiscoverySettings,
};

use common::*;

fn settings(dir: &std::path::Path) -> DiscoverySettings {
    let servers = dir.join("servers");
    std::fs::create_dir_all(&servers).unwrap();
    std::fs::write(servers.join("iot.toml"), "x = 1\n").unwrap();
    DiscoverySettings {
        cache_path: dir.join("cache").join("discovery.json"),
        servers_dir: Some(servers),
        ..Default::default()
    }
}

fn t0() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
}

#[tokio::test]
async fn second_discovery_comes_from_disk_without_contact() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let pool = pool(0, 0, None);
    let first = load_or_discover(&pool, &s, t0()).await.unwrap();
    assert_eq!(first.source, CatalogSource::Fresh);
    assert_eq!(first.contacted.len(), 4);
    let before = pool.stats();
    let second = load_or_discover(&pool, &s, t0() + TimeDelta::hours(1)).await.unwrap();
    assert_eq!(second.source, CatalogSource::DiskCache);
    assert!(second.contacted.is_empty());
    assert_eq!(second.catalog, first.catalog);
    assert_eq!(pool.stats(), before);
    pool.shutdown().await;
}

#[tokio::test]
async fn expired_catalog_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let pool = pool(0, 0, None);
    load_or_discover(&pool, &s, t0()).await.unwrap();
    let edge = load_or_discover(&pool, &s, t0() + TimeDelta::hours(24) - TimeDelta::seconds(1)).await.unwrap();
    assert_eq!(edge.source, CatalogSource::DiskCache);
    let late = load_or_discover(&pool, &s, t0() + TimeDelta::hours(24)).await.unwrap();
    assert_eq!(late.source, CatalogSource::Fresh);
    pool.shutdown().await;
}

#[tokio::test]
async fn touching_a_server_file_invalidates() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let pool = pool(0, 0, None);
    let before = fingerprint_inputs(&pool, &s).unwrap().fingerprint();
    load_or_discover(&pool, &s, t0()).await.unwrap();
    let f = File::options().write(true).open(s.servers_dir.as_ref().unwrap().join("iot.toml")).unwrap();
    f.set_modified(SystemTime::now() + Duration::from_secs(5)).unwrap();
    drop(f);
    assert_ne!(fingerprint_inputs(&pool, &s).unwrap().fingerprint(), before);
    let again = load_or_discover(&pool, &s, t0()).await.unwrap();
    assert_eq!(again.source, CatalogSource::Fresh);
    pool.shutdown().await;
}

#[tokio::test]
async fn config_file_mtime_is_watched() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    let cfg = dir.path().join("tempo.toml");
    std::fs::write(&cfg, "").unwrap();
    s.config_file = Some(cfg.clone());
    let pool = pool(0, 0, None);
    let before = fingerprint_inputs(&pool, &s).unwrap();
    File::options().write(true).open(&cfg).unwrap().set_modified(SystemTime::now() + Duration::from_secs(5)).unwrap();
    let after = fingerprint_inputs(&pool, &s).unwrap();
    assert_ne!(before.config_mtime, after.config_mtime);
    assert_ne!(before.fingerprint(), after.fingerprint());
}

#[tokio::test]
async fn corrupt_cache_file_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let pool = pool(0, 0, None);
    load_or_discover(&pool, &s, t0()).await.unwrap();
    std::fs::write(&s.cache_path, "{ not json").unwrap();
    let d = load_or_discover(&pool, &s, t0()).await.unwrap();
    assert_eq!(d.source, CatalogSource::Fresh);
    let reread = load_or_discover(&pool, &s, t0()).await.unwrap();
    assert_eq!(reread.source, CatalogSource::DiskCache);
    pool.shutdown().await;
}

#[tokio::test]
async fn missing_watched_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    s.servers_dir = Some(dir.path().join("gone"));
    let pool = pool(0, 0, None);
    assert!(matches!(load_or_discover(&pool, &s, t0()).await, Err(DiscoveryError::MissingPath(_))));
}

#[tokio::test]
async fn empty_tool_list_is_tolerated() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let pool = tempo::mcpio::ServerPool::new([sim("iot").env("TEMPO_SIM_FAULT", "empty-tools"), sim("wo")], TIMEOUT).unwrap();
    let d = load_or_discover(&pool, &s, t0()).await.unwrap();
    assert!(d.catalog.tools.iter().all(|t| t.server == "wo"));
    pool.shutdown().await;
}

#[tokio::test]
async fn failing_server_fails_discovery() {
    let pool = tempo::mcpio::ServerPool::new([sim("iot"), tempo::mcpio::ServerSpec::new("bad", "/nonexistent/x")], TIMEOUT).unwrap();
    match discover_live(&pool, DiscoveryMode::Pooled).await {
        Err(DiscoveryError::Servers(m)) => assert!(m.contains_key("bad") && !m.contains_key("iot")),
        other => panic!("{other:?}"),
    }
    pool.shutdown().await;
}

#[tokio::test]
async fn pooled_discovery_overlaps_startup() {
    let startup = Duration::from_millis(250);
    let pool = pool(0, startup.as_millis() as u64, None);
    let t = Instant::now();
    discover_live(&pool, DiscoveryMode::Ephemeral).await.unwrap();
    let sequential = t.elapsed();
    let t = Instant::now();
    discover_live(&pool, DiscoveryMode::Pooled).await.unwrap();
    let pooled = t.elapsed();
    assert!(sequential >= startup * 4, "{sequential:?}");
    assert!(pooled >= startup && pooled < startup * 2, "{pooled:?}");
    pool.shutdown().await;
}
