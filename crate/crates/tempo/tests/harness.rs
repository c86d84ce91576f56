mod common;

use std::collections::BTreeMap;

use tempo::clock::{Clock, CostModel};
use tempo::config::TempoConfig;
use tempo::core::stats::median;
use tempo::core::temporal::{Query, TemporalClassifier};
use tempo::core::workload::{Tier, WorkloadSpec};
use tempo::harness::*;
use tempo::pipeline::PhaseTimings;

use common::*;

fn spec(rng_seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        warm_count: 20,
        test_size: 80,
        warm_fraction: 0.6,
        rng_seed,
        adversarial: false,
    }
}

fn simulated(dir: &std::path::Path) -> TempoConfig {
    let mut cfg = TempoConfig::default();
    cfg.sim.binary = Some(sim_bin());
    cfg.discovery.cache_path = dir.join("discovery.json");
    cfg.clock = Clock::Simulated(CostModel::default());
    cfg
}

#[test]
fn bundled_workload_is_split_48_32() {
    let w = generate_workload(&bundled_corpus(), &spec(42)).unwrap();
    let count = |t: Tier| w.test.iter().filter(|r| r.tier == t).count();
    assert_eq!((count(Tier::Warm), count(Tier::Cold)), (48, 32));
    assert_eq!(w.seeds.len(), 20);
    for r in &w.test {
        assert_eq!(r.tier == Tier::Warm, w.warm_parents.contains(&r.parent_id), "{}", r.id);
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = generate_workload(&bundled_corpus(), &spec(42)).unwrap();
    let b = generate_workload(&bundled_corpus(), &spec(42)).unwrap();
    let c = generate_workload(&bundled_corpus(), &spec(43)).unwrap();
    assert_eq!(rows_to_csv(&a.test), rows_to_csv(&b.test));
    assert_eq!(rows_to_csv(&a.seeds), rows_to_csv(&b.seeds));
    assert_ne!(rows_to_csv(&a.test), rows_to_csv(&c.test));
}

#[test]
fn csv_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let rows = generate_workload(&bundled_corpus(), &spec(42)).unwrap().test;
    let path = dir.path().join("test.csv");
    write_rows(&path, &rows).unwrap();
    assert_eq!(read_rows(&path).unwrap(), rows);
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("id,parent_id,text,tier,timestamp\n"));
}

#[test]
fn shipped_corpus_file_is_current() {
    let shipped = read_rows(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/corpus.csv")).unwrap();
    assert_eq!(shipped, bundled_corpus());
}

#[tokio::test]
async fn warming_stores_every_cacheable_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path());
    let seeds = generate_workload(&bundled_corpus(), &spec(42)).unwrap().seeds;
    let classifier = TemporalClassifier::default();
    let cacheable = seeds
        .iter()
        .filter(|r| {
            let q = Query::new(r.id.clone(), r.text.clone(), r.timestamp).unwrap();
            classifier.classify_and_resolve(q).is_cacheable()
        })
        .count();
    let mut p = cfg.build(cfg.arm(true, true, true)).unwrap();
    let w = warm_from_seeds(&mut p, &seeds).await;
    assert_eq!(w.failed, 0);
    assert_eq!(w.inserted, cacheable);
    assert_eq!(p.cache().unwrap().len(), cacheable);
    p.shutdown().await;
}

#[tokio::test]
async fn report_files_round_trip_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path());
    let w = generate_workload(&bundled_corpus(), &spec(42)).unwrap();
    let run = run_experiment(&cfg, &w.test, &w.seeds, ArmSelection::Both).await.unwrap();
    assert_eq!(run.baseline.len() + run.optimized.len(), 160);

    let out = dir.path().join("a");
    let report = emit_report(&run, &out).unwrap();
    assert_eq!(load_report(&out).unwrap(), report);
    let rows_csv = std::fs::read_to_string(out.join("rows.csv")).unwrap();
    assert_eq!(rows_csv.lines().count(), 1 + w.test.len());
    assert!(std::fs::read_to_string(out.join("summary.txt")).unwrap().contains("precision"));

    let again = dir.path().join("b");
    emit_report(&run, &again).unwrap();
    for f in ["report.json", "rows.csv", "summary.txt"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let paired = report.paired.unwrap();
    assert!(paired.hits > 0 && paired.median_ratio.unwrap() > 1.0);
    for (b, o) in run.pairs() {
        if o.is_hit() {
            assert!(o.latency() * 10 < b.latency(), "{}", o.scenario_id);
        }
    }
    let dq = report.decision_quality.unwrap().confusion;
    assert_eq!(dq.tp + dq.fp + dq.fn_ + dq.tn, 80);
    assert_eq!(dq.tp + dq.fn_, 48);
}

#[tokio::test]
async fn phase_medians_match_a_sorting_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path());
    let w = generate_workload(&bundled_corpus(), &spec(7)).unwrap();
    let test = &w.test[..24];
    let run = run_experiment(&cfg, test, &w.seeds, ArmSelection::Optimized).await.unwrap();
    let stats = arm_stats(&run.optimized);
    let oracle = |phase: &str| {
        let mut v: Vec<f64> = run.optimized.iter().map(|r| ms(r.outcome.timings.phase(phase).unwrap())).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
    };
    let expected: BTreeMap<String, f64> = PhaseTimings::PHASES
        .iter()
        .chain(&["total"])
        .map(|p| (p.to_string(), oracle(p)))
        .collect();
    assert_eq!(stats.phase_medians_ms, expected);
    let totals: Vec<f64> = run.optimized.iter().map(|r| ms(r.latency())).collect();
    assert_eq!(stats.median_ms, median(&totals));
    assert!(run.baseline.is_empty());
}

#[tokio::test]
async fn unknown_server_rows_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = simulated(dir.path());
    cfg.servers = vec![tempo::mcpio::ServerSpec::new("iot", "/nonexistent/iot")];
    let w = generate_workload(&bundled_corpus(), &spec(42)).unwrap();
    let run = run_experiment(&cfg, &w.test[..4], &w.seeds[..2], ArmSelection::Baseline).await.unwrap();
    assert_eq!(run.baseline.len(), 4);
    assert_eq!(run.report().errors, 4);
}
