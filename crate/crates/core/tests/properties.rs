use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use serde_json::{json, Map};
use tempo_core::catalog::{ToolCatalog, ToolSignature};
use tempo_core::plan::{layer_plan, Plan, PlanError, PlanStep, StepId};
use tempo_core::semcache::index::{dot, FlatIndex};
use tempo_core::semcache::{
    window_compatible, CacheConfig, CacheEntry, Decision, EntryId, SemanticCache,
};
use tempo_core::temporal::{Query, TemporalBucket, TemporalClassifier};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 6, 10, 9, 0, 0).unwrap()
}

// ---- layering -------------------------------------------------------------

/// Random DAG in declaration order: node i may depend only on nodes < i.
fn dag() -> impl Strategy<Value = Vec<BTreeSet<usize>>> {
    (1usize..=12).prop_flat_map(|n| {
        proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n).prop_map(
            move |bits| {
                (0..n)
                    .map(|i| (0..i).filter(|&j| bits[i][j]).collect())
                    .collect()
            },
        )
    })
}

fn plan_of(deps: &[BTreeSet<usize>], ids: &[StepId]) -> Plan {
    Plan::new(
        "q",
        deps.iter()
            .enumerate()
            .map(|(i, d)| PlanStep {
                step_id: ids[i],
                server: "iot".to_string(),
                tool: "list_assets".to_string(),
                args_template: d
                    .iter()
                    .map(|&j| (format!("a{j}"), json!(format!("$step{}", ids[j]))))
                    .collect(),
                depends_on: d.iter().map(|&j| ids[j]).collect(),
            })
            .collect(),
    )
}

/// Longest dependency chain ending at each node, by plain recursion.
fn depth(node: usize, deps: &[BTreeSet<usize>]) -> usize {
    deps[node]
        .iter()
        .map(|&d| 1 + depth(d, deps))
        .max()
        .unwrap_or(0)
}

fn ids_strategy() -> impl Strategy<Value = Vec<StepId>> {
    // distinct positive ids, not necessarily ascending with declaration order
    Just((1..=12).collect::<Vec<StepId>>()).prop_shuffle()
}

fn catalog() -> ToolCatalog {
    ToolCatalog::new(
        vec![ToolSignature {
            server: "iot".to_string(),
            tool: "list_assets".to_string(),
            description: String::new(),
            params_schema: json!({}),
        }],
        String::new(),
        t0(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kahn_matches_longest_path_oracle(deps in dag(), ids in ids_strategy()) {
        let plan = plan_of(&deps, &ids);
        prop_assert!(plan.validate(&catalog()).is_ok());
        let layered = layer_plan(&plan).unwrap();

        let mut oracle: BTreeMap<usize, Vec<StepId>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate().take(deps.len()) {
            oracle.entry(depth(i, &deps)).or_default().push(*id);
        }
        let oracle: Vec<Vec<StepId>> = oracle
            .into_values()
            .map(|mut l| { l.sort_unstable(); l })
            .collect();
        prop_assert_eq!(&layered.layers, &oracle);

        let mut all: Vec<StepId> = layered.layers.concat();
        all.sort_unstable();
        let mut want = ids[..deps.len()].to_vec();
        want.sort_unstable();
        prop_assert_eq!(all, want);
        for s in &plan.steps {
            let l = layered.layer_of(s.step_id).unwrap();
            for d in &s.depends_on {
                prop_assert!(layered.layer_of(*d).unwrap() < l);
            }
        }
    }
}

proptest! {
    #[test]
    fn corruption_cycle(deps in dag(), ids in ids_strategy(), pick in any::<prop::sample::Index>()) {
        prop_assume!(deps.len() >= 2);
        let mut plan = plan_of(&deps, &ids);
        // close a loop: some node b depends on node a, then make a depend on b
        let b = 1 + pick.index(deps.len() - 1);
        let a = pick.index(b);
        let (id_a, id_b) = (ids[a], ids[b]);
        plan.steps[b].depends_on.insert(id_a);
        plan.steps[a].depends_on.insert(id_b);
        prop_assert!(matches!(plan.validate(&catalog()), Err(PlanError::Cycle(_))));
    }

    #[test]
    fn corruption_duplicate_id(deps in dag(), ids in ids_strategy(), pick in any::<prop::sample::Index>()) {
        prop_assume!(deps.len() >= 2);
        let mut plan = plan_of(&deps, &ids);
        let i = 1 + pick.index(deps.len() - 1);
        let dup = plan.steps[pick.index(i)].step_id;
        plan.steps[i].step_id = dup;
        prop_assert_eq!(plan.validate(&catalog()), Err(PlanError::DuplicateStepId(dup)));
    }

    #[test]
    fn corruption_unknown_tool(deps in dag(), ids in ids_strategy(), pick in any::<prop::sample::Index>(), name in "[a-z]{3,10}") {
        let mut plan = plan_of(&deps, &ids);
        let i = pick.index(deps.len());
        let tool = format!("x_{name}");
        plan.steps[i].tool = tool.clone();
        let err = plan.validate(&catalog()).unwrap_err();
        let is_unknown = matches!(err, PlanError::UnknownTool { .. });
        prop_assert!(is_unknown);
        let names_tool = err.to_string().contains(&tool);
        prop_assert!(names_tool);
    }

    #[test]
    fn corruption_dangling_placeholder(deps in dag(), ids in ids_strategy(), pick in any::<prop::sample::Index>(), target in 1u32..40) {
        let mut plan = plan_of(&deps, &ids);
        let i = pick.index(deps.len());
        prop_assume!(!plan.steps[i].depends_on.contains(&target));
        plan.steps[i].args_template.insert("extra".to_string(), json!(format!("see $step{target} here")));
        prop_assert_eq!(
            plan.validate(&catalog()),
            Err(PlanError::DanglingPlaceholder { step: plan.steps[i].step_id, referenced: target })
        );
    }

    #[test]
    fn resolve_args_identity_without_placeholders(text in "[a-z ]{0,20}", n in 0i64..1000) {
        let mut args = Map::new();
        args.insert("t".to_string(), json!(text));
        args.insert("n".to_string(), json!(n));
        args.insert("nested".to_string(), json!({"l": [text.clone(), n]}));
        let step = PlanStep {
            step_id: 1,
            server: "iot".to_string(),
            tool: "list_assets".to_string(),
            args_template: args.clone(),
            depends_on: BTreeSet::new(),
        };
        let once = tempo_core::plan::resolve_args(&step, &BTreeMap::new()).unwrap();
        prop_assert_eq!(&once, &args);
        let again = PlanStep { args_template: once, ..step };
        prop_assert_eq!(tempo_core::plan::resolve_args(&again, &BTreeMap::new()).unwrap(), args);
    }
}

// ---- vector index ---------------------------------------------------------

fn unit(v: Vec<f32>) -> Option<Vec<f32>> {
    let n = dot(&v, &v).sqrt();
    (n > 1e-3).then(|| v.iter().map(|x| (f64::from(*x) / n) as f32).collect())
}

proptest! {
    #[test]
    fn index_top_k_equals_exact_scan(
        rows in proptest::collection::vec(proptest::collection::vec(-4i8..=4, 6), 0..40),
        query in proptest::collection::vec(-4i8..=4, 6),
        k in 1usize..8,
        removals in proptest::collection::vec(any::<prop::sample::Index>(), 0..5),
    ) {
        let Some(q) = unit(query.iter().map(|&x| f32::from(x)).collect()) else { return Ok(()) };
        let mut idx = FlatIndex::new(6);
        let mut live: BTreeMap<EntryId, Vec<f32>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            // small integer grid makes exact ties common
            if let Some(v) = unit(r.iter().map(|&x| f32::from(x)).collect()) {
                idx.insert(EntryId(i as u64), &v);
                live.insert(EntryId(i as u64), v);
            }
        }
        for r in removals {
            if live.is_empty() { break; }
            let id = *live.keys().nth(r.index(live.len())).unwrap();
            live.remove(&id);
            prop_assert!(idx.remove(id));
        }
        let mut exact: Vec<(EntryId, f64)> = live.iter().map(|(id, v)| (*id, dot(v, &q))).collect();
        exact.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        exact.truncate(k);
        prop_assert_eq!(idx.top_k(&q, k), exact);
    }
}

// ---- cache ----------------------------------------------------------------

fn small_config(capacity: usize) -> CacheConfig {
    CacheConfig {
        capacity,
        ..CacheConfig::default()
    }
}

const WORDS: [&str; 12] = [
    "chiller", "tonnage", "failure", "modes", "sensor", "pump", "power", "work", "order",
    "efficiency", "list", "show",
];

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(0usize..WORDS.len(), 2..7)
        .prop_map(|ws| ws.into_iter().map(|w| WORDS[w]).collect::<Vec<_>>().join(" "))
}

proptest! {
    #[test]
    fn cache_never_exceeds_capacity(
        capacity in 1usize..8,
        ops in proptest::collection::vec((any::<bool>(), sentence()), 1..60),
    ) {
        let classifier = TemporalClassifier::default();
        let mut cache = SemanticCache::with_reference_scorers(small_config(capacity)).unwrap();
        let mut inserted = 0usize;
        for (i, (is_insert, text)) in ops.into_iter().enumerate() {
            let q = Query::new(format!("q{i}"), text, t0() + Duration::seconds(i as i64)).unwrap();
            let cq = classifier.classify_and_resolve(q);
            if is_insert {
                cache.insert(&cq, "answer").unwrap();
                inserted += 1;
            } else {
                cache.lookup(&cq);
            }
            prop_assert!(cache.len() <= capacity);
            prop_assert_eq!(cache.len(), inserted.min(capacity));
        }
    }

    #[test]
    fn gated_hits_have_compatible_windows(
        day_a in 1u32..28, day_b in 1u32..28, len_a in 1u32..3, len_b in 1u32..3,
    ) {
        let classifier = TemporalClassifier::default();
        let text = |d: u32, l: u32| format!(
            "Show the daily Tonnage sensor readings for Chiller 6 at the MAIN site from 2020-06-{d:02} to 2020-06-{:02} together with the minimum maximum and average value for each day",
            d + l
        );
        let mut cache = SemanticCache::with_reference_scorers(CacheConfig::default()).unwrap();
        let seed = classifier.classify_and_resolve(Query::new("a", text(day_a, len_a), t0()).unwrap());
        cache.insert(&seed, "x").unwrap();
        let probe = classifier.classify_and_resolve(Query::new("b", text(day_b, len_b), t0()).unwrap());
        let out = cache.lookup(&probe);
        if out.decision == Decision::Hit {
            let w = cache.entry(out.matched_entry.unwrap()).unwrap().window;
            prop_assert!(window_compatible(w.as_ref(), probe.window().as_ref()));
        }
        if (day_a, len_a) == (day_b, len_b) {
            prop_assert_eq!(out.decision, Decision::Hit);
        }
    }
}

/// Eviction victim by successive filtering, independent of the tuple key.
fn oracle_victim(entries: &[CacheEntry]) -> EntryId {
    let min_hits = entries.iter().map(|e| e.hit_count).min().unwrap();
    let a: Vec<&CacheEntry> = entries.iter().filter(|e| e.hit_count == min_hits).collect();
    let min_recent = a.iter().map(|e| e.last_access).min().unwrap();
    let b: Vec<&&CacheEntry> = a.iter().filter(|e| e.last_access == min_recent).collect();
    let oldest = b.iter().map(|e| e.inserted_at).min().unwrap();
    b.iter()
        .filter(|e| e.inserted_at == oldest)
        .map(|e| e.id)
        .min()
        .unwrap()
}

fn entries_strategy() -> impl Strategy<Value = Vec<CacheEntry>> {
    proptest::collection::vec((0u64..3, 0u64..3, 0i64..3), 1..=10).prop_map(|keys| {
        keys.into_iter()
            .enumerate()
            .map(|(i, (hits, last, ins))| {
                let mut embedding = vec![0f32; CacheConfig::default().embedding_dim];
                embedding[i] = 1.0;
                CacheEntry {
                    id: EntryId(i as u64 + 1),
                    query_text: format!("q{i}"),
                    embedding,
                    answer: String::new(),
                    window: None,
                    hit_count: hits,
                    last_access: last,
                    inserted_at: t0() + Duration::seconds(ins),
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn lcfu_matches_oracle_under_any_insertion_order(
        (entries, perm) in entries_strategy().prop_flat_map(|e| {
            let n = e.len();
            (Just(e), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let ordered: Vec<CacheEntry> = perm.iter().map(|&i| entries[i].clone()).collect();
        let mut cache = SemanticCache::with_reference_scorers(small_config(10))
            .unwrap()
            .with_entries(ordered)
            .unwrap();
        let mut remaining = entries.clone();
        while !remaining.is_empty() {
            let want = oracle_victim(&remaining);
            prop_assert_eq!(cache.evict_one().unwrap(), want);
            remaining.retain(|e| e.id != want);
        }
        prop_assert!(cache.is_empty());
    }
}

// ---- temporal -------------------------------------------------------------

fn relative_phrase() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("anomalies from yesterday".to_string()),
        Just("what happened today on chiller 6".to_string()),
        (1u32..200).prop_map(|n| format!("readings over the past {n} hours")),
        (1u32..60).prop_map(|n| format!("alarms in the last {n} days")),
    ]
}

proptest! {
    #[test]
    fn classification_is_deterministic(text in "[ -~]{1,60}") {
        let a = TemporalClassifier::default();
        let b = TemporalClassifier::default();
        prop_assert_eq!(a.classify(&text), b.classify(&text));
        prop_assert_eq!(a.classify(&text), a.classify(&text));
    }

    #[test]
    fn relative_windows_shift_with_issue_day(phrase in relative_phrase(), days in -400i64..400, secs in 0i64..86_400) {
        let c = TemporalClassifier::default();
        let base = Utc.with_ymd_and_hms(2020, 6, 10, 0, 0, 0).unwrap() + Duration::seconds(secs);
        let moved = base + Duration::days(days);
        let w0 = c.resolve_window(TemporalBucket::Relative, &phrase, base).unwrap();
        let w1 = c.resolve_window(TemporalBucket::Relative, &phrase, moved).unwrap();
        prop_assert_eq!(w1, w0.shifted(Duration::days(days)));
    }

    #[test]
    fn last_week_shifts_by_whole_weeks(weeks in -50i64..50, secs in 0i64..(7 * 86_400)) {
        let c = TemporalClassifier::default();
        let base = Utc.with_ymd_and_hms(2020, 6, 8, 0, 0, 0).unwrap() + Duration::seconds(secs);
        let w0 = c.resolve_window(TemporalBucket::Relative, "last week", base).unwrap();
        let w1 = c.resolve_window(TemporalBucket::Relative, "last week", base + Duration::weeks(weeks)).unwrap();
        prop_assert_eq!(w1, w0.shifted(Duration::weeks(weeks)));
    }

    #[test]
    fn volatile_trigger_always_wins(
        prefix in "[a-z0-9 -]{0,30}",
        suffix in "[a-z0-9 -]{0,30}",
        trigger in prop::sample::select(vec!["current", "now", "status", "live", "latest", "right now"]),
        extra in prop::sample::select(vec!["", " from 2020-06-01 to 2020-06-07", " yesterday", " last week", " June 2020"]),
    ) {
        let text = format!("{prefix} {trigger} {suffix}{extra}");
        let c = TemporalClassifier::default();
        prop_assert_eq!(c.classify(&text), TemporalBucket::Volatile);
        let cq = c.classify_and_resolve(Query::new("q", text, t0()).unwrap());
        prop_assert_eq!(cq.bucket(), TemporalBucket::Volatile);
        prop_assert!(cq.window().is_none());
    }
}
