use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::checker::{check_each, check_tccv_reference};
use crate::types::{Key, Value};

fn small(seed: u64) -> SimConfig {
    SimConfig {
        clients: 3,
        partitions: 2,
        keys: 8,
        txns_per_client: 60,
        read_proportion: 0.5,
        read_keys: 2,
        seed,
        deep_checks: true,
        ..SimConfig::default()
    }
}

fn ks(v: &[u32]) -> BTreeSet<Key> {
    v.iter().map(|&k| Key(k)).collect()
}

fn write(cl: u32, sn: u32, v: &[u32]) -> TxnScript {
    TxnScript::Write(
        v.iter()
            .map(|&k| (Key(k), Value::provenance(ClientId(cl), sn, Key(k))))
            .collect::<BTreeMap<_, _>>(),
    )
}

#[test]
fn small_runs_are_consistent() {
    for seed in 0..20 {
        let out = run(&small(seed)).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        assert_eq!(out.metrics.committed, 180);
        assert_eq!(out.metrics.reads + out.metrics.writes, 180);
        assert!(out.metrics.noc.holds(), "{:?}", out.metrics.noc);
        for v in check_each(&out.history).unwrap() {
            assert!(v.is_pass(), "seed {seed}: {:?}", v.violation());
        }
        assert!(check_tccv_reference(&out.history).unwrap().is_pass());
    }
}

#[test]
fn runs_are_deterministic() {
    let a = run(&small(3)).unwrap();
    let b = run(&small(3)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.metrics, b.metrics);
    let c = run(&small(4)).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn fixed_delay_latencies() {
    // one client, writes only, delay 5: prepare and commit round trips
    let cfg = SimConfig {
        clients: 1,
        partitions: 1,
        keys: 4,
        txns_per_client: 10,
        read_proportion: 0.0,
        delay: Delay::Fixed(5),
        scan_cost: 0,
        ..SimConfig::default()
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.metrics.latency_p50, 20);
    assert_eq!(out.metrics.latency_p99, 20);
    assert_eq!(out.metrics.ticks, 200);
    assert!((out.metrics.throughput - 50.0).abs() < 1e-9);
}

#[test]
fn config_validation() {
    assert!(run(&SimConfig { partitions: 0, ..small(0) }).is_err());
    assert!(run(&SimConfig { delay: Delay::Uniform { lo: 5, hi: 1 }, ..small(0) }).is_err());
    assert!(run(&SimConfig { read_keys: 9, ..small(0) }).is_err());
}

#[test]
fn delay_parsing() {
    assert_eq!(Delay::parse("7"), Some(Delay::Fixed(7)));
    assert_eq!(Delay::parse("fixed:0"), Some(Delay::Fixed(0)));
    assert_eq!(Delay::parse("uniform:10-50"), Some(Delay::Uniform { lo: 10, hi: 50 }));
    assert_eq!(Delay::parse("uniform:5-1"), None);
    assert_eq!(Delay::parse("x"), None);
    let d = Delay::Uniform { lo: 1, hi: 2 };
    assert_eq!(Delay::parse(&d.to_string()), Some(d));
}

#[test]
fn percentiles() {
    let v: Vec<u64> = (1..=100).collect();
    assert_eq!(percentile(&v, 0.5), 50);
    assert_eq!(percentile(&v, 0.99), 99);
    assert_eq!(percentile(&[7], 0.99), 7);
    assert_eq!(percentile(&[], 0.5), 0);
}

fn unpruned(clients: u32) -> ExploreConfig {
    ExploreConfig {
        clients,
        prune: false,
        ..ExploreConfig::default()
    }
}

#[test]
fn explore_counts_single_transaction_schedules() {
    // n keys: (2n)! / 2^n orders of n request/reply pairs per round
    let r = explore(&unpruned(1), vec![vec![write(1, 0, &[0, 1])]]).unwrap();
    assert_eq!(r.schedules, 36);
    assert_eq!(r.histories.len(), 1);
    let r = explore(&unpruned(1), vec![vec![TxnScript::Read(ks(&[0, 1]))]]).unwrap();
    assert_eq!(r.schedules, 6);
    let r = explore(&unpruned(1), vec![vec![write(1, 0, &[0])]]).unwrap();
    assert_eq!(r.schedules, 1);
}

#[test]
fn explore_empty_workload() {
    let r = explore(&ExploreConfig::default(), vec![vec![], vec![]]).unwrap();
    assert_eq!(r.schedules, 1);
    assert_eq!(r.histories.len(), 1);
    assert!(r.histories[0].is_empty());
}

#[test]
fn explore_cap() {
    let cfg = ExploreConfig { cap: 3, ..unpruned(1) };
    assert!(matches!(
        explore(&cfg, vec![vec![write(1, 0, &[0, 1])]]),
        Err(SimError::ExploreCap { cap: 3 })
    ));
}

#[test]
fn pruning_keeps_histories() {
    let scripts = vec![
        vec![write(1, 0, &[0, 1])],
        vec![TxnScript::Read(ks(&[0, 1]))],
    ];
    let full = explore(&unpruned(2), scripts.clone()).unwrap();
    let pruned = explore(&ExploreConfig::default(), scripts).unwrap();
    assert!(pruned.states < full.states);
    let fp = |r: &ExploreResult| r.histories.iter().map(super::explore::history_hash).collect::<BTreeSet<_>>();
    assert_eq!(fp(&full), fp(&pruned));
    assert!(full.histories.len() > 1);
    for h in &full.histories {
        for v in check_each(h).unwrap() {
            assert!(v.is_pass(), "{:?}", v.violation());
        }
    }
}

#[test]
fn all_shapes_enumeration() {
    let w = all_shapes(2, 2, 1);
    assert_eq!(w.len(), 36);
    let distinct: BTreeSet<_> = w.iter().collect();
    assert_eq!(distinct.len(), 36);
    assert_eq!(all_shapes(1, 1, 2).len(), 4);
}

#[test]
fn scripted_steps() {
    let cfg = ScriptConfig {
        clients: 1,
        partitions: 1,
        keys: 1,
        variant: ReadRule::EigerPortPlus,
        mutation: None,
    };
    let steps = vec![
        ScriptStep::Invoke { cl: ClientId(1), txn: write(1, 0, &[0]) },
        ScriptStep::deliver(1, MessageKind::PrepReq, 0),
        ScriptStep::deliver(1, MessageKind::PrepReply, 0),
    ];
    let s = scripted_run(&cfg, &steps).unwrap();
    assert_eq!(s.in_flight.len(), 1);
    assert_eq!(s.in_flight[0].msg.kind(), MessageKind::CommitReq);
    assert_eq!(s.world.history().len(), 1);

    let mut bad = steps.clone();
    bad.push(ScriptStep::deliver(1, MessageKind::CommitReply, 0));
    assert!(matches!(scripted_run(&cfg, &bad), Err(SimError::Script { step: 3, .. })));
    let mut busy = steps;
    busy.push(ScriptStep::Invoke { cl: ClientId(1), txn: TxnScript::Read(ks(&[0])) });
    assert!(matches!(scripted_run(&cfg, &busy), Err(SimError::Script { step: 3, .. })));
}
