//! Exhaustive enumeration of message delivery orders.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use super::{SimError, World};
use crate::history::History;
use crate::message::Envelope;
use crate::server::{Mutation, ReadRule};
use crate::types::{ClientId, Key, Value};
use crate::workload::TxnScript;

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub clients: u32,
    pub partitions: u32,
    pub keys: u32,
    pub variant: ReadRule,
    pub mutation: Option<Mutation>,
    /// Skip states reached before. With pruning off every complete schedule
    /// is walked and counted.
    pub prune: bool,
    pub cap: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            clients: 2,
            partitions: 2,
            keys: 2,
            variant: ReadRule::EigerPortPlus,
            mutation: None,
            prune: true,
            cap: 5_000_000,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExploreResult {
    /// Distinct maximal histories, compared per client.
    pub histories: Vec<History>,
    /// States expanded.
    pub states: usize,
    /// Maximal schedules reached (after pruning, if enabled).
    pub schedules: u64,
    pub violations: Vec<String>,
    /// Maximal states whose message counters break a NOC property.
    pub noc_failures: u64,
}

fn fingerprint_history(h: &History, hs: &mut [DefaultHasher; 2]) {
    let mut by_client: BTreeMap<ClientId, Vec<&crate::history::HistoryEvent>> = BTreeMap::new();
    for r in &h.records {
        by_client.entry(r.event.client()).or_default().push(&r.event);
    }
    for x in hs.iter_mut() {
        by_client.hash(x);
    }
}

fn new_hashers() -> [DefaultHasher; 2] {
    let mut b = DefaultHasher::new();
    0x9e37_79b9_7f4a_7c15u64.hash(&mut b);
    [DefaultHasher::new(), b]
}

fn finish(hs: [DefaultHasher; 2]) -> u128 {
    (hs[0].finish() as u128) << 64 | hs[1].finish() as u128
}

fn state_hash(w: &World, flight: &[Envelope]) -> u128 {
    let mut hs = new_hashers();
    let mut sorted: Vec<&Envelope> = flight.iter().collect();
    sorted.sort_unstable();
    for x in hs.iter_mut() {
        w.clients.hash(x);
        w.servers.hash(x);
        sorted.hash(x);
    }
    fingerprint_history(&w.history, &mut hs);
    finish(hs)
}

pub(super) fn history_hash(h: &History) -> u128 {
    let mut hs = new_hashers();
    fingerprint_history(h, &mut hs);
    finish(hs)
}

/// Walk every order in which in-flight messages can be delivered. Each
/// client starts its next transaction as soon as the previous one ends; the
/// client's state does not change while it is idle, so the moment it does
/// so is irrelevant.
pub fn explore(cfg: &ExploreConfig, scripts: Vec<Vec<TxnScript>>) -> Result<ExploreResult, SimError> {
    let mut w = World::new(cfg.clients, cfg.partitions, cfg.keys, cfg.variant, cfg.mutation, scripts);
    w.deep_checks = true;
    let flight = w.start()?;
    let mut res = ExploreResult::default();
    let mut seen_states: HashSet<u128> = HashSet::new();
    let mut seen_histories: HashSet<u128> = HashSet::new();
    let mut seen_violations: BTreeSet<String> = BTreeSet::new();
    let mut stack = vec![(w, flight)];
    while let Some((w, flight)) = stack.pop() {
        res.states += 1;
        if res.states > cfg.cap {
            return Err(SimError::ExploreCap { cap: cfg.cap });
        }
        for v in &w.monitor.violations {
            if seen_violations.insert(v.clone()) && res.violations.len() < super::MAX_REPORTED {
                res.violations.push(v.clone());
            }
        }
        if flight.is_empty() {
            if !w.finished() {
                return Err(SimError::Deadlock(w.describe_clients()));
            }
            res.schedules += 1;
            if !w.noc().holds() {
                res.noc_failures += 1;
            }
            if seen_histories.insert(history_hash(&w.history)) {
                res.histories.push(w.history.clone());
            }
            continue;
        }
        let mut tried: HashSet<&Envelope> = HashSet::new();
        for (i, e) in flight.iter().enumerate() {
            if !tried.insert(e) {
                continue;
            }
            let mut next = w.clone();
            next.set_tick(w.tick + 1);
            let mut rest = flight.clone();
            let env = rest.swap_remove(i);
            rest.extend(next.deliver(env)?.out);
            if cfg.prune && !seen_states.insert(state_hash(&next, &rest)) {
                continue;
            }
            stack.push((next, rest));
        }
    }
    Ok(res)
}

/// Every non-empty key subset of `0..keys`.
fn key_subsets(keys: u32) -> Vec<BTreeSet<Key>> {
    (1u32..1 << keys)
        .map(|m| (0..keys).filter(|k| m >> k & 1 == 1).map(Key).collect())
        .collect()
}

/// Every assignment of transaction shapes (read or write of a non-empty key
/// subset) to `clients` clients with `txns` transactions each.
pub fn all_shapes(clients: u32, keys: u32, txns: u32) -> Vec<Vec<Vec<TxnScript>>> {
    let subsets = key_subsets(keys);
    let shapes = 2 * subsets.len();
    let slots = (clients * txns) as usize;
    let total = shapes.pow(slots as u32);
    (0..total)
        .map(|mut n| {
            let mut scripts = vec![Vec::new(); clients as usize];
            for slot in 0..slots {
                let (c, sn) = (slot / txns as usize, (slot % txns as usize) as u32);
                let s = n % shapes;
                n /= shapes;
                let ks = &subsets[s / 2];
                let cl = ClientId(c as u32 + 1);
                scripts[c].push(if s % 2 == 0 {
                    TxnScript::Read(ks.clone())
                } else {
                    TxnScript::Write(ks.iter().map(|&k| (k, Value::provenance(cl, sn, k))).collect())
                });
            }
            scripts
        })
        .collect()
}
