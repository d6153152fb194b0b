//! Bounded breadth-first enumeration of reachable model configurations.

use std::collections::{BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use super::{AbstractConfig, AbstractKvs, Commit, DepGraph, Fingerprint, View};
use crate::types::{ClientId, Key, TxnId, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValueDomain {
    /// Writes may use any of these values.
    Set(Vec<Value>),
    /// The written value is determined by the writer and key.
    Provenance,
}

#[derive(Clone, Debug)]
pub struct Bounds {
    pub clients: u32,
    pub keys: u32,
    pub txns_per_client: u32,
    pub values: ValueDomain,
    /// Maximum number of distinct configurations.
    pub cap: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReachError {
    #[error("state cap {cap} exceeded after {visited} configurations")]
    CapExceeded { cap: usize, visited: usize },
}

/// Every index set over `n` versions that contains 0 and `base`.
fn supersets(base: &[usize], n: usize) -> Vec<BTreeSet<usize>> {
    let free: Vec<usize> = (1..n).filter(|i| !base.contains(i)).collect();
    (0u64..1 << free.len())
        .map(|mask| {
            let mut s: BTreeSet<usize> = base.iter().copied().collect();
            s.insert(0);
            s.extend(free.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &i)| i));
            s
        })
        .collect()
}

/// Every view over `keys` that includes `base`, wellformed or not.
fn views_above(kvs: &AbstractKvs, base: &View, keys: u32) -> Vec<View> {
    let mut out = vec![View::init()];
    for k in (0..keys).map(Key) {
        let choices = supersets(&base.indices(k), kvs.len(k));
        out = out
            .into_iter()
            .flat_map(|u| {
                choices.iter().map(move |s| {
                    let mut u = u.clone();
                    u.set(k, s.clone());
                    u
                })
            })
            .collect();
    }
    out
}

fn fingerprints(kvs: &AbstractKvs, u: &View, t: TxnId, b: &Bounds) -> Vec<Fingerprint> {
    let mut out = vec![Fingerprint::new()];
    for k in (0..b.keys).map(Key) {
        let latest = kvs.versions(k)[u.latest(k).unwrap_or(0)].val;
        let vals = match &b.values {
            ValueDomain::Set(vs) => vs.clone(),
            ValueDomain::Provenance => vec![Value::provenance(t.cl, t.sn, k)],
        };
        let mut next = Vec::new();
        for f in out {
            next.push(f.clone());
            next.push(f.clone().read(k, latest));
            for &v in &vals {
                next.push(f.clone().write(k, v));
                next.push(f.clone().read(k, latest).write(k, v));
            }
        }
        out = next;
    }
    out.retain(|f| !f.is_empty());
    out
}

fn successors(cfg: &AbstractConfig, b: &Bounds) -> Vec<AbstractConfig> {
    let mut out = Vec::new();
    let deps = DepGraph::of_kvs(&cfg.kvs);
    for cl in (1..=b.clients).map(ClientId) {
        let cur = cfg.view(cl);
        let above = views_above(&cfg.kvs, &cur, b.keys);
        for u in &above {
            if *u != cur && super::wellformed(&cfg.kvs, u) {
                let mut next = cfg.clone();
                next.xview(cl, u).expect("enumerated view extension is legal");
                out.push(next);
            }
        }
        let sn = cfg.kvs.max_sn.get(&cl).map_or(0, |m| m + 1);
        if sn >= b.txns_per_client {
            continue;
        }
        let t = TxnId::new(cl, sn);
        for u in above.iter().filter(|u| super::wellformed(&cfg.kvs, u)) {
            for f in fingerprints(&cfg.kvs, u, t, b) {
                let mut grown = cfg.kvs.clone();
                for (k, v) in f.writes() {
                    grown.append(k, v, t);
                }
                for u_new in views_above(&grown, u, b.keys) {
                    let mut next = cfg.clone();
                    let c = Commit {
                        cl,
                        sn,
                        u,
                        u_new: &u_new,
                        f: &f,
                        deps: &deps,
                    };
                    if next.commit(&c).is_ok() {
                        out.push(next);
                    }
                }
            }
        }
    }
    out
}

/// All configurations reachable from the initial one by commit and view
/// extension steps within `b`.
pub fn enumerate_reach(b: &Bounds) -> Result<HashSet<AbstractConfig>, ReachError> {
    let init = AbstractConfig::new();
    let mut seen = HashSet::from([init.clone()]);
    let mut queue = VecDeque::from([init]);
    while let Some(cfg) = queue.pop_front() {
        for next in successors(&cfg, b) {
            if seen.contains(&next) {
                continue;
            }
            if seen.len() >= b.cap {
                return Err(ReachError::CapExceeded {
                    cap: b.cap,
                    visited: seen.len(),
                });
            }
            seen.insert(next.clone());
            queue.push_back(next);
        }
    }
    Ok(seen)
}
