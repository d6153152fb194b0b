//! Replay of a history against the TCCv commit guards.
//!
//! Write commits are replayed in commit-timestamp order. A read commit is
//! replayed right after the last write it can see (the last one whose clock
//! is at or below its read timestamp) and never before its own client's
//! previous commit.

use std::collections::HashMap;

use super::{ingest, views_of, writes_of, Check, DerivedRelations, Verdict, Violation};
use crate::error::HistoryError;
use crate::history::{History, HistoryEvent};
use crate::model::{AbstractConfig, Commit, DepGraph, Fingerprint, Guard};
use crate::types::{ClientId, CommitTs, Key, LamportTs, TxnId, Value};

/// One replayed commit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplayStep {
    pub txn: TxnId,
    /// Number of write commits replayed before this step.
    pub after_writes: usize,
}

struct Order {
    /// Dense transaction indices in replay order.
    steps: Vec<u32>,
    /// Write transactions sorted by commit timestamp.
    writes: Vec<u32>,
    clocks: Vec<LamportTs>,
}

fn dense_order(rel: &DerivedRelations) -> Order {
    let mut writes: Vec<u32> = (0..rel.txns.len() as u32)
        .filter(|&i| rel.txns[i as usize].write.is_some())
        .collect();
    writes.sort_by_key(|&i| rel.txns[i as usize].write);
    let clocks: Vec<LamportTs> = writes
        .iter()
        .map(|&i| rel.txns[i as usize].write.expect("write").clock)
        .collect();
    let mut pos = vec![0usize; rel.txns.len()];
    for (p, &i) in writes.iter().enumerate() {
        pos[i as usize] = p;
    }
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); writes.len() + 1];
    let mut prev: HashMap<ClientId, usize> = HashMap::new();
    for (i, t) in rel.txns.iter().enumerate() {
        let p = prev.get(&t.id.cl).copied().unwrap_or(0);
        let a = match t.write {
            Some(_) => p.max(pos[i] + 1),
            None => {
                let a = p.max(clocks.partition_point(|&c| c <= t.rts));
                buckets[a].push(i as u32);
                a
            }
        };
        prev.insert(t.id.cl, a);
    }
    let mut steps = Vec::with_capacity(rel.txns.len());
    for (j, b) in buckets.into_iter().enumerate() {
        steps.extend(b);
        if j < writes.len() {
            steps.push(writes[j]);
        }
    }
    Order { steps, writes, clocks }
}

/// The order in which commits are replayed.
pub fn replay_order(rel: &DerivedRelations) -> Vec<ReplayStep> {
    let o = dense_order(rel);
    let mut n = 0;
    o.steps
        .iter()
        .map(|&i| {
            let t = &rel.txns[i as usize];
            if t.write.is_some() {
                n += 1;
            }
            ReplayStep {
                txn: t.id,
                after_writes: if t.write.is_some() { n - 1 } else { n },
            }
        })
        .collect()
}

struct ClientReplay {
    /// Visibility frontier: every write with a clock at or below it is in
    /// the client's view.
    g: LamportTs,
    /// Sorted writes up to this position have been added to the closure.
    g_pos: usize,
    max_sn: Option<u32>,
    /// Transactions already known to be visible or read-only ancestors.
    checked: Vec<bool>,
    own_unchecked: Vec<u32>,
}

struct Replay<'a> {
    rel: &'a DerivedRelations,
    h: &'a History,
    o: Order,
    replayed: Vec<bool>,
    clients: HashMap<ClientId, ClientReplay>,
    own_max: HashMap<(ClientId, Key), CommitTs>,
}

impl<'a> Replay<'a> {
    fn seq(&self, i: u32) -> u64 {
        self.h.records[self.rel.txns[i as usize].rec].seq
    }

    fn violation(&self, guard: Guard, i: u32, others: &[u32], detail: String) -> Verdict {
        let mut events = vec![self.seq(i)];
        events.extend(others.iter().map(|&o| self.seq(o)));
        events.sort_unstable();
        events.dedup();
        Verdict::fail(Violation {
            check: Check::Tccv,
            guard: guard.name().into(),
            txn: Some(self.rel.txns[i as usize].id),
            detail,
            events,
            divergence: None,
        })
    }

    fn value_at(&self, k: Key, pos: usize) -> (TxnId, Value) {
        let w = self.rel.order(k)[pos];
        if w.is_init() {
            return (w, Value::INIT);
        }
        let rec = self.rel.txns[self.rel.index[&w] as usize].rec;
        (w, writes_of(self.h, rec)[&k])
    }

    /// Extend the client's closure with newly visible transactions; fails
    /// with `(missing, visible)` when a dependency is neither visible nor a
    /// replayed read.
    fn close(&mut self, cl: ClientId, sn: u32) -> Result<(), (u32, u32)> {
        let rel = self.rel;
        let n = rel.txns.len();
        let c = self.clients.get_mut(&cl).expect("client entry");
        if c.checked.is_empty() {
            c.checked = vec![false; n];
        }
        let upto = self.o.clocks.partition_point(|&x| x <= c.g);
        let mut stack: Vec<(u32, u32)> = Vec::new();
        for &w in &self.o.writes[c.g_pos.min(upto)..upto] {
            stack.push((w, w));
        }
        c.g_pos = c.g_pos.max(upto);
        stack.extend(c.own_unchecked.drain(..).map(|w| (w, w)));
        for &(v, _) in &stack {
            c.checked[v as usize] = true;
        }
        let g = c.g;
        while let Some((v, origin)) = stack.pop() {
            for &p in rel.preds(v) {
                if c.checked[p as usize] {
                    continue;
                }
                let t = &rel.txns[p as usize];
                let visible = match t.write {
                    Some(cts) => cts.clock <= g || (t.id.cl == cl && t.id.sn < sn),
                    None => self.replayed[p as usize],
                };
                if !visible {
                    return Err((p, origin));
                }
                c.checked[p as usize] = true;
                stack.push((p, origin));
            }
        }
        Ok(())
    }

    fn step(&mut self, i: u32) -> Result<(), Verdict> {
        let rel = self.rel;
        let t = &rel.txns[i as usize];
        let (cl, sn) = (t.id.cl, t.id.sn);
        let c = self.clients.entry(cl).or_insert_with(|| ClientReplay {
            g: LamportTs::ZERO,
            g_pos: 0,
            max_sn: None,
            checked: Vec::new(),
            own_unchecked: Vec::new(),
        });
        if let Some(m) = c.max_sn.filter(|&m| sn <= m) {
            return Err(self.violation(
                Guard::FreshId,
                i,
                &[],
                format!("{} replayed after a later transaction of {cl} (sn {m})", t.id),
            ));
        }
        if t.write.is_none() {
            let rts = t.rts;
            if rts < c.g {
                let lo = self.o.clocks.partition_point(|&x| x <= rts);
                let hi = self.o.clocks.partition_point(|&x| x <= c.g);
                if let Some(&w) = self.o.writes[lo..hi].iter().find(|&&w| rel.txns[w as usize].id.cl != cl) {
                    let g = c.g;
                    return Err(self.violation(
                        Guard::ViewMonotonic,
                        i,
                        &[w],
                        format!(
                            "gst {rts} hides {} (committed at {}), visible to {cl} since gst {g}",
                            rel.txns[w as usize].id,
                            rel.txns[w as usize].write.expect("write"),
                        ),
                    ));
                }
            }
            c.g = c.g.max(rts);
        }
        if let Err((p, origin)) = self.close(cl, sn) {
            return Err(self.violation(
                Guard::CanCommit,
                i,
                &[p, origin],
                format!(
                    "view sees {} but not its dependency {}",
                    rel.txns[origin as usize].id, rel.txns[p as usize].id
                ),
            ));
        }
        let c = &self.clients[&cl];
        let g = c.g;
        match &self.h.records[t.rec].event {
            HistoryEvent::ReadCommit { reads, .. } => {
                for (&k, &(v, w)) in reads {
                    let clocks = rel.order_cts.get(&k).map_or(&[CommitTs::INIT][..], |v| v.as_slice());
                    let le = clocks.partition_point(|c| c.clock <= g) - 1;
                    let mut latest = clocks[le];
                    if let Some(&own) = self.own_max.get(&(cl, k)) {
                        latest = latest.max(own);
                    }
                    let pos = clocks.binary_search(&latest).expect("replayed version");
                    let (lw, lv) = self.value_at(k, pos);
                    if lv != v {
                        let others: Vec<u32> = [w, lw]
                            .iter()
                            .filter_map(|x| rel.index.get(x).copied())
                            .collect();
                        return Err(self.violation(
                            Guard::Lww,
                            i,
                            &others,
                            format!("{k}: read {v} from {w} but the latest visible version is {lv} by {lw}"),
                        ));
                    }
                }
            }
            HistoryEvent::WriteCommit { writes, cts, .. } => {
                for &k in writes.keys() {
                    let e = self.own_max.entry((cl, k)).or_insert(*cts);
                    *e = (*e).max(*cts);
                }
                self.clients.get_mut(&cl).expect("client").own_unchecked.push(i);
            }
            HistoryEvent::ViewExtend { .. } => unreachable!("not a commit"),
        }
        self.clients.get_mut(&cl).expect("client").max_sn = Some(sn);
        self.replayed[i as usize] = true;
        Ok(())
    }
}

pub(crate) fn tccv_with(rel: &DerivedRelations, h: &History) -> Verdict {
    let mut r = Replay {
        rel,
        h,
        o: dense_order(rel),
        replayed: vec![false; rel.txns.len()],
        clients: HashMap::new(),
        own_max: HashMap::new(),
    };
    let steps = std::mem::take(&mut r.o.steps);
    for i in steps {
        if let Err(v) = r.step(i) {
            return v;
        }
    }
    Verdict::Pass
}

/// Replay every commit against the TCCv guards.
pub fn check_tccv(h: &History) -> Result<Verdict, HistoryError> {
    let rel = ingest(h)?;
    Ok(tccv_with(&rel, h))
}

/// Same replay as [`check_tccv`], but every step goes through the abstract
/// model's commit rule on an explicitly materialized store and views.
/// Quadratic; meant for small and medium histories.
pub fn check_tccv_reference(h: &History) -> Result<Verdict, HistoryError> {
    let rel = ingest(h)?;
    let deps = DepGraph::from_relations(&rel.so, &rel.wr);
    let mut cfg = AbstractConfig::new();
    for i in dense_order(&rel).steps {
        let t = &rel.txns[i as usize];
        let r = &h.records[t.rec];
        let (u, u_new, f) = match &r.event {
            HistoryEvent::WriteCommit { writes, .. } => {
                let u = cfg.view(t.id.cl);
                let mut u_new = u.clone();
                let mut f = Fingerprint::new();
                for (&k, &v) in writes {
                    u_new.insert(k, rel.position(k, t.id).expect("own version"));
                    f = f.write(k, v);
                }
                (u, u_new, f)
            }
            HistoryEvent::ReadCommit { rts, reads, .. } => {
                let u = views_of(&rel, t.id.cl, *rts, Some(t.id.sn));
                let f = reads.iter().fold(Fingerprint::new(), |f, (&k, &(v, _))| f.read(k, v));
                (u.clone(), u, f)
            }
            HistoryEvent::ViewExtend { .. } => unreachable!("not a commit"),
        };
        let step = Commit {
            cl: t.id.cl,
            sn: t.id.sn,
            u: &u,
            u_new: &u_new,
            f: &f,
            deps: &deps,
        };
        if let Err(rej) = cfg.commit(&step) {
            return Ok(Verdict::fail(Violation {
                check: Check::Tccv,
                guard: rej.guard.name().into(),
                txn: Some(t.id),
                detail: rej.witness,
                events: vec![r.seq],
                divergence: None,
            }));
        }
    }
    Ok(Verdict::Pass)
}
