//! Offline history checking. Histories are mapped to the abstract model: the
//! store is rebuilt by sorting write commits by commit timestamp, views are
//! reconstructed from read timestamps, and every commit is replayed against
//! the model's commit guards.

mod minimize;
mod tccv;

pub use minimize::minimize_witness;
pub use tccv::{check_tccv, check_tccv_reference, replay_order, ReplayStep};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::HistoryError;
use crate::history::{History, HistoryEvent};
use crate::model::{AbstractKvs, View};
use crate::types::{ClientId, CommitTs, Key, LamportTs, TxnId, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Check {
    Tccv,
    Convergence,
    Sessions,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Tccv => "tccv",
            Check::Convergence => "convergence",
            Check::Sessions => "sessions",
        }
    }
}

/// A client observed two versions of a key against the commit order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub cl: ClientId,
    pub key: Key,
    /// Earlier read, later read.
    pub versions: [TxnId; 2],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub check: Check,
    pub guard: String,
    pub txn: Option<TxnId>,
    pub detail: String,
    /// Sequence numbers of the events involved.
    pub events: Vec<u64>,
    pub divergence: Option<Divergence>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation [{}]", self.check.name(), self.guard)?;
        if let Some(t) = self.txn {
            write!(f, " at {t}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(Box<Violation>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            Verdict::Pass => None,
            Verdict::Fail(v) => Some(v),
        }
    }

    fn fail(v: Violation) -> Self {
        Verdict::Fail(Box::new(v))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct TxnRec {
    pub id: TxnId,
    /// Index into `History::records`.
    pub rec: usize,
    pub write: Option<CommitTs>,
    pub rts: LamportTs,
}

/// History variables and dependency relations derived from a history.
#[derive(Clone, Debug, Default)]
pub struct DerivedRelations {
    pub wtxn_cts: HashMap<TxnId, CommitTs>,
    pub rtxn_rts: HashMap<TxnId, LamportTs>,
    /// Writers of each key in commit-timestamp order, `T0` first. Keys that
    /// were never written are absent and stand for `[T0]`.
    pub cts_order: BTreeMap<Key, Vec<TxnId>>,
    /// Session order as successor pairs.
    pub so: Vec<(TxnId, TxnId)>,
    /// `(writer, reader)` pairs.
    pub wr: Vec<(TxnId, TxnId)>,
    pub(crate) txns: Vec<TxnRec>,
    pub(crate) index: HashMap<TxnId, u32>,
    /// Commit timestamps parallel to `cts_order`.
    pub(crate) order_cts: BTreeMap<Key, Vec<CommitTs>>,
    /// Dense predecessor lists (session predecessor, then writers read).
    pub(crate) pred_start: Vec<u32>,
    pub(crate) pred_list: Vec<u32>,
}

impl DerivedRelations {
    pub fn cts_of(&self, t: TxnId) -> Option<CommitTs> {
        if t.is_init() {
            Some(CommitTs::INIT)
        } else {
            self.wtxn_cts.get(&t).copied()
        }
    }

    pub fn order(&self, k: Key) -> &[TxnId] {
        const INIT: [TxnId; 1] = [TxnId::INIT];
        self.cts_order.get(&k).map_or(&INIT[..], |v| v.as_slice())
    }

    pub(crate) fn preds(&self, i: u32) -> &[u32] {
        let (a, b) = (self.pred_start[i as usize], self.pred_start[i as usize + 1]);
        &self.pred_list[a as usize..b as usize]
    }

    /// Position of `t`'s version in `cts_order[k]`.
    pub fn position(&self, k: Key, t: TxnId) -> Option<usize> {
        let cts = self.cts_of(t)?;
        match self.order_cts.get(&k) {
            None => t.is_init().then_some(0),
            Some(v) => v.binary_search(&cts).ok(),
        }
    }
}

fn writes_of(h: &History, rec: usize) -> &BTreeMap<Key, Value> {
    match &h.records[rec].event {
        HistoryEvent::WriteCommit { writes, .. } => writes,
        _ => unreachable!("not a write commit"),
    }
}

/// Build the history variables and dependency relations, rejecting
/// histories that no execution of the protocol could produce.
pub fn ingest(h: &History) -> Result<DerivedRelations, HistoryError> {
    let mut rel = DerivedRelations::default();
    let mut last: HashMap<ClientId, (u32, TxnId)> = HashMap::new();
    let mut pending_gst: HashMap<ClientId, LamportTs> = HashMap::new();
    let mut by_cts: HashMap<CommitTs, TxnId> = HashMap::new();
    let mut prev_seq: Option<u64> = None;
    let mut so_prev: Vec<u32> = Vec::new();

    for (rec, r) in h.records.iter().enumerate() {
        if prev_seq.is_some_and(|p| r.seq <= p) {
            return Err(HistoryError::Malformed(format!("sequence number {} not increasing", r.seq)));
        }
        prev_seq = Some(r.seq);
        let (id, write, rts) = match &r.event {
            HistoryEvent::ViewExtend { cl, gst } => {
                pending_gst.insert(*cl, *gst);
                continue;
            }
            HistoryEvent::ReadCommit { txn, rts, reads } => {
                if reads.is_empty() {
                    return Err(HistoryError::Malformed(format!("{txn} reads nothing")));
                }
                if let Some(g) = pending_gst.remove(&txn.cl) {
                    if g != *rts {
                        return Err(HistoryError::Malformed(format!(
                            "{txn} has rts {rts} but its view extension set gst {g}"
                        )));
                    }
                }
                (*txn, None, *rts)
            }
            HistoryEvent::WriteCommit { txn, cts, writes } => {
                if writes.is_empty() {
                    return Err(HistoryError::Malformed(format!("{txn} writes nothing")));
                }
                if cts.cl != txn.cl || cts.clock == LamportTs::ZERO {
                    return Err(HistoryError::Malformed(format!("{txn} has commit timestamp {cts}")));
                }
                if rel.index.contains_key(txn) {
                    return Err(HistoryError::DuplicateTxn(*txn));
                }
                if pending_gst.contains_key(&txn.cl) {
                    return Err(HistoryError::Malformed(format!("{txn} commits during a read")));
                }
                if let Some(&other) = by_cts.get(cts) {
                    return Err(HistoryError::DuplicateCommitTs { a: other, b: *txn });
                }
                by_cts.insert(*cts, *txn);
                (*txn, Some(*cts), LamportTs::ZERO)
            }
        };
        if id.cl.is_init() {
            return Err(HistoryError::Malformed(format!("{id} uses the reserved client id")));
        }
        if rel.index.contains_key(&id) {
            return Err(HistoryError::DuplicateTxn(id));
        }
        let me = rel.txns.len() as u32;
        match last.get(&id.cl) {
            Some(&(prev, _)) if id.sn <= prev => {
                return Err(HistoryError::NonMonotoneSn {
                    client: id.cl,
                    prev,
                    sn: id.sn,
                })
            }
            Some(&(_, prev_t)) => {
                rel.so.push((prev_t, id));
                so_prev.push(rel.index[&prev_t]);
            }
            None => so_prev.push(u32::MAX),
        }
        last.insert(id.cl, (id.sn, id));
        rel.index.insert(id, me);
        rel.txns.push(TxnRec { id, rec, write, rts });
        match write {
            Some(cts) => {
                rel.wtxn_cts.insert(id, cts);
                for &k in writes_of(h, rec).keys() {
                    let order = rel.cts_order.entry(k).or_insert_with(|| vec![TxnId::INIT]);
                    let clocks = rel.order_cts.entry(k).or_insert_with(|| vec![CommitTs::INIT]);
                    let pos = clocks.partition_point(|c| *c < cts);
                    clocks.insert(pos, cts);
                    order.insert(pos, id);
                }
            }
            None => {
                rel.rtxn_rts.insert(id, rts);
            }
        }
    }

    // Reads may only return versions their writer actually wrote.
    rel.pred_start.push(0);
    for (i, t) in rel.txns.iter().enumerate() {
        if so_prev[i] != u32::MAX {
            rel.pred_list.push(so_prev[i]);
        }
        if let HistoryEvent::ReadCommit { reads, .. } = &h.records[t.rec].event {
            for (&k, &(v, w)) in reads {
                if w.is_init() {
                    if v != Value::INIT {
                        return Err(HistoryError::Malformed(format!("{} read {v} from T0 at {k}", t.id)));
                    }
                    continue;
                }
                let ok = rel.index.get(&w).and_then(|&wi| {
                    let wrec = &rel.txns[wi as usize];
                    wrec.write.and_then(|_| writes_of(h, wrec.rec).get(&k)).map(|&wv| (wi, wv))
                });
                match ok {
                    Some((wi, wv)) if wv == v => {
                        rel.wr.push((w, t.id));
                        if !rel.pred_list[rel.pred_start[i] as usize..].contains(&wi) {
                            rel.pred_list.push(wi);
                        }
                    }
                    _ => {
                        return Err(HistoryError::Malformed(format!(
                            "{} read {v} at {k} from {w}, which did not write it",
                            t.id
                        )))
                    }
                }
            }
        }
        rel.pred_start.push(rel.pred_list.len() as u32);
    }
    Ok(rel)
}

/// The abstract store the history maps to: each key's versions in commit
/// timestamp order with the reader sets taken from the read commits.
pub fn abstract_kvs_of(rel: &DerivedRelations, h: &History) -> AbstractKvs {
    let mut kvs = AbstractKvs::new();
    for (&k, order) in &rel.cts_order {
        for &t in &order[1..] {
            let rec = rel.txns[rel.index[&t] as usize].rec;
            kvs.append(k, writes_of(h, rec)[&k], t);
        }
    }
    for t in &rel.txns {
        if let HistoryEvent::ReadCommit { reads, .. } = &h.records[t.rec].event {
            for (&k, &(_, w)) in reads {
                let i = rel.position(k, w).expect("ingest validated the writer");
                kvs.add_reader(k, i, t.id);
            }
        }
    }
    kvs
}

/// View of `cl` at global safe time `gst`: versions committed at or below
/// `gst`, plus the client's own writes (only those with a sequence number
/// below `before_sn`, if given), plus the initial versions.
pub fn views_of(rel: &DerivedRelations, cl: ClientId, gst: LamportTs, before_sn: Option<u32>) -> View {
    let mut u = View::init();
    for (&k, order) in &rel.cts_order {
        let clocks = &rel.order_cts[&k];
        for (i, (&t, cts)) in order.iter().zip(clocks).enumerate().skip(1) {
            let own = t.cl == cl && before_sn.is_none_or(|s| t.sn < s);
            if cts.clock <= gst || own {
                u.insert(k, i);
            }
        }
    }
    u
}

/// Commit-order position of every version read, per client and key, in
/// session order; reports the first read that goes backwards.
pub fn check_convergence(h: &History) -> Result<Verdict, HistoryError> {
    Ok(convergence_with(&ingest(h)?, h))
}

fn convergence_with(rel: &DerivedRelations, h: &History) -> Verdict {
    let mut last: HashMap<(ClientId, Key), (CommitTs, TxnId, u64)> = HashMap::new();
    for r in &h.records {
        let HistoryEvent::ReadCommit { txn, reads, .. } = &r.event else {
            continue;
        };
        for (&k, &(_, w)) in reads {
            let cts = rel.cts_of(w).expect("validated by ingest");
            if let Some(&(prev, pw, pseq)) = last.get(&(txn.cl, k)) {
                if cts < prev {
                    return Verdict::fail(Violation {
                        check: Check::Convergence,
                        guard: "convergent-order".into(),
                        txn: Some(*txn),
                        detail: format!(
                            "{} read {k} from {pw} and then from {w}, but {w} precedes {pw} in commit order",
                            txn.cl
                        ),
                        events: vec![pseq, r.seq],
                        divergence: Some(Divergence {
                            cl: txn.cl,
                            key: k,
                            versions: [pw, w],
                        }),
                    });
                }
            }
            last.insert((txn.cl, k), (cts, w, r.seq));
        }
    }
    Verdict::Pass
}

/// Read-your-writes against the latest own prior write of each key, and
/// monotonic reads per client and key.
pub fn check_sessions(h: &History) -> Result<Verdict, HistoryError> {
    Ok(sessions_with(&ingest(h)?, h))
}

fn sessions_with(rel: &DerivedRelations, h: &History) -> Verdict {
    let mut own: HashMap<(ClientId, Key), (CommitTs, TxnId, u64)> = HashMap::new();
    let mut seen: HashMap<(ClientId, Key), (CommitTs, TxnId, u64)> = HashMap::new();
    for r in &h.records {
        match &r.event {
            HistoryEvent::WriteCommit { txn, cts, writes } => {
                for &k in writes.keys() {
                    own.insert((txn.cl, k), (*cts, *txn, r.seq));
                }
            }
            HistoryEvent::ReadCommit { txn, reads, .. } => {
                for (&k, &(_, w)) in reads {
                    let cts = rel.cts_of(w).expect("validated by ingest");
                    let fail = |guard: &str, prev: (CommitTs, TxnId, u64), what: &str| {
                        Verdict::fail(Violation {
                            check: Check::Sessions,
                            guard: guard.into(),
                            txn: Some(*txn),
                            detail: format!("{txn} read {k} from {w}, older than {what} {}", prev.1),
                            events: vec![prev.2, r.seq],
                            divergence: None,
                        })
                    };
                    if let Some(&p) = own.get(&(txn.cl, k)) {
                        if cts < p.0 {
                            return fail("read-your-writes", p, "own write");
                        }
                    }
                    if let Some(&p) = seen.get(&(txn.cl, k)) {
                        if cts < p.0 {
                            return fail("monotonic-reads", p, "earlier read of");
                        }
                    }
                    seen.insert((txn.cl, k), (cts, w, r.seq));
                }
            }
            HistoryEvent::ViewExtend { .. } => {}
        }
    }
    Verdict::Pass
}

/// All three checks; the first failing verdict wins.
pub fn check_all(h: &History) -> Result<Verdict, HistoryError> {
    let rel = ingest(h)?;
    for check in [tccv::tccv_with, convergence_with, sessions_with] {
        let v = check(&rel, h);
        if !v.is_pass() {
            return Ok(v);
        }
    }
    Ok(Verdict::Pass)
}

/// Verdicts of the three checks, in the order tccv, convergence, sessions.
pub fn check_each(h: &History) -> Result<[Verdict; 3], HistoryError> {
    let rel = ingest(h)?;
    Ok([tccv::tccv_with(&rel, h), convergence_with(&rel, h), sessions_with(&rel, h)])
}
