//! Executable centralized transaction model: a multi-versioned store, per
//! client views, and the commit and view-extension rules for transactional
//! causal consistency with convergence.

mod reach;

pub use reach::{enumerate_reach, Bounds, ReachError, ValueDomain};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::types::{ClientId, Key, TxnId, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractVersion {
    pub val: Value,
    pub writer: TxnId,
    pub readers: BTreeSet<TxnId>,
}

static INIT_ONLY: [AbstractVersion; 1] = [AbstractVersion {
    val: Value::INIT,
    writer: TxnId::INIT,
    readers: BTreeSet::new(),
}];

/// Version lists per key. A key that was never touched holds only its
/// initial version and is not stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractKvs {
    keys: BTreeMap<Key, Vec<AbstractVersion>>,
    written: BTreeMap<TxnId, Vec<(Key, usize)>>,
    read_txns: BTreeSet<TxnId>,
    max_sn: BTreeMap<ClientId, u32>,
}

impl AbstractKvs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn versions(&self, k: Key) -> &[AbstractVersion] {
        self.keys.get(&k).map_or(&INIT_ONLY[..], |v| v.as_slice())
    }

    pub fn len(&self, k: Key) -> usize {
        self.versions(k).len()
    }

    /// Keys with more than the initial, unread version.
    pub fn touched_keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.keys.keys().copied()
    }

    /// Versions written by `t` as `(key, index)` pairs.
    pub fn written_by(&self, t: TxnId) -> &[(Key, usize)] {
        self.written.get(&t).map_or(&[], |v| v.as_slice())
    }

    pub fn is_writer(&self, t: TxnId) -> bool {
        t.is_init() || self.written.contains_key(&t)
    }

    /// `t` appears in some reader set and wrote nothing.
    pub fn is_rdonly(&self, t: TxnId) -> bool {
        self.read_txns.contains(&t) && !self.is_writer(t)
    }

    /// Transaction ids occurring anywhere in the store.
    pub fn txids(&self) -> BTreeSet<TxnId> {
        let mut s: BTreeSet<TxnId> = self.written.keys().copied().collect();
        s.extend(self.read_txns.iter().copied());
        s.insert(TxnId::INIT);
        s
    }

    /// `t` is a legal next id for its client: its sequence number exceeds
    /// every one the client used so far.
    pub fn is_next_txid(&self, t: TxnId) -> bool {
        !t.cl.is_init() && self.max_sn.get(&t.cl).is_none_or(|&m| t.sn > m)
    }

    fn entry(&mut self, k: Key) -> &mut Vec<AbstractVersion> {
        self.keys.entry(k).or_insert_with(|| INIT_ONLY.to_vec())
    }

    /// Append a version of `k` written by `t`; returns its index.
    pub fn append(&mut self, k: Key, val: Value, t: TxnId) -> usize {
        let list = self.entry(k);
        list.push(AbstractVersion {
            val,
            writer: t,
            readers: BTreeSet::new(),
        });
        let i = list.len() - 1;
        self.written.entry(t).or_default().push((k, i));
        self.note_sn(t);
        i
    }

    pub fn add_reader(&mut self, k: Key, i: usize, t: TxnId) {
        self.entry(k)[i].readers.insert(t);
        self.read_txns.insert(t);
        self.note_sn(t);
    }

    fn note_sn(&mut self, t: TxnId) {
        let m = self.max_sn.entry(t.cl).or_insert(t.sn);
        *m = (*m).max(t.sn);
    }

    /// Write-read pairs `(writer, reader)` recorded in the reader sets.
    pub fn wr_pairs(&self) -> Vec<(TxnId, TxnId)> {
        let mut out = Vec::new();
        for list in self.keys.values() {
            for v in list {
                out.extend(v.readers.iter().map(|&r| (v.writer, r)));
            }
        }
        out
    }
}

/// Per key, the set of visible version indices. An absent key sees only its
/// initial version.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct View(BTreeMap<Key, BTreeSet<usize>>);

impl View {
    /// Every key at its initial version.
    pub fn init() -> Self {
        View(BTreeMap::new())
    }

    pub fn contains(&self, k: Key, i: usize) -> bool {
        match self.0.get(&k) {
            Some(s) => s.contains(&i),
            None => i == 0,
        }
    }

    pub fn indices(&self, k: Key) -> Vec<usize> {
        match self.0.get(&k) {
            Some(s) => s.iter().copied().collect(),
            None => vec![0],
        }
    }

    /// Largest visible index of `k`, if any.
    pub fn latest(&self, k: Key) -> Option<usize> {
        match self.0.get(&k) {
            Some(s) => s.last().copied(),
            None => Some(0),
        }
    }

    pub fn insert(&mut self, k: Key, i: usize) {
        self.0.entry(k).or_insert_with(|| BTreeSet::from([0])).insert(i);
        self.normalize(k);
    }

    /// Replace the index set of `k`.
    pub fn set(&mut self, k: Key, s: BTreeSet<usize>) {
        self.0.insert(k, s);
        self.normalize(k);
    }

    fn normalize(&mut self, k: Key) {
        if self.0.get(&k).is_some_and(|s| s.len() == 1 && s.contains(&0)) {
            self.0.remove(&k);
        }
    }

    /// Keys stored explicitly (everything else is at `{0}`).
    pub fn explicit_keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.0.keys().copied()
    }

    /// Pointwise inclusion.
    pub fn le(&self, other: &View) -> bool {
        self.0.iter().all(|(&k, s)| s.iter().all(|&i| other.contains(k, i)))
            && other.0.keys().all(|&k| self.0.contains_key(&k) || other.contains(k, 0))
    }

    /// Indices visible in `self` but not in `other`, as a witness of `!le`.
    fn first_missing(&self, other: &View) -> Option<(Key, usize)> {
        for (&k, s) in &self.0 {
            if let Some(&i) = s.iter().find(|&&i| !other.contains(k, i)) {
                return Some((k, i));
            }
        }
        other
            .0
            .keys()
            .find(|&&k| !self.0.contains_key(&k) && !other.contains(k, 0))
            .map(|&k| (k, 0))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (Key, usize)> + '_ {
        self.0.iter().flat_map(|(&k, s)| s.iter().map(move |&i| (k, i)))
    }
}

/// Writers of the versions `u` points to. The initial transaction is always
/// visible.
pub fn vis_tx(kvs: &AbstractKvs, u: &View) -> BTreeSet<TxnId> {
    let mut s = BTreeSet::from([TxnId::INIT]);
    for (k, i) in u.pairs() {
        if let Some(v) = kvs.versions(k).get(i) {
            s.insert(v.writer);
        }
    }
    s
}

/// Why `u` is not wellformed for `kvs`, or `None` if it is.
pub fn wf_violation(kvs: &AbstractKvs, u: &View) -> Option<String> {
    for &k in u.0.keys() {
        let idx = &u.0[&k];
        if !idx.contains(&0) {
            return Some(format!("{k}: initial version not visible"));
        }
        let n = kvs.len(k);
        if let Some(&i) = idx.iter().find(|&&i| i >= n) {
            return Some(format!("{k}: index {i} out of range ({n} versions)"));
        }
    }
    for (k, i) in u.pairs() {
        let w = kvs.versions(k)[i].writer;
        if w.is_init() {
            continue;
        }
        if let Some(&(k2, i2)) = kvs.written_by(w).iter().find(|&&(k2, i2)| !u.contains(k2, i2)) {
            return Some(format!("{w} visible at {k}[{i}] but not at {k2}[{i2}]"));
        }
    }
    None
}

pub fn wellformed(kvs: &AbstractKvs, u: &View) -> bool {
    wf_violation(kvs, u).is_none()
}

/// Dependency graph stored as predecessor lists.
#[derive(Clone, Debug, Default)]
pub struct DepGraph {
    preds: BTreeMap<TxnId, Vec<TxnId>>,
}

impl DepGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_relations(so: &[(TxnId, TxnId)], wr: &[(TxnId, TxnId)]) -> Self {
        let mut g = DepGraph::new();
        for &(a, b) in so.iter().chain(wr) {
            g.add_edge(a, b);
        }
        g
    }

    pub fn add_edge(&mut self, from: TxnId, to: TxnId) {
        self.preds.entry(to).or_default().push(from);
    }

    /// Session order (successor pairs) and write-read edges implied by the
    /// transaction ids and reader sets stored in `kvs`.
    pub fn of_kvs(kvs: &AbstractKvs) -> Self {
        let mut g = DepGraph::new();
        let ids: Vec<TxnId> = kvs.txids().into_iter().filter(|t| !t.is_init()).collect();
        for w in ids.windows(2) {
            if w[0].cl == w[1].cl {
                g.add_edge(w[0], w[1]);
            }
        }
        for (a, b) in kvs.wr_pairs() {
            g.add_edge(a, b);
        }
        g
    }

    pub fn preds(&self, t: TxnId) -> &[TxnId] {
        self.preds.get(&t).map_or(&[], |v| v.as_slice())
    }
}

/// First transitive predecessor of a visible transaction that is neither
/// visible nor read-only, together with the visible transaction it was
/// reached from.
pub fn closure_violation(kvs: &AbstractKvs, u: &View, deps: &DepGraph) -> Option<(TxnId, TxnId)> {
    let vis = vis_tx(kvs, u);
    let mut seen: BTreeSet<TxnId> = BTreeSet::new();
    let mut queue: VecDeque<(TxnId, TxnId)> = vis.iter().map(|&t| (t, t)).collect();
    while let Some((t, origin)) = queue.pop_front() {
        for &p in deps.preds(t) {
            if !seen.insert(p) {
                continue;
            }
            if !vis.contains(&p) && !kvs.is_rdonly(p) {
                return Some((p, origin));
            }
            queue.push_back((p, origin));
        }
    }
    None
}

/// The visible transactions are closed under the inverse of the causal
/// dependency relation, modulo read-only transactions.
pub fn closed(kvs: &AbstractKvs, u: &View, so: &[(TxnId, TxnId)], wr: &[(TxnId, TxnId)]) -> bool {
    closure_violation(kvs, u, &DepGraph::from_relations(so, wr)).is_none()
}

pub fn can_commit_tccv(kvs: &AbstractKvs, u: &View, _f: &Fingerprint, deps: &DepGraph) -> bool {
    closure_violation(kvs, u, deps).is_none()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    R,
    W,
}

/// At most one read and one write value per key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub BTreeMap<(Key, Op), Value>);

impl Fingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(mut self, k: Key, v: Value) -> Self {
        self.0.insert((k, Op::R), v);
        self
    }

    pub fn write(mut self, k: Key, v: Value) -> Self {
        self.0.insert((k, Op::W), v);
        self
    }

    pub fn reads(&self) -> impl Iterator<Item = (Key, Value)> + '_ {
        self.0.iter().filter(|((_, o), _)| *o == Op::R).map(|(&(k, _), &v)| (k, v))
    }

    pub fn writes(&self) -> impl Iterator<Item = (Key, Value)> + '_ {
        self.0.iter().filter(|((_, o), _)| *o == Op::W).map(|(&(k, _), &v)| (k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The read values of `f` are those of the latest version in `u`.
pub fn lww_read_ok(kvs: &AbstractKvs, u: &View, f: &Fingerprint) -> bool {
    lww_violation(kvs, u, f).is_none()
}

fn lww_violation(kvs: &AbstractKvs, u: &View, f: &Fingerprint) -> Option<String> {
    for (k, v) in f.reads() {
        let Some(i) = u.latest(k) else {
            return Some(format!("{k}: empty view"));
        };
        let Some(latest) = kvs.versions(k).get(i) else {
            return Some(format!("{k}: index {i} out of range"));
        };
        if latest.val != v {
            return Some(format!(
                "{k}: read {v} but latest visible is {} by {} at index {i}",
                latest.val, latest.writer
            ));
        }
    }
    None
}

/// Commit rule premises, in the order [`commit_step`] evaluates them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Guard {
    FreshId,
    ViewMonotonic,
    WellFormed,
    CanCommit,
    Lww,
    ViewExtends,
    WellFormedAfter,
    ReadYourWrites,
}

impl Guard {
    pub const ALL: [Guard; 8] = [
        Guard::FreshId,
        Guard::ViewMonotonic,
        Guard::WellFormed,
        Guard::CanCommit,
        Guard::Lww,
        Guard::ViewExtends,
        Guard::WellFormedAfter,
        Guard::ReadYourWrites,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Guard::FreshId => "fresh-id",
            Guard::ViewMonotonic => "view-monotonic",
            Guard::WellFormed => "wellformed",
            Guard::CanCommit => "can-commit",
            Guard::Lww => "lww",
            Guard::ViewExtends => "view-extends",
            Guard::WellFormedAfter => "wellformed-after",
            Guard::ReadYourWrites => "read-your-writes",
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub guard: Guard,
    pub witness: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.guard, self.witness)
    }
}

/// Store plus one view per client (absent clients see the initial view).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractConfig {
    pub kvs: AbstractKvs,
    views: BTreeMap<ClientId, View>,
}

/// Everything [`AbstractConfig::revert`] needs to undo an update.
struct Undo {
    appended: Vec<Key>,
    read: Vec<(Key, usize)>,
    prev_sn: Option<u32>,
    was_reader: bool,
}

pub struct Commit<'a> {
    pub cl: ClientId,
    pub sn: u32,
    pub u: &'a View,
    pub u_new: &'a View,
    pub f: &'a Fingerprint,
    pub deps: &'a DepGraph,
}

impl AbstractConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn view(&self, cl: ClientId) -> View {
        self.views.get(&cl).cloned().unwrap_or_default()
    }

    fn set_view(&mut self, cl: ClientId, u: View) {
        if u == View::init() {
            self.views.remove(&cl);
        } else {
            self.views.insert(cl, u);
        }
    }

    fn update_kv(&mut self, t: TxnId, u: &View, f: &Fingerprint) -> Undo {
        let undo = Undo {
            appended: f.writes().map(|(k, _)| k).collect(),
            read: f.reads().map(|(k, _)| (k, u.latest(k).unwrap_or(0))).collect(),
            prev_sn: self.kvs.max_sn.get(&t.cl).copied(),
            was_reader: self.kvs.read_txns.contains(&t),
        };
        for &(k, i) in &undo.read {
            self.kvs.add_reader(k, i, t);
        }
        for (k, v) in f.writes() {
            self.kvs.append(k, v, t);
        }
        undo
    }

    fn revert(&mut self, t: TxnId, undo: Undo) {
        for &k in &undo.appended {
            self.kvs.keys.get_mut(&k).expect("appended").pop();
        }
        if !undo.appended.is_empty() {
            self.kvs.written.remove(&t);
        }
        for &(k, i) in &undo.read {
            self.kvs.keys.get_mut(&k).expect("read")[i].readers.remove(&t);
        }
        if !undo.was_reader {
            self.kvs.read_txns.remove(&t);
        }
        match undo.prev_sn {
            Some(m) => {
                self.kvs.max_sn.insert(t.cl, m);
            }
            None => {
                self.kvs.max_sn.remove(&t.cl);
            }
        }
        let keys: Vec<Key> = undo.appended.iter().chain(undo.read.iter().map(|(k, _)| k)).copied().collect();
        for k in keys {
            if self.kvs.keys.get(&k).is_some_and(|l| l[..] == INIT_ONLY[..]) {
                self.kvs.keys.remove(&k);
            }
        }
    }

    fn check_pre(&self, g: Guard, c: &Commit<'_>) -> Result<(), Rejection> {
        let t = TxnId::new(c.cl, c.sn);
        let reject = |witness: String| Err(Rejection { guard: g, witness });
        match g {
            Guard::FreshId if !self.kvs.is_next_txid(t) => reject(format!(
                "{t} not above last sequence number {:?} of {}",
                self.kvs.max_sn.get(&c.cl),
                c.cl
            )),
            Guard::ViewMonotonic => match self.view(c.cl).first_missing(c.u) {
                Some((k, i)) => reject(format!("client view has {k}[{i}], commit view does not")),
                None => Ok(()),
            },
            Guard::WellFormed => match wf_violation(&self.kvs, c.u) {
                Some(w) => reject(w),
                None => Ok(()),
            },
            Guard::CanCommit => match closure_violation(&self.kvs, c.u, c.deps) {
                Some((p, origin)) => reject(format!("{origin} is visible but its dependency {p} is not")),
                None => Ok(()),
            },
            Guard::Lww => match lww_violation(&self.kvs, c.u, c.f) {
                Some(w) => reject(w),
                None => Ok(()),
            },
            Guard::ViewExtends => match c.u.first_missing(c.u_new) {
                Some((k, i)) => reject(format!("{k}[{i}] dropped from the new view")),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Premises over the updated store.
    fn check_post(&self, g: Guard, c: &Commit<'_>) -> Result<(), Rejection> {
        let reject = |witness: String| Err(Rejection { guard: g, witness });
        match g {
            Guard::WellFormedAfter => match wf_violation(&self.kvs, c.u_new) {
                Some(w) => reject(w),
                None => Ok(()),
            },
            Guard::ReadYourWrites => {
                for (&t, vs) in self.kvs.written.range(TxnId::new(c.cl, 0)..=TxnId::new(c.cl, u32::MAX)) {
                    if let Some(&(k, i)) = vs.iter().find(|&&(k, i)| !c.u_new.contains(k, i)) {
                        return reject(format!("own write {t} at {k}[{i}] not in the new view"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Apply the commit rule in place, evaluating guards in `order`. On
    /// rejection the configuration is unchanged.
    pub fn commit_in_order(&mut self, c: &Commit<'_>, order: &[Guard]) -> Result<(), Rejection> {
        let post = |g: &Guard| matches!(g, Guard::WellFormedAfter | Guard::ReadYourWrites);
        for g in order.iter().filter(|g| !post(g)) {
            self.check_pre(*g, c)?;
        }
        let t = TxnId::new(c.cl, c.sn);
        let undo = self.update_kv(t, c.u, c.f);
        for g in order.iter().filter(|g| post(g)) {
            if let Err(r) = self.check_post(*g, c) {
                self.revert(t, undo);
                return Err(r);
            }
        }
        self.set_view(c.cl, c.u_new.clone());
        Ok(())
    }

    pub fn commit(&mut self, c: &Commit<'_>) -> Result<(), Rejection> {
        self.commit_in_order(c, &Guard::ALL)
    }

    /// Every guard that fails, evaluated in isolation.
    pub fn failing_guards(&self, c: &Commit<'_>) -> Vec<Guard> {
        let mut out: Vec<Guard> = Guard::ALL
            .into_iter()
            .filter(|&g| self.check_pre(g, c).is_err())
            .collect();
        let mut after = self.clone();
        after.update_kv(TxnId::new(c.cl, c.sn), c.u, c.f);
        out.extend(
            [Guard::WellFormedAfter, Guard::ReadYourWrites]
                .into_iter()
                .filter(|&g| after.check_post(g, c).is_err()),
        );
        out
    }

    /// View extension rule.
    pub fn xview(&mut self, cl: ClientId, u: &View) -> Result<(), Rejection> {
        if let Some((k, i)) = self.view(cl).first_missing(u) {
            return Err(Rejection {
                guard: Guard::ViewMonotonic,
                witness: format!("{k}[{i}] dropped"),
            });
        }
        if let Some(w) = wf_violation(&self.kvs, u) {
            return Err(Rejection {
                guard: Guard::WellFormed,
                witness: w,
            });
        }
        self.set_view(cl, u.clone());
        Ok(())
    }
}

/// Pure form of the commit rule.
#[allow(clippy::too_many_arguments)]
pub fn commit_step(
    cfg: &AbstractConfig,
    cl: ClientId,
    sn: u32,
    u: &View,
    u_new: &View,
    f: &Fingerprint,
    so: &[(TxnId, TxnId)],
    wr: &[(TxnId, TxnId)],
) -> Result<AbstractConfig, Rejection> {
    let deps = DepGraph::from_relations(so, wr);
    let mut next = cfg.clone();
    next.commit(&Commit {
        cl,
        sn,
        u,
        u_new,
        f,
        deps: &deps,
    })?;
    Ok(next)
}

/// Pure form of the view extension rule.
pub fn xview_step(cfg: &AbstractConfig, cl: ClientId, u: &View) -> Result<AbstractConfig, Rejection> {
    let mut next = cfg.clone();
    next.xview(cl, u)?;
    Ok(next)
}

#[cfg(test)]
mod tests;
