//! Partition state machine: multi-versioned storage, non-blocking reads at a
//! client-supplied read timestamp, and the prepare/commit phases of write
//! transactions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::message::Message;
use crate::types::{clock_advance, ClientId, CommitTs, Key, LamportTs, ServerId, TxnId, Value};

/// How a server picks the version returned to a read when the reader has no
/// own write above its read timestamp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadRule {
    /// Newest committed version at or below the read timestamp.
    #[default]
    #[serde(rename = "eiger-port-plus")]
    EigerPortPlus,
    /// Backward scan for a version that has no write conflict or was written
    /// by another client.
    #[serde(rename = "eiger-port-read-rule")]
    EigerPort,
}

impl ReadRule {
    pub fn name(self) -> &'static str {
        match self {
            ReadRule::EigerPortPlus => "eiger-port-plus",
            ReadRule::EigerPort => "eiger-port-read-rule",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "eiger-port-plus" | "epp" => Some(ReadRule::EigerPortPlus),
            "eiger-port-read-rule" | "eiger-port" | "ep" => Some(ReadRule::EigerPort),
            _ => None,
        }
    }
}

/// Deliberate protocol bugs used to show that the checkers catch them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Client commits with the minimum instead of the maximum prepare time.
    CommitCtsMin,
    /// Reads never take the read-your-writes branch.
    SkipRyw,
    /// Client takes the maximum of its safe-time map as gst.
    GstMax,
    /// Commit sets lst to the clock even while other writes are pending.
    LstClockWhilePending,
    /// Reads return the newest committed version regardless of rts.
    ReadNewest,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::CommitCtsMin,
        Mutation::SkipRyw,
        Mutation::GstMax,
        Mutation::LstClockWhilePending,
        Mutation::ReadNewest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::CommitCtsMin => "commit-cts-min",
            Mutation::SkipRyw => "skip-ryw",
            Mutation::GstMax => "gst-max",
            Mutation::LstClockWhilePending => "lst-clock-while-pending",
            Mutation::ReadNewest => "read-newest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Readermap entry: `(lst, clock)` returned to the reader.
pub type ReaderInfo = (LamportTs, LamportTs);

/// Per-(key, transaction) version state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum VerState {
    NoVer,
    Reg,
    Prep {
        pend_t: LamportTs,
        prep_t: LamportTs,
        val: Value,
    },
    Commit {
        cts: CommitTs,
        lst_at_commit: LamportTs,
        clk_at_commit: LamportTs,
        val: Value,
        readermap: BTreeMap<TxnId, ReaderInfo>,
    },
}

impl VerState {
    pub fn name(&self) -> &'static str {
        match self {
            VerState::NoVer => "NoVer",
            VerState::Reg => "Reg",
            VerState::Prep { .. } => "Prep",
            VerState::Commit { .. } => "Commit",
        }
    }

    fn may_become(&self, next: &VerState) -> bool {
        matches!(
            (self, next),
            (VerState::NoVer, VerState::Reg)
                | (VerState::NoVer, VerState::Prep { .. })
                | (VerState::Prep { .. }, VerState::Commit { .. })
        )
    }
}

/// Committed version index entry, kept sorted by commit timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommittedVersion {
    pub cts: CommitTs,
    pub writer: TxnId,
    pub pend_t: LamportTs,
    pub clk_at_commit: LamportTs,
    /// Overlaps (in server time) with the prepare-to-commit interval of
    /// another committed version of the same key.
    pub conflicted: bool,
}

impl CommittedVersion {
    fn overlaps(&self, other: &CommittedVersion) -> bool {
        if self.writer.is_init() || other.writer.is_init() {
            return false;
        }
        self.pend_t < other.clk_at_commit && other.pend_t < self.clk_at_commit
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct KeyData {
    states: BTreeMap<TxnId, VerState>,
    committed: Vec<CommittedVersion>,
}

impl KeyData {
    fn new() -> Self {
        let mut states = BTreeMap::new();
        states.insert(
            TxnId::INIT,
            VerState::Commit {
                cts: CommitTs::INIT,
                lst_at_commit: LamportTs::ZERO,
                clk_at_commit: LamportTs::ZERO,
                val: Value::INIT,
                readermap: BTreeMap::new(),
            },
        );
        KeyData {
            states,
            committed: vec![CommittedVersion {
                cts: CommitTs::INIT,
                writer: TxnId::INIT,
                pend_t: LamportTs::ZERO,
                clk_at_commit: LamportTs::ZERO,
                conflicted: false,
            }],
        }
    }

    fn state(&self, t: TxnId) -> &VerState {
        self.states.get(&t).unwrap_or(&VerState::NoVer)
    }

    fn set_state(&mut self, t: TxnId, next: VerState) {
        let cur = self.state(t);
        assert!(
            cur.may_become(&next),
            "illegal version transition {} -> {} for {t}",
            cur.name(),
            next.name()
        );
        self.states.insert(t, next);
    }
}

/// What a read returned and how much work it took.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReadOutcome {
    pub val: Value,
    pub writer: TxnId,
    pub lst: LamportTs,
    pub clk: LamportTs,
    pub cts: CommitTs,
    pub versions_scanned: u32,
}

/// Partition configuration and state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ServerState {
    id: ServerId,
    partitions: u32,
    store: BTreeMap<Key, KeyData>,
    svr_clock: LamportTs,
    lst: LamportTs,
    pending_wtxns: BTreeMap<LamportTs, u32>,
    rule: ReadRule,
    mutation: Option<Mutation>,
}

impl ServerState {
    /// Partition `id` of `partitions`; it owns keys with `key % partitions == id`.
    pub fn new(id: ServerId, partitions: u32, rule: ReadRule) -> Self {
        assert!(partitions >= 1 && id.0 < partitions);
        ServerState {
            id,
            partitions,
            store: BTreeMap::new(),
            svr_clock: LamportTs::ZERO,
            lst: LamportTs::ZERO,
            pending_wtxns: BTreeMap::new(),
            rule,
            mutation: None,
        }
    }

    pub fn with_mutation(mut self, m: Option<Mutation>) -> Self {
        self.mutation = m;
        self
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn clock(&self) -> LamportTs {
        self.svr_clock
    }

    pub fn lst(&self) -> LamportTs {
        self.lst
    }

    pub fn rule(&self) -> ReadRule {
        self.rule
    }

    pub fn owns(&self, k: Key) -> bool {
        k.0 % self.partitions == self.id.0
    }

    /// Pending prepare times as a sorted multiset.
    pub fn pending(&self) -> Vec<LamportTs> {
        self.pending_wtxns
            .iter()
            .flat_map(|(&t, &n)| std::iter::repeat_n(t, n as usize))
            .collect()
    }

    /// Minimum pending prepare time, or the clock when nothing is pending.
    pub fn local_safe_time(&self) -> LamportTs {
        self.pending_wtxns
            .keys()
            .next()
            .copied()
            .unwrap_or(self.svr_clock)
    }

    pub fn ver_state(&self, k: Key, t: TxnId) -> VerState {
        match self.store.get(&k) {
            Some(d) => d.state(t).clone(),
            None if t.is_init() && self.owns(k) => KeyData::new().state(t).clone(),
            None => VerState::NoVer,
        }
    }

    /// Committed versions of `k` in commit-timestamp order, init first.
    pub fn committed(&self, k: Key) -> Vec<CommittedVersion> {
        match self.store.get(&k) {
            Some(d) => d.committed.clone(),
            None => KeyData::new().committed,
        }
    }

    /// Keys this partition has materialized.
    pub fn touched_keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.store.keys().copied()
    }

    fn key_data(&mut self, k: Key) -> Result<&mut KeyData, ProtocolError> {
        if !self.owns(k) {
            return Err(ProtocolError::UnknownKey {
                server: self.id,
                key: k,
            });
        }
        Ok(self.store.entry(k).or_insert_with(KeyData::new))
    }

    fn advance(&mut self, received: LamportTs) -> LamportTs {
        self.svr_clock = clock_advance(self.svr_clock, received);
        self.svr_clock
    }

    /// Serve a read of `k` at read timestamp `rts`.
    pub fn register_read(
        &mut self,
        k: Key,
        rts: LamportTs,
        reader: TxnId,
        cl_clock: LamportTs,
    ) -> Result<ReadOutcome, ProtocolError> {
        let rule = self.rule;
        let mutation = self.mutation;
        self.key_data(k)?;
        if !matches!(self.store[&k].state(reader), VerState::NoVer) {
            return Err(ProtocolError::DuplicateRead { reader, key: k });
        }
        let clk = self.advance(cl_clock);
        let lst = self.lst;
        let data = self.store.get_mut(&k).expect("materialized above");

        let (idx, scanned) = match mutation {
            Some(Mutation::ReadNewest) => (data.committed.len() - 1, 1),
            _ => select_version(
                &data.committed,
                rts,
                reader.cl,
                rule,
                mutation != Some(Mutation::SkipRyw),
            ),
        };
        let chosen = data.committed[idx].clone();
        let val = match data.states.get_mut(&chosen.writer) {
            Some(VerState::Commit { readermap, val, .. }) => {
                readermap.insert(reader, (lst, clk));
                *val
            }
            other => unreachable!("committed index points at {other:?}"),
        };
        data.set_state(reader, VerState::Reg);
        Ok(ReadOutcome {
            val,
            writer: chosen.writer,
            lst,
            clk,
            cts: chosen.cts,
            versions_scanned: scanned,
        })
    }

    /// The pre-plus read rule as a standalone query; the version is not
    /// registered and the clock is untouched. Returns `(val, writer)`.
    pub fn read_eiger_port(&self, k: Key, rts: LamportTs, cl: ClientId) -> (Value, TxnId) {
        let committed = self.committed(k);
        let (idx, _) = select_version(&committed, rts, cl, ReadRule::EigerPort, true);
        let writer = committed[idx].writer;
        match self.ver_state(k, writer) {
            VerState::Commit { val, .. } => (val, writer),
            s => unreachable!("committed index points at {}", s.name()),
        }
    }

    /// First phase of a write: stage `v` as a pending version of `k`.
    pub fn prepare_write(
        &mut self,
        k: Key,
        v: Value,
        t: TxnId,
        cl_clock: LamportTs,
    ) -> Result<LamportTs, ProtocolError> {
        let data = self.key_data(k)?;
        if !matches!(data.state(t), VerState::NoVer) {
            return Err(ProtocolError::DuplicatePrepare { txn: t, key: k });
        }
        let pend_t = self.svr_clock;
        let prep_t = self.advance(cl_clock);
        *self.pending_wtxns.entry(pend_t).or_insert(0) += 1;
        self.store.get_mut(&k).expect("materialized above").set_state(
            t,
            VerState::Prep {
                pend_t,
                prep_t,
                val: v,
            },
        );
        Ok(prep_t)
    }

    /// Second phase of a write: commit the pending version of `(k, t)` at
    /// `cts`. Returns the new local safe time.
    pub fn commit_write(
        &mut self,
        k: Key,
        t: TxnId,
        cts: CommitTs,
        cl_clock: LamportTs,
    ) -> Result<LamportTs, ProtocolError> {
        let (pend_t, val) = match self.key_data(k)?.state(t) {
            VerState::Prep { pend_t, val, .. } => (*pend_t, *val),
            _ => return Err(ProtocolError::NotPrepared { txn: t, key: k }),
        };
        let clk = self.advance(cl_clock);
        match self.pending_wtxns.get_mut(&pend_t) {
            Some(n) if *n > 1 => *n -= 1,
            Some(_) => {
                self.pending_wtxns.remove(&pend_t);
            }
            None => unreachable!("prepared version without pending entry"),
        }
        self.lst = match (self.pending_wtxns.keys().next(), self.mutation) {
            (_, Some(Mutation::LstClockWhilePending)) | (None, _) => clk,
            (Some(&min), _) => min,
        };
        let lst = self.lst;
        let data = self.store.get_mut(&k).expect("materialized above");
        let mut entry = CommittedVersion {
            cts,
            writer: t,
            pend_t,
            clk_at_commit: clk,
            conflicted: false,
        };
        for other in data.committed.iter_mut() {
            if entry.overlaps(other) {
                entry.conflicted = true;
                other.conflicted = true;
            }
        }
        let pos = data.committed.partition_point(|e| e.cts < cts);
        data.committed.insert(pos, entry);
        data.set_state(
            t,
            VerState::Commit {
                cts,
                lst_at_commit: lst,
                clk_at_commit: clk,
                val,
                readermap: BTreeMap::new(),
            },
        );
        Ok(lst)
    }

    /// Handle one request and produce its reply. Reads are answered in the
    /// same step they arrive.
    pub fn handle(&mut self, msg: &Message) -> Result<(Message, Option<ReadOutcome>), ProtocolError> {
        match *msg {
            Message::ReadReq {
                k,
                rts,
                reader,
                cl_clock,
            } => {
                let out = self.register_read(k, rts, reader, cl_clock)?;
                Ok((
                    Message::ReadReply {
                        k,
                        reader,
                        val: out.val,
                        writer: out.writer,
                        lst: out.lst,
                        clk: out.clk,
                    },
                    Some(out),
                ))
            }
            Message::PrepReq { k, v, t, cl_clock } => {
                let prep_t = self.prepare_write(k, v, t, cl_clock)?;
                Ok((
                    Message::PrepReply {
                        k,
                        t,
                        prep_t,
                        clk: self.svr_clock,
                    },
                    None,
                ))
            }
            Message::CommitReq {
                k,
                t,
                cts,
                cl_clock,
            } => {
                let lst = self.commit_write(k, t, cts, cl_clock)?;
                Ok((
                    Message::CommitReply {
                        k,
                        t,
                        lst,
                        clk: self.svr_clock,
                    },
                    None,
                ))
            }
            _ => Err(ProtocolError::Usage("server received a reply message")),
        }
    }

    /// Full recomputation of the state invariants; `Err` names the first
    /// violated one.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.lst > self.svr_clock {
            return Err(format!("{}: lst {} > clock {}", self.id, self.lst, self.svr_clock));
        }
        let mut pend: Vec<LamportTs> = Vec::new();
        for (k, d) in &self.store {
            let mut seen = std::collections::BTreeSet::new();
            for w in d.committed.windows(2) {
                if w[0].cts >= w[1].cts {
                    return Err(format!("{k}: committed index not strictly sorted"));
                }
            }
            for (t, s) in &d.states {
                match s {
                    VerState::Prep { pend_t, prep_t, .. } => {
                        if pend_t >= prep_t {
                            return Err(format!("{k}/{t}: pend_t {pend_t} >= prep_t {prep_t}"));
                        }
                        pend.push(*pend_t);
                    }
                    VerState::Commit { cts, .. } => {
                        if !seen.insert(*cts) {
                            return Err(format!("{k}: two versions committed at {cts}"));
                        }
                        if !d.committed.iter().any(|e| e.writer == *t && e.cts == *cts) {
                            return Err(format!("{k}/{t}: committed version missing from index"));
                        }
                    }
                    _ => {}
                }
            }
            for e in &d.committed {
                if !e.writer.is_init() && e.cts.clock <= e.pend_t {
                    return Err(format!("{k}/{}: cts {} not above pend_t {}", e.writer, e.cts, e.pend_t));
                }
            }
        }
        pend.sort();
        if pend != self.pending() {
            return Err(format!("{}: pending set {:?} != prepared versions {:?}", self.id, self.pending(), pend));
        }
        Ok(())
    }
}

/// Index of the version a read selects, and the number of versions examined.
fn select_version(
    committed: &[CommittedVersion],
    rts: LamportTs,
    cl: ClientId,
    rule: ReadRule,
    ryw: bool,
) -> (usize, u32) {
    let mut scanned = 0u32;
    // Newest own version above rts.
    let le = committed.partition_point(|e| e.cts.clock <= rts);
    if ryw {
        for i in (le..committed.len()).rev() {
            scanned += 1;
            if committed[i].writer.cl == cl {
                return (i, scanned);
            }
        }
    }
    debug_assert!(le >= 1, "init version is always at or below rts");
    match rule {
        ReadRule::EigerPortPlus => (le - 1, scanned + 1),
        ReadRule::EigerPort => {
            for i in (0..le).rev() {
                scanned += 1;
                let v = &committed[i];
                if !v.conflicted || v.writer.cl != cl {
                    return (i, scanned);
                }
            }
            unreachable!("init version is never conflicted")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: u32, s: u32) -> TxnId {
        TxnId::new(ClientId(c), s)
    }

    fn one_key(rule: ReadRule) -> ServerState {
        ServerState::new(ServerId(0), 1, rule)
    }

    /// Prepare and commit a single-key write with the given client clock.
    fn write(s: &mut ServerState, k: Key, txn: TxnId, cl_clock: u64) -> CommitTs {
        let v = Value::provenance(txn.cl, txn.sn, k);
        let prep = s.prepare_write(k, v, txn, LamportTs(cl_clock)).unwrap();
        let cts = CommitTs::new(prep, txn.cl);
        s.commit_write(k, txn, cts, LamportTs(prep.0 + 1)).unwrap();
        cts
    }

    #[test]
    fn fresh_store_reads_init() {
        for rts in [0, 3, 100] {
            let mut s = one_key(ReadRule::EigerPortPlus);
            let out = s.register_read(Key(0), LamportTs(rts), t(1, 0), LamportTs(0)).unwrap();
            assert_eq!(out.val, Value::INIT);
            assert_eq!(out.writer, TxnId::INIT);
        }
    }

    #[test]
    fn read_picks_max_below_rts() {
        let mut s = one_key(ReadRule::EigerPortPlus);
        // Commits by other clients at clocks 2, 5 and 9.
        let c2 = write(&mut s, Key(0), t(2, 0), 1);
        let c5 = write(&mut s, Key(0), t(3, 0), 4);
        let c9 = write(&mut s, Key(0), t(4, 0), 8);
        assert_eq!([c2.clock.0, c5.clock.0, c9.clock.0], [2, 5, 9]);

        // Brute force: scan every committed version for the max cts <= rts.
        let all = s.committed(Key(0));
        for rts in 0..12u64 {
            let expect = all
                .iter()
                .filter(|e| e.cts.clock.0 <= rts)
                .max_by_key(|e| e.cts)
                .unwrap()
                .writer;
            let mut probe = s.clone();
            let out = probe.register_read(Key(0), LamportTs(rts), t(1, 0), LamportTs(0)).unwrap();
            assert_eq!(out.writer, expect, "rts={rts}");
        }
        let out = s.register_read(Key(0), LamportTs(6), t(1, 0), LamportTs(0)).unwrap();
        assert_eq!(out.writer, t(3, 0));
    }

    #[test]
    fn ryw_branch_returns_own_write_above_rts() {
        let mut s = one_key(ReadRule::EigerPortPlus);
        write(&mut s, Key(0), t(2, 0), 1);
        let own = write(&mut s, Key(0), t(1, 0), 5);
        let out = s.register_read(Key(0), LamportTs(0), t(1, 1), LamportTs(0)).unwrap();
        assert_eq!(out.writer, t(1, 0));
        assert_eq!(out.cts, own);
        // readermap records the RYW read as well
        match s.ver_state(Key(0), t(1, 0)) {
            VerState::Commit { readermap, .. } => assert!(readermap.contains_key(&t(1, 1))),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.ver_state(Key(0), t(1, 1)), VerState::Reg);
    }

    #[test]
    fn prepare_examples() {
        let mut s = one_key(ReadRule::EigerPortPlus);
        s.svr_clock = LamportTs(4);
        let prep = s.prepare_write(Key(0), Value(1), t(1, 0), LamportTs(1)).unwrap();
        assert_eq!(prep, clock_advance(LamportTs(4), LamportTs(1)));
        assert_eq!(prep, LamportTs(5));
        assert_eq!(s.pending(), vec![LamportTs(4)]);
        assert!(s.local_safe_time() <= LamportTs(4));

        let mut s = one_key(ReadRule::EigerPortPlus);
        let prep = s.prepare_write(Key(0), Value(1), t(1, 0), LamportTs(9)).unwrap();
        assert_eq!(prep, clock_advance(LamportTs(0), LamportTs(9)));
        assert_eq!(s.pending(), vec![LamportTs(0)]);
        match s.ver_state(Key(0), t(1, 0)) {
            VerState::Prep { pend_t, prep_t, .. } => {
                assert_eq!((pend_t, prep_t), (LamportTs(0), LamportTs(10)))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_prepare_and_unknown_key_rejected() {
        let mut s = ServerState::new(ServerId(1), 2, ReadRule::EigerPortPlus);
        assert!(matches!(
            s.prepare_write(Key(0), Value(1), t(1, 0), LamportTs(0)),
            Err(ProtocolError::UnknownKey { .. })
        ));
        s.prepare_write(Key(1), Value(1), t(1, 0), LamportTs(0)).unwrap();
        assert!(matches!(
            s.prepare_write(Key(1), Value(2), t(1, 0), LamportTs(0)),
            Err(ProtocolError::DuplicatePrepare { .. })
        ));
        assert!(matches!(
            s.commit_write(Key(1), t(2, 0), CommitTs::default(), LamportTs(0)),
            Err(ProtocolError::NotPrepared { .. })
        ));
        s.register_read(Key(1), LamportTs(0), t(3, 0), LamportTs(0)).unwrap();
        assert!(matches!(
            s.register_read(Key(1), LamportTs(0), t(3, 0), LamportTs(0)),
            Err(ProtocolError::DuplicateRead { .. })
        ));
    }

    #[test]
    fn commit_sets_lst_from_remaining_pendings() {
        // Only this txn pending: lst becomes the advanced clock.
        let mut s = one_key(ReadRule::EigerPortPlus);
        s.svr_clock = LamportTs(3);
        let prep = s.prepare_write(Key(0), Value(1), t(1, 0), LamportTs(0)).unwrap();
        let lst = s
            .commit_write(Key(0), t(1, 0), CommitTs::new(prep, ClientId(1)), LamportTs(7))
            .unwrap();
        assert_eq!(lst, LamportTs(8));
        assert_eq!(lst, s.clock());

        // Pending {3, 5}: committing the pend_t=3 txn leaves lst=5.
        let mut s = ServerState::new(ServerId(0), 2, ReadRule::EigerPortPlus);
        s.svr_clock = LamportTs(3);
        let p1 = s.prepare_write(Key(0), Value(1), t(1, 0), LamportTs(0)).unwrap();
        s.svr_clock = LamportTs(5);
        s.prepare_write(Key(2), Value(2), t(2, 0), LamportTs(0)).unwrap();
        assert_eq!(s.pending(), vec![LamportTs(3), LamportTs(5)]);
        let lst = s
            .commit_write(Key(0), t(1, 0), CommitTs::new(p1, ClientId(1)), LamportTs(0))
            .unwrap();
        assert_eq!(lst, LamportTs(5));

        // Pending {2, 4, 7}: committing pend_t=4 leaves min{2, 7} = 2.
        let mut s = ServerState::new(ServerId(0), 1, ReadRule::EigerPortPlus);
        let mut preps = Vec::new();
        for (i, clock) in [2u64, 4, 7].into_iter().enumerate() {
            s.svr_clock = LamportTs(clock);
            preps.push(s.prepare_write(Key(i as u32), Value(1), t(i as u32 + 1, 0), LamportTs(0)).unwrap());
        }
        let remaining = [LamportTs(2), LamportTs(7)];
        let lst = s
            .commit_write(Key(1), t(2, 0), CommitTs::new(preps[1], ClientId(2)), LamportTs(0))
            .unwrap();
        assert_eq!(lst, *remaining.iter().min().unwrap());
        s.check_invariants().unwrap();
    }

    #[test]
    fn local_safe_time_cases() {
        let mut s = one_key(ReadRule::EigerPortPlus);
        s.svr_clock = LamportTs(6);
        assert_eq!(s.local_safe_time(), LamportTs(6));
        s.pending_wtxns.insert(LamportTs(4), 1);
        s.pending_wtxns.insert(LamportTs(9), 1);
        assert_eq!(s.local_safe_time(), LamportTs(4));
    }

    #[test]
    fn eiger_port_rule_matches_plus_without_conflicts() {
        // Sequential single-key writes never overlap.
        let mut s = one_key(ReadRule::EigerPort);
        for (i, cl) in [1u32, 2, 1, 3, 1].into_iter().enumerate() {
            write(&mut s, Key(0), t(cl, i as u32), 0);
        }
        assert!(s.committed(Key(0)).iter().all(|e| !e.conflicted));
        for rts in 0..20 {
            for cl in 1..4 {
                let plus = select_version(&s.committed(Key(0)), LamportTs(rts), ClientId(cl), ReadRule::EigerPortPlus, true);
                let ep = select_version(&s.committed(Key(0)), LamportTs(rts), ClientId(cl), ReadRule::EigerPort, true);
                assert_eq!(plus.0, ep.0);
                assert!(ep.1 >= plus.1);
            }
        }
    }

    #[test]
    fn eiger_port_rule_skips_conflicted_own_versions() {
        let mut s = one_key(ReadRule::EigerPort);
        let k = Key(0);
        // Client 2 prepares first, client 1 writes twice while it is pending.
        let p2 = s.prepare_write(k, Value(20), t(2, 0), LamportTs(0)).unwrap();
        let p1 = s.prepare_write(k, Value(10), t(1, 0), LamportTs(0)).unwrap();
        s.commit_write(k, t(1, 0), CommitTs::new(p1, ClientId(1)), LamportTs(0)).unwrap();
        s.commit_write(k, t(2, 0), CommitTs::new(p2, ClientId(2)), LamportTs(0)).unwrap();
        let last = s.committed(k);
        assert!(last[1..].iter().all(|e| e.conflicted));
        let rts = s.clock();
        // Plus rule: newest below rts is client 1's; old rule skips it.
        let (v, w) = s.read_eiger_port(k, rts, ClientId(1));
        assert_eq!((v, w), (Value(20), t(2, 0)));
        let mut plus = s.clone();
        plus.rule = ReadRule::EigerPortPlus;
        let out = plus.register_read(k, rts, t(1, 1), LamportTs(0)).unwrap();
        assert_eq!(out.writer, t(1, 0));
    }
}
