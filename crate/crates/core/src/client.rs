//! Per-client transaction coordinator for read-only and write-only
//! transactions.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::ProtocolError;
use crate::history::HistoryEvent;
use crate::message::{Message, MessageKind};
use crate::server::Mutation;
use crate::types::{clock_advance, ClientId, CommitTs, Key, LamportTs, ServerId, TxnId, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ClState {
    Idle,
    RtxnInProg {
        start_clk: LamportTs,
        keys: BTreeSet<Key>,
        kv_map: BTreeMap<Key, (Value, TxnId)>,
    },
    WtxnPrep {
        kv_map: BTreeMap<Key, Value>,
        prep_ts: BTreeMap<Key, LamportTs>,
    },
    WtxnCommit {
        cts: CommitTs,
        kv_map: BTreeMap<Key, Value>,
        pending_acks: BTreeSet<Key>,
    },
}

impl ClState {
    pub fn name(&self) -> &'static str {
        match self {
            ClState::Idle => "Idle",
            ClState::RtxnInProg { .. } => "RtxnInProg",
            ClState::WtxnPrep { .. } => "WtxnPrep",
            ClState::WtxnCommit { .. } => "WtxnCommit",
        }
    }
}

/// Request together with the partition it is routed to.
pub type Outgoing = (ServerId, Message);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClientState {
    id: ClientId,
    partitions: u32,
    state: ClState,
    sn: u32,
    clock: LamportTs,
    gst: LamportTs,
    /// Latest known local safe time per partition.
    lst_map: Vec<LamportTs>,
    mutation: Option<Mutation>,
}

impl ClientState {
    pub fn new(id: ClientId, partitions: u32) -> Self {
        assert!(!id.is_init(), "client id 0 is reserved");
        ClientState {
            id,
            partitions,
            state: ClState::Idle,
            sn: 0,
            clock: LamportTs::ZERO,
            gst: LamportTs::ZERO,
            lst_map: vec![LamportTs::ZERO; partitions as usize],
            mutation: None,
        }
    }

    pub fn with_mutation(mut self, m: Option<Mutation>) -> Self {
        self.mutation = m;
        self
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn state(&self) -> &ClState {
        &self.state
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.state, ClState::Idle)
    }

    pub fn sn(&self) -> u32 {
        self.sn
    }

    pub fn clock(&self) -> LamportTs {
        self.clock
    }

    pub fn gst(&self) -> LamportTs {
        self.gst
    }

    pub fn lst_map(&self) -> &[LamportTs] {
        &self.lst_map
    }

    pub fn current_txn(&self) -> TxnId {
        TxnId::new(self.id, self.sn)
    }

    pub fn partition_of(&self, k: Key) -> ServerId {
        ServerId(k.0 % self.partitions)
    }

    fn wrong_state(&self, op: &'static str, expected: &'static str) -> ProtocolError {
        ProtocolError::WrongState {
            client: self.id,
            op,
            expected,
            found: self.state.name(),
        }
    }

    fn unexpected(&self, kind: MessageKind, key: Key) -> ProtocolError {
        ProtocolError::Unexpected {
            client: self.id,
            kind,
            key,
            state: self.state.name(),
        }
    }

    /// Start a read-only transaction over `keys`. Returns the new gst, the
    /// view-extension event and one read request per key.
    pub fn read_invoke(
        &mut self,
        keys: BTreeSet<Key>,
    ) -> Result<(HistoryEvent, Vec<Outgoing>), ProtocolError> {
        if !self.is_idle() {
            return Err(self.wrong_state("cl_read_invoke", "Idle"));
        }
        if keys.is_empty() {
            return Err(ProtocolError::Usage("read-only transaction needs at least one key"));
        }
        let gst = match self.mutation {
            Some(Mutation::GstMax) => self.lst_map.iter().max(),
            _ => self.lst_map.iter().min(),
        };
        self.gst = *gst.expect("at least one partition");
        let reader = self.current_txn();
        let reqs = keys
            .iter()
            .map(|&k| {
                (
                    self.partition_of(k),
                    Message::ReadReq {
                        k,
                        rts: self.gst,
                        reader,
                        cl_clock: self.clock,
                    },
                )
            })
            .collect();
        self.state = ClState::RtxnInProg {
            start_clk: self.clock,
            keys,
            kv_map: BTreeMap::new(),
        };
        Ok((
            HistoryEvent::ViewExtend {
                cl: self.id,
                gst: self.gst,
            },
            reqs,
        ))
    }

    /// Absorb one read reply.
    pub fn cl_read(&mut self, reply: &Message) -> Result<(), ProtocolError> {
        let Message::ReadReply {
            k,
            reader,
            val,
            writer,
            lst,
            clk,
        } = *reply
        else {
            return Err(self.unexpected(reply.kind(), reply.key()));
        };
        let txn = self.current_txn();
        let part = self.partition_of(k);
        let err = self.unexpected(MessageKind::ReadReply, k);
        match &mut self.state {
            ClState::RtxnInProg { keys, kv_map, .. }
                if reader == txn && keys.contains(&k) && !kv_map.contains_key(&k) =>
            {
                kv_map.insert(k, (val, writer));
            }
            _ => return Err(err),
        }
        self.lst_map[part.0 as usize] = lst;
        self.clock = clock_advance(self.clock, clk);
        Ok(())
    }

    pub fn read_complete(&self) -> bool {
        matches!(&self.state, ClState::RtxnInProg { keys, kv_map, .. } if kv_map.len() == keys.len())
    }

    /// Finish the read-only transaction once every key has been read.
    pub fn read_done(&mut self) -> Result<HistoryEvent, ProtocolError> {
        if !self.read_complete() {
            return Err(self.wrong_state("cl_read_done", "RtxnInProg with all keys read"));
        }
        let ClState::RtxnInProg { kv_map, .. } = std::mem::replace(&mut self.state, ClState::Idle)
        else {
            unreachable!()
        };
        let ev = HistoryEvent::ReadCommit {
            txn: self.current_txn(),
            rts: self.gst,
            reads: kv_map,
        };
        self.sn += 1;
        Ok(ev)
    }

    /// Start a write-only transaction with one prepare request per key.
    pub fn write_invoke(
        &mut self,
        kv_map: BTreeMap<Key, Value>,
    ) -> Result<Vec<Outgoing>, ProtocolError> {
        if !self.is_idle() {
            return Err(self.wrong_state("cl_write_invoke", "Idle"));
        }
        if kv_map.is_empty() {
            return Err(ProtocolError::Usage("write-only transaction needs at least one key"));
        }
        let t = self.current_txn();
        let reqs = kv_map
            .iter()
            .map(|(&k, &v)| {
                (
                    self.partition_of(k),
                    Message::PrepReq {
                        k,
                        v,
                        t,
                        cl_clock: self.clock,
                    },
                )
            })
            .collect();
        self.state = ClState::WtxnPrep {
            kv_map,
            prep_ts: BTreeMap::new(),
        };
        Ok(reqs)
    }

    /// Record a prepare acknowledgement.
    pub fn cl_prepared(&mut self, reply: &Message) -> Result<(), ProtocolError> {
        let Message::PrepReply { k, t, prep_t, .. } = *reply else {
            return Err(self.unexpected(reply.kind(), reply.key()));
        };
        let txn = self.current_txn();
        let err = self.unexpected(MessageKind::PrepReply, k);
        match &mut self.state {
            ClState::WtxnPrep { kv_map, prep_ts }
                if t == txn && kv_map.contains_key(&k) && !prep_ts.contains_key(&k) =>
            {
                prep_ts.insert(k, prep_t);
                Ok(())
            }
            _ => Err(err),
        }
    }

    /// Guard of the client commit event: every key has been prepared.
    pub fn write_commit_enabled(&self) -> bool {
        matches!(&self.state, ClState::WtxnPrep { kv_map, prep_ts } if kv_map.len() == prep_ts.len())
    }

    /// Client-side commit: pick the commit timestamp and send commit requests.
    pub fn write_commit(&mut self) -> Result<(CommitTs, Vec<Outgoing>, HistoryEvent), ProtocolError> {
        if !self.write_commit_enabled() {
            return Err(self.wrong_state("cl_write_commit", "WtxnPrep with all keys prepared"));
        }
        let ClState::WtxnPrep { kv_map, prep_ts } =
            std::mem::replace(&mut self.state, ClState::Idle)
        else {
            unreachable!()
        };
        let clock = match self.mutation {
            Some(Mutation::CommitCtsMin) => prep_ts.values().min(),
            _ => prep_ts.values().max(),
        };
        let cts = CommitTs::new(*clock.expect("non-empty write set"), self.id);
        let next = LamportTs(cts.clock.0 + 1);
        debug_assert!(self.mutation.is_some() || next > self.clock);
        self.clock = self.clock.max(next);
        let t = self.current_txn();
        let reqs = kv_map
            .keys()
            .map(|&k| {
                (
                    self.partition_of(k),
                    Message::CommitReq {
                        k,
                        t,
                        cts,
                        cl_clock: self.clock,
                    },
                )
            })
            .collect();
        let ev = HistoryEvent::WriteCommit {
            txn: t,
            cts,
            writes: kv_map.clone(),
        };
        self.state = ClState::WtxnCommit {
            cts,
            pending_acks: kv_map.keys().copied().collect(),
            kv_map,
        };
        Ok((cts, reqs, ev))
    }

    /// Absorb a commit acknowledgement. Returns `true` when it was the last
    /// one and the client is idle again.
    pub fn write_done(&mut self, reply: &Message) -> Result<bool, ProtocolError> {
        let Message::CommitReply { k, t, lst, clk } = *reply else {
            return Err(self.unexpected(reply.kind(), reply.key()));
        };
        let txn = self.current_txn();
        let part = self.partition_of(k);
        let err = self.unexpected(MessageKind::CommitReply, k);
        let done = match &mut self.state {
            ClState::WtxnCommit { pending_acks, .. } if t == txn && pending_acks.contains(&k) => {
                pending_acks.remove(&k);
                pending_acks.is_empty()
            }
            _ => return Err(err),
        };
        self.lst_map[part.0 as usize] = lst;
        self.clock = clock_advance(self.clock, clk);
        if done {
            self.state = ClState::Idle;
            self.sn += 1;
        }
        Ok(done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClientId;

    fn keys(ks: &[u32]) -> BTreeSet<Key> {
        ks.iter().map(|&k| Key(k)).collect()
    }

    fn read_reply(c: &ClientState, k: u32, lst: u64, clk: u64) -> Message {
        Message::ReadReply {
            k: Key(k),
            reader: c.current_txn(),
            val: Value::INIT,
            writer: TxnId::INIT,
            lst: LamportTs(lst),
            clk: LamportTs(clk),
        }
    }

    #[test]
    fn gst_is_min_of_lst_map() {
        let mut c = ClientState::new(ClientId(1), 2);
        let (ev, reqs) = c.read_invoke(keys(&[0, 1])).unwrap();
        assert_eq!(ev, HistoryEvent::ViewExtend { cl: ClientId(1), gst: LamportTs(0) });
        assert_eq!(reqs.len(), 2);
        c.cl_read(&read_reply(&c, 0, 4, 5)).unwrap();
        c.cl_read(&read_reply(&c, 1, 7, 8)).unwrap();
        c.read_done().unwrap();
        assert_eq!(c.lst_map(), &[LamportTs(4), LamportTs(7)]);
        c.read_invoke(keys(&[0])).unwrap();
        assert_eq!(c.gst(), LamportTs(4));
    }

    #[test]
    fn empty_read_and_write_rejected() {
        let mut c = ClientState::new(ClientId(1), 1);
        assert!(matches!(c.read_invoke(BTreeSet::new()), Err(ProtocolError::Usage(_))));
        assert!(matches!(c.write_invoke(BTreeMap::new()), Err(ProtocolError::Usage(_))));
    }

    #[test]
    fn read_reply_bookkeeping() {
        let mut c = ClientState::new(ClientId(1), 1);
        c.read_invoke(keys(&[0, 1])).unwrap();
        c.lst_map[0] = LamportTs(4);
        let before = c.clock();
        c.cl_read(&read_reply(&c, 0, 9, 3)).unwrap();
        assert_eq!(c.lst_map()[0], LamportTs(9));
        assert!(c.clock() > before);
        // duplicate reply for the same key
        assert!(c.cl_read(&read_reply(&c, 0, 9, 3)).is_err());
        // not all keys read yet
        assert!(c.read_done().is_err());
        c.cl_read(&read_reply(&c, 1, 9, 3)).unwrap();
        let ev = c.read_done().unwrap();
        match ev {
            HistoryEvent::ReadCommit { txn, reads, .. } => {
                assert_eq!(txn, TxnId::new(ClientId(1), 0));
                assert_eq!(reads.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.sn(), 1);
        assert!(c.is_idle());
    }

    #[test]
    fn commit_ts_is_max_prepare_time() {
        let mut c = ClientState::new(ClientId(2), 2);
        let kv: BTreeMap<Key, Value> = [(Key(0), Value(5)), (Key(1), Value(9))].into();
        let reqs = c.write_invoke(kv).unwrap();
        assert_eq!(reqs.len(), 2);
        assert!(reqs.iter().all(|(_, m)| matches!(m, Message::PrepReq { cl_clock, .. } if *cl_clock == c.clock())));
        assert!(!c.write_commit_enabled());
        let t = c.current_txn();
        for (k, p) in [(0, 5u64), (1, 9)] {
            c.cl_prepared(&Message::PrepReply { k: Key(k), t, prep_t: LamportTs(p), clk: LamportTs(p) })
                .unwrap();
        }
        let (cts, reqs, _) = c.write_commit().unwrap();
        assert_eq!(cts, CommitTs::new(LamportTs(9), ClientId(2)));
        assert_eq!(c.clock(), LamportTs(10));
        assert_eq!(reqs.len(), 2);

        let ack = |k: u32, lst: u64| Message::CommitReply { k: Key(k), t, lst: LamportTs(lst), clk: LamportTs(11) };
        assert!(!c.write_done(&ack(0, 3)).unwrap());
        assert!(matches!(c.state(), ClState::WtxnCommit { .. }));
        assert!(c.write_done(&ack(0, 3)).is_err(), "stray ack");
        assert!(c.write_done(&ack(1, 6)).unwrap());
        assert!(c.is_idle());
        assert_eq!(c.sn(), 1);
        assert_eq!(c.lst_map(), &[LamportTs(3), LamportTs(6)]);
    }

    #[test]
    fn single_key_commit() {
        let mut c = ClientState::new(ClientId(1), 1);
        c.write_invoke([(Key(0), Value(1))].into()).unwrap();
        let t = c.current_txn();
        c.cl_prepared(&Message::PrepReply { k: Key(0), t, prep_t: LamportTs(3), clk: LamportTs(3) }).unwrap();
        assert_eq!(c.write_commit().unwrap().0.clock, LamportTs(3));
    }

    #[test]
    fn wrong_state_errors() {
        let mut c = ClientState::new(ClientId(1), 1);
        c.write_invoke([(Key(0), Value(1))].into()).unwrap();
        assert!(c.read_invoke(keys(&[0])).is_err());
        assert!(c.write_commit().is_err());
    }
}
