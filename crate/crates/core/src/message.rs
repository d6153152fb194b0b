//! Simulated wire messages between clients and partitions.

use serde::{Deserialize, Serialize};

use crate::types::{ClientId, CommitTs, Key, LamportTs, ServerId, TxnId, Value};

/// Protocol message. Requests carry the sender's Lamport clock, replies the
/// server's clock after it advanced.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Message {
    ReadReq {
        k: Key,
        rts: LamportTs,
        reader: TxnId,
        cl_clock: LamportTs,
    },
    ReadReply {
        k: Key,
        reader: TxnId,
        val: Value,
        writer: TxnId,
        lst: LamportTs,
        clk: LamportTs,
    },
    PrepReq {
        k: Key,
        v: Value,
        t: TxnId,
        cl_clock: LamportTs,
    },
    PrepReply {
        k: Key,
        t: TxnId,
        prep_t: LamportTs,
        clk: LamportTs,
    },
    CommitReq {
        k: Key,
        t: TxnId,
        cts: CommitTs,
        cl_clock: LamportTs,
    },
    CommitReply {
        k: Key,
        t: TxnId,
        lst: LamportTs,
        clk: LamportTs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    ReadReq,
    ReadReply,
    PrepReq,
    PrepReply,
    CommitReq,
    CommitReply,
}

impl MessageKind {
    /// Number of timestamp fields each message kind carries.
    pub const fn timestamp_fields(self) -> usize {
        match self {
            MessageKind::ReadReq => 2,
            MessageKind::ReadReply => 2,
            MessageKind::PrepReq => 1,
            MessageKind::PrepReply => 2,
            MessageKind::CommitReq => 2,
            MessageKind::CommitReply => 2,
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ReadReq { .. } => MessageKind::ReadReq,
            Message::ReadReply { .. } => MessageKind::ReadReply,
            Message::PrepReq { .. } => MessageKind::PrepReq,
            Message::PrepReply { .. } => MessageKind::PrepReply,
            Message::CommitReq { .. } => MessageKind::CommitReq,
            Message::CommitReply { .. } => MessageKind::CommitReply,
        }
    }

    pub fn key(&self) -> Key {
        match *self {
            Message::ReadReq { k, .. }
            | Message::ReadReply { k, .. }
            | Message::PrepReq { k, .. }
            | Message::PrepReply { k, .. }
            | Message::CommitReq { k, .. }
            | Message::CommitReply { k, .. } => k,
        }
    }

    pub fn txn(&self) -> TxnId {
        match *self {
            Message::ReadReq { reader, .. } | Message::ReadReply { reader, .. } => reader,
            Message::PrepReq { t, .. }
            | Message::PrepReply { t, .. }
            | Message::CommitReq { t, .. }
            | Message::CommitReply { t, .. } => t,
        }
    }

    /// Timestamp fields actually present in this payload. A commit timestamp
    /// counts as one field.
    pub fn timestamps(&self) -> Vec<LamportTs> {
        match *self {
            Message::ReadReq { rts, cl_clock, .. } => vec![rts, cl_clock],
            Message::ReadReply { lst, clk, .. } => vec![lst, clk],
            Message::PrepReq { cl_clock, .. } => vec![cl_clock],
            Message::PrepReply { prep_t, clk, .. } => vec![prep_t, clk],
            Message::CommitReq { cts, cl_clock, .. } => vec![cts.clock, cl_clock],
            Message::CommitReply { lst, clk, .. } => vec![lst, clk],
        }
    }

    pub fn is_request(&self) -> bool {
        matches!(
            self,
            Message::ReadReq { .. } | Message::PrepReq { .. } | Message::CommitReq { .. }
        )
    }
}

/// Simulation endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Client(ClientId),
    Server(ServerId),
}

/// A message in flight.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Envelope {
    pub from: Node,
    pub to: Node,
    pub msg: Message,
}
