use thiserror::Error;

use crate::message::MessageKind;
use crate::types::{ClientId, Key, ServerId, TxnId};

/// A component received a message or call its current state does not allow.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{server} does not own {key} (misrouted message)")]
    UnknownKey { server: ServerId, key: Key },
    #[error("{reader} already registered a read of {key}")]
    DuplicateRead { reader: TxnId, key: Key },
    #[error("duplicate prepare of {txn} on {key}")]
    DuplicatePrepare { txn: TxnId, key: Key },
    #[error("commit of {txn} on {key}, which is not prepared")]
    NotPrepared { txn: TxnId, key: Key },
    #[error("{client}: {kind:?} for {key} unexpected in state {state}")]
    Unexpected {
        client: ClientId,
        kind: MessageKind,
        key: Key,
        state: &'static str,
    },
    #[error("{client}: {op} requires state {expected}, found {found}")]
    WrongState {
        client: ClientId,
        op: &'static str,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{0}")]
    Usage(&'static str),
}

/// The history cannot be interpreted.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported history format {0}")]
    Format(String),
    #[error("transaction id {0} committed twice")]
    DuplicateTxn(TxnId),
    #[error("{client}: sequence number {sn} follows {prev}")]
    NonMonotoneSn { client: ClientId, prev: u32, sn: u32 },
    #[error("commit timestamp of {a} and {b} coincide")]
    DuplicateCommitTs { a: TxnId, b: TxnId },
    #[error("{0}")]
    Malformed(String),
}
