//! Eiger-PORT+ transactional causal consistency: protocol state machines, a
//! deterministic network simulator, an executable abstract transaction model
//! and a history checker built on it.

pub mod checker;
pub mod demo;
pub mod bench;
pub mod client;
pub mod config;
pub mod error;
pub mod history;
pub mod message;
pub mod model;
pub mod server;
pub mod sim;
pub mod types;
pub mod workload;

pub use client::{ClState, ClientState};
pub use error::{HistoryError, ProtocolError};
pub use history::{Header, History, HistoryEvent, Record};
pub use message::{Envelope, Message, MessageKind, Node};
pub use server::{Mutation, ReadRule, ServerState, VerState};
pub use types::{ClientId, CommitTs, Key, LamportTs, ServerId, TxnId, Value};
pub use workload::{gen_workload, zipf_sample, TxnScript, WorkloadSpec, Zipf};
