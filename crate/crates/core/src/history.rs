//! Execution histories and their line-delimited JSON encoding.
//!
//! The first line is a header naming the format and its version; every
//! following line is one event with its global sequence number and the
//! simulated tick at which it happened.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::HistoryError;
use crate::types::{ClientId, CommitTs, Key, LamportTs, TxnId, Value};

pub const FORMAT_NAME: &str = "epp-history";
pub const FORMAT_VERSION: u32 = 1;

/// Checker-visible protocol event.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum HistoryEvent {
    ViewExtend {
        cl: ClientId,
        gst: LamportTs,
    },
    ReadCommit {
        txn: TxnId,
        rts: LamportTs,
        reads: BTreeMap<Key, (Value, TxnId)>,
    },
    WriteCommit {
        txn: TxnId,
        cts: CommitTs,
        writes: BTreeMap<Key, Value>,
    },
}

impl HistoryEvent {
    pub fn client(&self) -> ClientId {
        match self {
            HistoryEvent::ViewExtend { cl, .. } => *cl,
            HistoryEvent::ReadCommit { txn, .. } | HistoryEvent::WriteCommit { txn, .. } => txn.cl,
        }
    }

    pub fn txn(&self) -> Option<TxnId> {
        match self {
            HistoryEvent::ViewExtend { .. } => None,
            HistoryEvent::ReadCommit { txn, .. } | HistoryEvent::WriteCommit { txn, .. } => Some(*txn),
        }
    }

    pub fn is_commit(&self) -> bool {
        !matches!(self, HistoryEvent::ViewExtend { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub seq: u64,
    pub tick: u64,
    pub event: HistoryEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub clients: u32,
    pub keys: u32,
    pub variant: String,
}

impl Header {
    pub fn new(clients: u32, keys: u32, variant: &str) -> Self {
        Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            clients,
            keys,
            variant: variant.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct History {
    pub header: Header,
    pub records: Vec<Record>,
}

impl History {
    pub fn new(header: Header) -> Self {
        History {
            header,
            records: Vec::new(),
        }
    }

    /// Append an event with the next sequence number.
    pub fn push(&mut self, tick: u64, event: HistoryEvent) {
        let seq = self.records.len() as u64;
        self.records.push(Record { seq, tick, event });
    }

    pub fn events(&self) -> impl Iterator<Item = &HistoryEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same header, only the records selected by `keep`.
    pub fn filtered(&self, keep: impl Fn(usize) -> bool) -> History {
        History {
            header: self.header.clone(),
            records: self
                .records
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, r)| r.clone())
                .collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &WireRecord::from(r))?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<History, HistoryError> {
        let mut lines = r.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                None => return Err(HistoryError::Format("missing header line".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| parse_err(i, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| parse_err(i, e))?;
                }
            }
        };
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(HistoryError::Format(format!("{} v{}", header.format, header.version)));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| parse_err(i, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let wire: WireRecord = serde_json::from_str(&line).map_err(|e| parse_err(i, e))?;
            records.push(wire.into_record().map_err(|msg| HistoryError::Parse { line: i + 1, msg })?);
        }
        Ok(History { header, records })
    }

    pub fn from_jsonl(s: &str) -> Result<History, HistoryError> {
        Self::read_jsonl(s.as_bytes())
    }
}

fn parse_err(i: usize, e: impl std::fmt::Display) -> HistoryError {
    HistoryError::Parse {
        line: i + 1,
        msg: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct WireRead {
    k: Key,
    v: Value,
    writer: TxnId,
}

#[derive(Serialize, Deserialize)]
struct WireWrite {
    k: Key,
    v: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum WireEvent {
    ViewExtend {
        cl: ClientId,
        gst: LamportTs,
    },
    ReadCommit {
        txn: TxnId,
        rts: LamportTs,
        reads: Vec<WireRead>,
    },
    WriteCommit {
        txn: TxnId,
        cts: CommitTs,
        writes: Vec<WireWrite>,
    },
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    seq: u64,
    tick: u64,
    #[serde(flatten)]
    event: WireEvent,
}

impl From<&Record> for WireRecord {
    fn from(r: &Record) -> Self {
        let event = match &r.event {
            HistoryEvent::ViewExtend { cl, gst } => WireEvent::ViewExtend { cl: *cl, gst: *gst },
            HistoryEvent::ReadCommit { txn, rts, reads } => WireEvent::ReadCommit {
                txn: *txn,
                rts: *rts,
                reads: reads
                    .iter()
                    .map(|(&k, &(v, writer))| WireRead { k, v, writer })
                    .collect(),
            },
            HistoryEvent::WriteCommit { txn, cts, writes } => WireEvent::WriteCommit {
                txn: *txn,
                cts: *cts,
                writes: writes.iter().map(|(&k, &v)| WireWrite { k, v }).collect(),
            },
        };
        WireRecord {
            seq: r.seq,
            tick: r.tick,
            event,
        }
    }
}

impl WireRecord {
    fn into_record(self) -> Result<Record, String> {
        let event = match self.event {
            WireEvent::ViewExtend { cl, gst } => HistoryEvent::ViewExtend { cl, gst },
            WireEvent::ReadCommit { txn, rts, reads } => {
                let mut map = BTreeMap::new();
                for r in reads {
                    if map.insert(r.k, (r.v, r.writer)).is_some() {
                        return Err(format!("{txn} reads {} twice", r.k));
                    }
                }
                HistoryEvent::ReadCommit { txn, rts, reads: map }
            }
            WireEvent::WriteCommit { txn, cts, writes } => {
                let mut map = BTreeMap::new();
                for w in writes {
                    if map.insert(w.k, w.v).is_some() {
                        return Err(format!("{txn} writes {} twice", w.k));
                    }
                }
                HistoryEvent::WriteCommit { txn, cts, writes: map }
            }
        };
        Ok(Record {
            seq: self.seq,
            tick: self.tick,
            event,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> History {
        let mut h = History::new(Header::new(1, 2, "eiger-port-plus"));
        let t0 = TxnId::new(ClientId(1), 0);
        h.push(3, HistoryEvent::WriteCommit {
            txn: t0,
            cts: CommitTs::new(LamportTs(2), ClientId(1)),
            writes: [(Key(0), Value(7)), (Key(1), Value(8))].into(),
        });
        h.push(5, HistoryEvent::ViewExtend { cl: ClientId(1), gst: LamportTs(0) });
        h.push(9, HistoryEvent::ReadCommit {
            txn: TxnId::new(ClientId(1), 1),
            rts: LamportTs(0),
            reads: [(Key(0), (Value(7), t0))].into(),
        });
        h
    }

    #[test]
    fn jsonl_roundtrip() {
        let h = sample();
        let text = h.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().contains("\"format\":\"epp-history\""));
        assert_eq!(History::from_jsonl(&text).unwrap(), h);
    }

    #[test]
    fn reads_are_arrays_of_objects() {
        let text = sample().to_jsonl();
        let last = text.lines().last().unwrap();
        let v: serde_json::Value = serde_json::from_str(last).unwrap();
        assert_eq!(v["type"], "ReadCommit");
        assert_eq!(v["reads"][0]["k"], 0);
        assert_eq!(v["reads"][0]["writer"]["sn"], 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(History::from_jsonl(""), Err(HistoryError::Format(_))));
        let bad_header = "{\"format\":\"other\",\"version\":1,\"clients\":1,\"keys\":1,\"variant\":\"x\"}\n";
        assert!(matches!(History::from_jsonl(bad_header), Err(HistoryError::Format(_))));
        let mut text = sample().to_jsonl();
        text.push_str("{not json}\n");
        assert!(matches!(History::from_jsonl(&text), Err(HistoryError::Parse { line: 5, .. })));
        let dup = sample().to_jsonl().replace(
            "\"writes\":[{\"k\":0,\"v\":7},{\"k\":1,\"v\":8}]",
            "\"writes\":[{\"k\":0,\"v\":7},{\"k\":0,\"v\":8}]",
        );
        assert!(matches!(History::from_jsonl(&dup), Err(HistoryError::Parse { line: 2, .. })));
    }
}
