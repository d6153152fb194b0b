//! The two-server divergence scenario: Alice and Bob read X and Y while
//! conflicting writes to Y are in flight. Under the plus read rule both end
//! up agreeing with the servers' version order; under the Eiger-PORT rule
//! Alice reads Y3 and later Y1 while Bob reads Y1 and later Y3.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::checker::{check_convergence, ingest, Verdict};
use crate::history::{History, HistoryEvent};
use crate::message::MessageKind;
use crate::server::ReadRule;
use crate::sim::{scripted_run, ScriptConfig, ScriptStep, SimError};
use crate::types::{ClientId, Key, TxnId, Value};
use crate::workload::TxnScript;

pub const ALICE: ClientId = ClientId(1);
pub const BOB: ClientId = ClientId(2);
const OTHER1: ClientId = ClientId(3);
const OTHER2: ClientId = ClientId(4);
pub const X: Key = Key(0);
pub const Y: Key = Key(1);

pub fn client_name(cl: ClientId) -> String {
    match cl.0 {
        1 => "Alice".into(),
        2 => "Bob".into(),
        n => format!("O{}", n - 2),
    }
}

fn key_name(k: Key) -> String {
    match k.0 {
        0 => "X".into(),
        1 => "Y".into(),
        n => format!("k{n}"),
    }
}

struct Script {
    steps: Vec<ScriptStep>,
    sn: BTreeMap<ClientId, u32>,
}

impl Script {
    fn next_sn(&mut self, cl: ClientId) -> u32 {
        let e = self.sn.entry(cl).or_insert(0);
        *e += 1;
        *e - 1
    }

    fn deliver(&mut self, cl: ClientId, kind: MessageKind, k: Key) {
        self.steps.push(ScriptStep::Deliver { cl, kind, key: k });
    }

    /// Invoke a write and run its prepare phase; the client then sends its
    /// commit requests, which stay in flight.
    fn prepare(&mut self, cl: ClientId, keys: &[Key]) {
        let sn = self.next_sn(cl);
        let kv = keys.iter().map(|&k| (k, Value::provenance(cl, sn, k))).collect();
        self.steps.push(ScriptStep::Invoke {
            cl,
            txn: TxnScript::Write(kv),
        });
        for &k in keys {
            self.deliver(cl, MessageKind::PrepReq, k);
            self.deliver(cl, MessageKind::PrepReply, k);
        }
    }

    fn commit(&mut self, cl: ClientId, k: Key) {
        self.deliver(cl, MessageKind::CommitReq, k);
        self.deliver(cl, MessageKind::CommitReply, k);
    }

    fn write(&mut self, cl: ClientId, keys: &[Key]) {
        self.prepare(cl, keys);
        for &k in keys {
            self.commit(cl, k);
        }
    }

    fn read(&mut self, cl: ClientId, keys: &[Key]) {
        self.next_sn(cl);
        self.steps.push(ScriptStep::Invoke {
            cl,
            txn: TxnScript::Read(keys.iter().copied().collect::<BTreeSet<_>>()),
        });
        for &k in keys {
            self.deliver(cl, MessageKind::ReadReq, k);
            self.deliver(cl, MessageKind::ReadReply, k);
        }
    }
}

/// The step schedule. X lives on the first server, Y on the second.
pub fn divergence_script() -> Vec<ScriptStep> {
    let mut s = Script {
        steps: Vec::new(),
        sn: BTreeMap::new(),
    };
    // X1 (Alice) prepared; Bob's X2, Y1 prepared, X2 committed, Y1 held
    s.prepare(ALICE, &[X]);
    s.prepare(BOB, &[X, Y]);
    s.commit(BOB, X);
    s.commit(ALICE, X);
    s.write(ALICE, &[Y]);
    s.write(ALICE, &[Y]);
    s.read(ALICE, &[X, Y]);
    // X3 and X4 by other clients, Y4 by Alice, all conflicting with Y1
    s.prepare(OTHER1, &[X]);
    s.prepare(OTHER2, &[X]);
    s.commit(OTHER1, X);
    s.read(OTHER1, &[Y]);
    s.prepare(ALICE, &[Y]);
    s.commit(BOB, Y);
    s.read(BOB, &[X, Y]);
    s.commit(ALICE, Y);
    s.commit(OTHER2, X);
    s.write(ALICE, &[X]);
    s.read(ALICE, &[X, Y]);
    s.read(BOB, &[X, Y]);
    s.steps
}

/// Versions returned by one read-only transaction, labelled by their
/// position in the key's commit order (`X1` is the first non-initial one).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelledRead {
    pub txn: TxnId,
    pub versions: Vec<String>,
}

impl fmt::Display for LabelledRead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.versions.join(", "))
    }
}

#[derive(Clone, Debug)]
pub struct Demo {
    pub variant: ReadRule,
    pub history: History,
    pub reads: BTreeMap<ClientId, Vec<LabelledRead>>,
    /// Each key's versions in commit timestamp order.
    pub order: BTreeMap<Key, Vec<String>>,
    pub convergence: Verdict,
}

impl Demo {
    /// Final read of a client.
    pub fn last_read(&self, cl: ClientId) -> Option<&LabelledRead> {
        self.reads.get(&cl).and_then(|r| r.last())
    }

    /// Convergence witness as `(client, earlier version, later version)`.
    pub fn witness(&self) -> Option<(String, String, String)> {
        let d = self.convergence.violation()?.divergence.as_ref()?;
        let name = key_name(d.key);
        let order = ingest(&self.history).ok()?;
        let label = |t: TxnId| format!("{name}{}", order.position(d.key, t).unwrap_or(0));
        Some((client_name(d.cl), label(d.versions[0]), label(d.versions[1])))
    }

    pub fn order_of(&self, k: Key) -> String {
        self.order.get(&k).map(|v| v.join(" < ")).unwrap_or_default()
    }

    fn describe_witness(&self) -> Option<String> {
        let (cl, a, b) = self.witness()?;
        let k = self.convergence.violation()?.divergence.as_ref()?.key;
        Some(format!("{cl}:({a} then {b}) vs cts order {}", self.order_of(k)))
    }
}

impl fmt::Display for Demo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant {}", self.variant.name())?;
        for cl in [ALICE, BOB] {
            if let Some(r) = self.last_read(cl) {
                writeln!(f, "  {:<5} reads {r}", client_name(cl))?;
            }
        }
        match self.describe_witness() {
            Some(w) => write!(f, "  convergence FAIL: {w}"),
            None if self.convergence.is_pass() => write!(f, "  convergence pass"),
            None => write!(f, "  convergence FAIL"),
        }
    }
}

/// Replay the scenario under `variant` and label what everyone read.
pub fn demo_divergence(variant: ReadRule) -> Result<Demo, SimError> {
    let cfg = ScriptConfig {
        clients: 4,
        partitions: 2,
        keys: 2,
        variant,
        mutation: None,
    };
    let s = scripted_run(&cfg, &divergence_script())?;
    let (violations, _) = s.world.violations();
    if let Some(v) = violations.first() {
        return Err(SimError::Script {
            step: 0,
            msg: format!("invariant violated during the scenario: {v}"),
        });
    }
    let history = s.world.into_history();
    let rel = ingest(&history).map_err(|e| SimError::Config(e.to_string()))?;
    let label = |k: Key, w: TxnId| format!("{}{}", key_name(k), rel.position(k, w).unwrap_or(0));
    let mut reads: BTreeMap<ClientId, Vec<LabelledRead>> = BTreeMap::new();
    for ev in history.events() {
        if let HistoryEvent::ReadCommit { txn, reads: r, .. } = ev {
            reads.entry(txn.cl).or_default().push(LabelledRead {
                txn: *txn,
                versions: r.iter().map(|(&k, &(_, w))| label(k, w)).collect(),
            });
        }
    }
    let order = rel
        .cts_order
        .iter()
        .map(|(&k, o)| (k, (1..o.len()).map(|i| format!("{}{i}", key_name(k))).collect()))
        .collect();
    let convergence = check_convergence(&history).map_err(|e| SimError::Config(e.to_string()))?;
    Ok(Demo {
        variant,
        history,
        reads,
        order,
        convergence,
    })
}
