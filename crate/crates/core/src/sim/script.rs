//! Hand-scheduled runs: the caller decides when each transaction starts and
//! which message is delivered next.

use super::{SimError, World};
use crate::message::{Envelope, MessageKind, Node};
use crate::server::{Mutation, ReadRule};
use crate::types::{ClientId, Key};
use crate::workload::TxnScript;

#[derive(Clone, Debug)]
pub struct ScriptConfig {
    pub clients: u32,
    pub partitions: u32,
    pub keys: u32,
    pub variant: ReadRule,
    pub mutation: Option<Mutation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptStep {
    Invoke { cl: ClientId, txn: TxnScript },
    /// Deliver the in-flight message of this kind for `key` belonging to
    /// `cl`'s current transaction.
    Deliver { cl: ClientId, kind: MessageKind, key: Key },
}

impl ScriptStep {
    pub fn deliver(cl: u32, kind: MessageKind, key: u32) -> ScriptStep {
        ScriptStep::Deliver {
            cl: ClientId(cl),
            kind,
            key: Key(key),
        }
    }
}

pub struct Scripted {
    pub world: World,
    pub in_flight: Vec<Envelope>,
}

fn owner(e: &Envelope) -> ClientId {
    match (e.from, e.to) {
        (Node::Client(c), _) | (_, Node::Client(c)) => c,
        _ => unreachable!("every message has a client end"),
    }
}

/// Apply `steps` in order. Client commits and read completions fire as soon
/// as they are enabled; starting a transaction or delivering a message that
/// is not possible at that point is an error.
pub fn scripted_run(cfg: &ScriptConfig, steps: &[ScriptStep]) -> Result<Scripted, SimError> {
    let mut world = World::new(cfg.clients, cfg.partitions, cfg.keys, cfg.variant, cfg.mutation, Vec::new());
    world.auto_invoke = false;
    world.deep_checks = true;
    let mut in_flight: Vec<Envelope> = Vec::new();
    for (n, step) in steps.iter().enumerate() {
        world.set_tick(n as u64);
        let err = |msg: String| SimError::Script { step: n, msg };
        match step {
            ScriptStep::Invoke { cl, txn } => {
                if cl.0 == 0 || cl.0 > cfg.clients {
                    return Err(err(format!("no client {cl}")));
                }
                let out = world.invoke(*cl, txn).map_err(|e| err(e.to_string()))?;
                in_flight.extend(out);
            }
            ScriptStep::Deliver { cl, kind, key } => {
                let Some(i) = in_flight
                    .iter()
                    .position(|e| owner(e) == *cl && e.msg.kind() == *kind && e.msg.key() == *key)
                else {
                    return Err(err(format!("no {kind:?} for {key} of {cl} in flight")));
                };
                let env = in_flight.remove(i);
                let out = world.deliver(env).map_err(|e| err(e.to_string()))?;
                in_flight.extend(out.out);
            }
        }
    }
    Ok(Scripted { world, in_flight })
}
