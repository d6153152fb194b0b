//! Deterministic discrete-event simulation of clients and partitions.
//!
//! [`World`] is the shared step function: it delivers one message, lets the
//! receiving state machine react and returns whatever that sends. [`run`]
//! drives it from a timed event queue, [`explore`] from every possible
//! delivery order and [`scripted_run`] from an explicit list of steps.

mod explore;
mod script;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientState, Outgoing};
use crate::error::ProtocolError;
use crate::history::{Header, History};
use crate::message::{Envelope, Message, MessageKind, Node};
use crate::server::{Mutation, ReadRule, ServerState};
use crate::types::{ClientId, LamportTs, ServerId};
use crate::workload::{client_rng, gen_workload, TxnScript, WorkloadSpec};

pub use explore::{all_shapes, explore, ExploreConfig, ExploreResult};
pub use script::{scripted_run, ScriptConfig, ScriptStep, Scripted};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("deadlock: no message in flight but {0}")]
    Deadlock(String),
    #[error("exploration exceeded {cap} states")]
    ExploreCap { cap: usize },
    #[error("script step {step}: {msg}")]
    Script { step: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Network delay in ticks, drawn once per message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delay {
    Fixed(u64),
    /// Inclusive bounds.
    Uniform { lo: u64, hi: u64 },
}

impl Delay {
    fn draw(self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Delay::Fixed(d) => d,
            Delay::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        }
    }

    pub fn parse(s: &str) -> Option<Delay> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("uniform:") {
            let (lo, hi) = rest.split_once('-')?;
            let (lo, hi) = (lo.trim().parse().ok()?, hi.trim().parse().ok()?);
            return (lo <= hi).then_some(Delay::Uniform { lo, hi });
        }
        s.strip_prefix("fixed:").unwrap_or(s).parse().ok().map(Delay::Fixed)
    }
}

impl std::fmt::Display for Delay {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Delay::Fixed(d) => write!(f, "fixed:{d}"),
            Delay::Uniform { lo, hi } => write!(f, "uniform:{lo}-{hi}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub clients: u32,
    pub partitions: u32,
    pub keys: u32,
    pub theta: f64,
    pub read_proportion: f64,
    pub read_keys: u32,
    pub write_keys: u32,
    pub txns_per_client: u32,
    pub delay: Delay,
    pub seed: u64,
    pub variant: ReadRule,
    pub mutation: Option<Mutation>,
    /// Extra reply delay per committed version a read scans.
    pub scan_cost: u64,
    /// Recompute every server invariant after each server step.
    pub deep_checks: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let w = WorkloadSpec::default();
        SimConfig {
            clients: w.clients,
            partitions: 8,
            keys: w.keys,
            theta: w.theta,
            read_proportion: w.read_proportion,
            read_keys: w.read_keys,
            write_keys: w.write_keys,
            txns_per_client: w.txns_per_client,
            delay: Delay::Uniform { lo: 10, hi: 50 },
            seed: 0,
            variant: ReadRule::EigerPortPlus,
            mutation: None,
            scan_cost: 1,
            deep_checks: false,
        }
    }
}

impl SimConfig {
    pub fn workload(&self) -> WorkloadSpec {
        WorkloadSpec {
            clients: self.clients,
            keys: self.keys,
            theta: self.theta,
            read_proportion: self.read_proportion,
            read_keys: self.read_keys,
            write_keys: self.write_keys,
            txns_per_client: self.txns_per_client,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.workload().validate().map_err(SimError::Config)?;
        if self.partitions == 0 {
            return Err(SimError::Config("partitions must be at least 1".into()));
        }
        if let Delay::Uniform { lo, hi } = self.delay {
            if lo > hi {
                return Err(SimError::Config(format!("delay bounds {lo} > {hi}")));
            }
        }
        Ok(())
    }
}

/// Counters backing the non-blocking, one-round, constant-metadata checks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NocStats {
    pub read_txns: u64,
    pub read_keys: u64,
    pub read_reqs: u64,
    pub read_replies: u64,
    /// Read requests the server answered in the step it received them.
    pub same_step_replies: u64,
    /// Read transactions that sent or received other than one request and
    /// one reply per key.
    pub extra_rounds: u64,
    /// Distinct timestamp-field counts observed per message kind.
    pub ts_fields: BTreeMap<String, Vec<usize>>,
}

impl NocStats {
    pub fn holds(&self) -> bool {
        self.extra_rounds == 0
            && self.read_reqs == self.read_keys
            && self.read_replies == self.read_keys
            && self.same_step_replies == self.read_reqs
            && self.ts_fields.values().all(|v| v.len() == 1)
    }

    fn observe(&mut self, m: &Message) {
        let n = m.timestamps().len();
        let e = self.ts_fields.entry(format!("{:?}", m.kind())).or_default();
        if !e.contains(&n) {
            e.push(n);
            e.sort_unstable();
        }
    }
}

const MAX_REPORTED: usize = 64;

/// Per-step invariant monitor. Each step compares only the states the step
/// touched, so the cost is independent of history length.
#[derive(Clone, Debug, Default, Hash)]
struct Monitor {
    violations: Vec<String>,
    count: u64,
    server_prev: Vec<(LamportTs, LamportTs)>,
    client_prev: Vec<(LamportTs, LamportTs)>,
    /// Requests sent and replies received by each client's open read.
    open_read: Vec<(u32, u32, u32)>,
    noc: NocStats,
}

impl Monitor {
    fn report(&mut self, msg: impl FnOnce() -> String) {
        self.count += 1;
        if self.violations.len() < MAX_REPORTED {
            self.violations.push(msg());
        }
    }
}

#[derive(Clone, Debug, Default, Hash)]
struct Stats {
    committed: u64,
    reads: u64,
    writes: u64,
    versions_scanned: u64,
    keys_served: u64,
    invoked_at: Vec<u64>,
    latencies: Vec<u64>,
}

/// Result of delivering one message.
pub struct Step {
    pub out: Vec<Envelope>,
    /// Committed versions the server touched, for read requests.
    pub scanned: Option<u32>,
}

/// Clients, partitions and the history they produce.
#[derive(Clone, Debug)]
pub struct World {
    clients: Vec<ClientState>,
    servers: Vec<ServerState>,
    scripts: Arc<Vec<Vec<TxnScript>>>,
    history: History,
    tick: u64,
    auto_invoke: bool,
    deep_checks: bool,
    monitor: Monitor,
    stats: Stats,
}

impl World {
    pub fn new(
        clients: u32,
        partitions: u32,
        keys: u32,
        variant: ReadRule,
        mutation: Option<Mutation>,
        scripts: Vec<Vec<TxnScript>>,
    ) -> World {
        assert!(clients >= 1 && partitions >= 1);
        World {
            clients: (1..=clients)
                .map(|c| ClientState::new(ClientId(c), partitions).with_mutation(mutation))
                .collect(),
            servers: (0..partitions)
                .map(|s| ServerState::new(ServerId(s), partitions, variant).with_mutation(mutation))
                .collect(),
            scripts: Arc::new(scripts),
            history: History::new(Header::new(clients, keys, variant.name())),
            tick: 0,
            auto_invoke: true,
            deep_checks: false,
            monitor: Monitor {
                server_prev: vec![(LamportTs::ZERO, LamportTs::ZERO); partitions as usize],
                client_prev: vec![(LamportTs::ZERO, LamportTs::ZERO); clients as usize],
                open_read: vec![(0, 0, 0); clients as usize],
                ..Monitor::default()
            },
            stats: Stats {
                invoked_at: vec![0; clients as usize],
                ..Stats::default()
            },
        }
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn client(&self, cl: ClientId) -> &ClientState {
        &self.clients[cl.0 as usize - 1]
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn noc(&self) -> &NocStats {
        &self.monitor.noc
    }

    /// Invariant violations seen so far (at most 64 are kept) and their total.
    pub fn violations(&self) -> (&[String], u64) {
        (&self.monitor.violations, self.monitor.count)
    }

    /// Every client ran its whole script and is idle.
    pub fn finished(&self) -> bool {
        self.clients
            .iter()
            .enumerate()
            .all(|(i, c)| c.is_idle() && c.sn() as usize >= self.scripts.get(i).map_or(0, |s| s.len()))
    }

    fn describe_clients(&self) -> String {
        let busy: Vec<String> = self
            .clients
            .iter()
            .filter(|c| !c.is_idle())
            .map(|c| format!("{} in {}", c.current_txn(), c.state().name()))
            .collect();
        if busy.is_empty() {
            "clients have unfinished scripts".into()
        } else {
            busy.join(", ")
        }
    }

    fn envelopes(cl: ClientId, out: Vec<Outgoing>) -> Vec<Envelope> {
        out.into_iter()
            .map(|(s, msg)| Envelope {
                from: Node::Client(cl),
                to: Node::Server(s),
                msg,
            })
            .collect()
    }

    /// Start the given transaction at an idle client.
    pub fn invoke(&mut self, cl: ClientId, txn: &TxnScript) -> Result<Vec<Envelope>, SimError> {
        let i = cl.0 as usize - 1;
        let out = match txn {
            TxnScript::Read(keys) => {
                let (ev, out) = self.clients[i].read_invoke(keys.clone())?;
                self.history.push(self.tick, ev);
                self.monitor.noc.read_txns += 1;
                self.monitor.noc.read_keys += keys.len() as u64;
                self.monitor.open_read[i] = (out.len() as u32, 0, keys.len() as u32);
                out
            }
            TxnScript::Write(kv) => self.clients[i].write_invoke(kv.clone())?,
        };
        self.stats.invoked_at[i] = self.tick;
        self.check_client(i);
        let out = World::envelopes(cl, out);
        for e in &out {
            self.monitor.noc.observe(&e.msg);
            if e.msg.kind() == MessageKind::ReadReq {
                self.monitor.noc.read_reqs += 1;
            }
        }
        Ok(out)
    }

    /// Start the next scripted transaction of every client (auto mode).
    pub fn start(&mut self) -> Result<Vec<Envelope>, SimError> {
        let mut out = Vec::new();
        for c in 1..=self.clients.len() as u32 {
            out.extend(self.invoke_next(ClientId(c))?);
        }
        Ok(out)
    }

    fn invoke_next(&mut self, cl: ClientId) -> Result<Vec<Envelope>, SimError> {
        let i = cl.0 as usize - 1;
        let sn = self.clients[i].sn() as usize;
        let scripts = Arc::clone(&self.scripts);
        match scripts.get(i).and_then(|s| s.get(sn)) {
            Some(t) => self.invoke(cl, t),
            None => Ok(Vec::new()),
        }
    }

    fn finish_txn(&mut self, i: usize, read: bool) {
        self.stats.committed += 1;
        if read {
            self.stats.reads += 1;
        } else {
            self.stats.writes += 1;
        }
        self.stats.latencies.push(self.tick - self.stats.invoked_at[i]);
    }

    /// Deliver one message and run the receiver's reaction to completion.
    pub fn deliver(&mut self, env: Envelope) -> Result<Step, SimError> {
        match env.to {
            Node::Server(s) => {
                let (reply, outcome) = self.servers[s.0 as usize].handle(&env.msg)?;
                self.check_server(s.0 as usize);
                if let Some(o) = outcome {
                    self.stats.versions_scanned += o.versions_scanned as u64;
                    self.stats.keys_served += 1;
                    self.monitor.noc.same_step_replies += 1;
                    self.monitor.noc.read_replies += 1;
                }
                self.monitor.noc.observe(&reply);
                Ok(Step {
                    scanned: outcome.map(|o| o.versions_scanned),
                    out: vec![Envelope {
                        from: env.to,
                        to: env.from,
                        msg: reply,
                    }],
                })
            }
            Node::Client(cl) => {
                let i = cl.0 as usize - 1;
                let mut out = Vec::new();
                let mut done = false;
                match env.msg {
                    Message::ReadReply { .. } => {
                        self.clients[i].cl_read(&env.msg)?;
                        self.monitor.open_read[i].1 += 1;
                        if self.clients[i].read_complete() {
                            let ev = self.clients[i].read_done()?;
                            self.history.push(self.tick, ev);
                            let (reqs, reps, keys) = self.monitor.open_read[i];
                            if reqs != keys || reps != keys {
                                self.monitor.noc.extra_rounds += 1;
                            }
                            self.finish_txn(i, true);
                            done = true;
                        }
                    }
                    Message::PrepReply { .. } => {
                        self.clients[i].cl_prepared(&env.msg)?;
                        if self.clients[i].write_commit_enabled() {
                            let (_, reqs, ev) = self.clients[i].write_commit()?;
                            self.history.push(self.tick, ev);
                            out = World::envelopes(cl, reqs);
                            for e in &out {
                                self.monitor.noc.observe(&e.msg);
                            }
                        }
                    }
                    Message::CommitReply { .. } => {
                        if self.clients[i].write_done(&env.msg)? {
                            self.finish_txn(i, false);
                            done = true;
                        }
                    }
                    _ => return Err(SimError::Protocol(ProtocolError::Usage("client received a request"))),
                }
                self.check_client(i);
                if done && self.auto_invoke {
                    out.extend(self.invoke_next(cl)?);
                }
                Ok(Step { out, scanned: None })
            }
        }
    }

    fn check_server(&mut self, s: usize) {
        let sv = &self.servers[s];
        let (clock, lst) = (sv.clock(), sv.lst());
        let (pc, pl) = self.monitor.server_prev[s];
        if lst > clock {
            self.monitor.report(|| format!("S{s}: lst {lst} > clock {clock}"));
        }
        if clock < pc || lst < pl {
            self.monitor
                .report(|| format!("S{s}: clock/lst went back from {pc}/{pl} to {clock}/{lst}"));
        }
        self.monitor.server_prev[s] = (clock, lst);
        if self.deep_checks {
            if let Err(e) = self.servers[s].check_invariants() {
                self.monitor.report(|| e);
            }
        }
    }

    /// Chain gst <= lst_map[p] <= lst(p) <= clock(p) plus monotonicity of the
    /// client's clock and gst. Both ends of every link are monotone and the
    /// smaller one is a past value of the larger, so the chain holds at every
    /// step and not only once messages have drained.
    fn check_client(&mut self, i: usize) {
        let c = &self.clients[i];
        let (gst, clock) = (c.gst(), c.clock());
        let (pg, pc) = self.monitor.client_prev[i];
        let mut bad = Vec::new();
        if gst < pg || clock < pc {
            bad.push(format!("{}: gst/clock went back from {pg}/{pc} to {gst}/{clock}", c.id()));
        }
        for (p, &l) in c.lst_map().iter().enumerate() {
            let sv = &self.servers[p];
            if !(gst <= l && l <= sv.lst() && sv.lst() <= sv.clock()) {
                bad.push(format!(
                    "{}: chain gst {gst} <= lst_map[S{p}] {l} <= lst {} <= clock {} broken",
                    c.id(),
                    sv.lst(),
                    sv.clock()
                ));
            }
        }
        self.monitor.client_prev[i] = (gst, clock);
        for b in bad {
            self.monitor.report(|| b);
        }
    }

    /// Run every server's full invariant recomputation.
    pub fn check_servers(&mut self) {
        for s in 0..self.servers.len() {
            if let Err(e) = self.servers[s].check_invariants() {
                self.monitor.report(|| e);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub committed: u64,
    pub reads: u64,
    pub writes: u64,
    pub ticks: u64,
    /// Committed transactions per 1000 ticks.
    pub throughput: f64,
    pub latency_mean: f64,
    pub latency_p50: u64,
    pub latency_p99: u64,
    /// Mean committed versions touched per key read.
    pub versions_per_read: f64,
    pub noc: NocStats,
    pub invariant_violations: u64,
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Metrics {
    fn of(w: &World, ticks: u64) -> Metrics {
        let s = &w.stats;
        let mut lat = s.latencies.clone();
        lat.sort_unstable();
        let mean = if lat.is_empty() {
            0.0
        } else {
            lat.iter().sum::<u64>() as f64 / lat.len() as f64
        };
        Metrics {
            committed: s.committed,
            reads: s.reads,
            writes: s.writes,
            ticks,
            throughput: if ticks == 0 { 0.0 } else { s.committed as f64 * 1000.0 / ticks as f64 },
            latency_mean: mean,
            latency_p50: percentile(&lat, 0.50),
            latency_p99: percentile(&lat, 0.99),
            versions_per_read: if s.keys_served == 0 {
                0.0
            } else {
                s.versions_scanned as f64 / s.keys_served as f64
            },
            noc: w.monitor.noc.clone(),
            invariant_violations: w.monitor.count,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub history: History,
    pub metrics: Metrics,
    /// First invariant violations reported by the monitor.
    pub violations: Vec<String>,
}

struct Timed {
    tick: u64,
    seq: u64,
    env: Envelope,
    reply_delay: u64,
}

impl PartialEq for Timed {
    fn eq(&self, o: &Self) -> bool {
        (self.tick, self.seq) == (o.tick, o.seq)
    }
}
impl Eq for Timed {}
impl PartialOrd for Timed {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Timed {
    fn cmp(&self, o: &Self) -> Ordering {
        (o.tick, o.seq).cmp(&(self.tick, self.seq))
    }
}

/// Simulate `cfg`'s workload to completion.
///
/// Every client draws the delays of its requests and of their replies from
/// its own seeded stream at send time, so the sequence of delays a client
/// sees does not depend on how other clients' events interleave.
pub fn run(cfg: &SimConfig) -> Result<Outcome, SimError> {
    cfg.validate()?;
    let mut w = World::new(
        cfg.clients,
        cfg.partitions,
        cfg.keys,
        cfg.variant,
        cfg.mutation,
        gen_workload(&cfg.workload()),
    );
    w.deep_checks = cfg.deep_checks;
    let mut rngs: Vec<ChaCha8Rng> = (1..=cfg.clients)
        .map(|c| client_rng(cfg.seed, ClientId(c), 1))
        .collect();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut schedule = |heap: &mut BinaryHeap<Timed>, tick: u64, out: Vec<Envelope>, reply: Option<u64>| {
        for env in out {
            let (d, reply_delay) = match (reply, env.from) {
                (Some(d), _) => (d, 0),
                (None, Node::Client(c)) => {
                    let r = &mut rngs[c.0 as usize - 1];
                    (cfg.delay.draw(r), cfg.delay.draw(r))
                }
                (None, Node::Server(_)) => unreachable!("server replies carry their delay"),
            };
            heap.push(Timed {
                tick: tick + d,
                seq,
                env,
                reply_delay,
            });
            seq += 1;
        }
    };
    let out = w.start()?;
    schedule(&mut heap, 0, out, None);
    let mut now = 0;
    while let Some(t) = heap.pop() {
        now = t.tick;
        w.set_tick(now);
        let to_server = matches!(t.env.to, Node::Server(_));
        let step = w.deliver(t.env)?;
        if to_server {
            let d = t.reply_delay + cfg.scan_cost * step.scanned.unwrap_or(0) as u64;
            schedule(&mut heap, now, step.out, Some(d));
        } else {
            schedule(&mut heap, now, step.out, None);
        }
    }
    if !w.finished() {
        return Err(SimError::Deadlock(w.describe_clients()));
    }
    w.check_servers();
    let metrics = Metrics::of(&w, now);
    let violations = w.monitor.violations.clone();
    Ok(Outcome {
        history: w.history,
        metrics,
        violations,
    })
}

#[cfg(test)]
mod tests;
