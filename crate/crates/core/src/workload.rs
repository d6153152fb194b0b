//! Zipfian key choice and per-client transaction scripts.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{ClientId, Key, Value};

/// Zipf distribution over ranks `1..=n` sampled by inverting a precomputed
/// CDF.
#[derive(Clone, Debug)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(n: u32, theta: f64) -> Self {
        assert!(n >= 1, "empty keyspace");
        assert!(theta >= 0.0 && theta.is_finite(), "skew must be a finite non-negative number");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for i in 1..=n {
            acc += 1.0 / (i as f64).powf(theta);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        *cdf.last_mut().expect("n >= 1") = 1.0;
        Zipf { cdf }
    }

    pub fn n(&self) -> u32 {
        self.cdf.len() as u32
    }

    /// Probability of rank `i` (1-based).
    pub fn pmf(&self, i: u32) -> f64 {
        let i = i as usize;
        self.cdf[i - 1] - if i >= 2 { self.cdf[i - 2] } else { 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) as u32 + 1
    }
}

/// One rank in `1..=n` drawn with probability proportional to `1 / i^theta`.
pub fn zipf_sample<R: Rng + ?Sized>(n: u32, theta: f64, rng: &mut R) -> u32 {
    Zipf::new(n, theta).sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub clients: u32,
    pub keys: u32,
    pub theta: f64,
    pub read_proportion: f64,
    pub read_keys: u32,
    pub write_keys: u32,
    pub txns_per_client: u32,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            clients: 8,
            keys: 10_000,
            theta: 0.8,
            read_proportion: 0.9,
            read_keys: 4,
            write_keys: 2,
            txns_per_client: 1000,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.clients == 0 || self.keys == 0 {
            return Err("clients and keys must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.read_proportion) {
            return Err(format!("read_proportion {} outside [0, 1]", self.read_proportion));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(format!("theta {} must be non-negative", self.theta));
        }
        for (name, n) in [("read_keys", self.read_keys), ("write_keys", self.write_keys)] {
            if n == 0 || n > self.keys {
                return Err(format!("{name} = {n} must be in 1..={}", self.keys));
            }
        }
        if self.keys >= 1 << 24 || self.txns_per_client >= 1 << 24 {
            return Err("keys and txns_per_client must stay below 2^24".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TxnScript {
    Read(BTreeSet<Key>),
    Write(BTreeMap<Key, Value>),
}

/// `count` distinct keys: Zipf draws with rejection of repeats, topped up
/// with the lowest unused keys if the draws keep colliding.
fn distinct_keys(z: &Zipf, count: u32, rng: &mut ChaCha8Rng) -> BTreeSet<Key> {
    let mut ks = BTreeSet::new();
    let mut attempts = 0;
    while (ks.len() as u32) < count && attempts < 64 * count {
        ks.insert(Key(z.sample(rng) - 1));
        attempts += 1;
    }
    let mut next = 0;
    while (ks.len() as u32) < count {
        ks.insert(Key(next));
        next += 1;
    }
    ks
}

pub(crate) fn client_rng(seed: u64, cl: ClientId, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream << 32 | cl.0 as u64);
    rng
}

/// Transaction scripts for clients `1..=clients`, index 0 holding client 1.
pub fn gen_workload(spec: &WorkloadSpec) -> Vec<Vec<TxnScript>> {
    let z = Zipf::new(spec.keys, spec.theta);
    (1..=spec.clients)
        .map(|c| {
            let cl = ClientId(c);
            let mut rng = client_rng(spec.seed, cl, 0);
            (0..spec.txns_per_client)
                .map(|sn| {
                    if rng.gen_bool(spec.read_proportion) {
                        TxnScript::Read(distinct_keys(&z, spec.read_keys, &mut rng))
                    } else {
                        let ks = distinct_keys(&z, spec.write_keys, &mut rng);
                        TxnScript::Write(ks.into_iter().map(|k| (k, Value::provenance(cl, sn, k))).collect())
                    }
                })
                .collect()
        })
        .collect()
}
