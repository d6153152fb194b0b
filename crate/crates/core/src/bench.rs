//! Side-by-side simulation of the read rules on identical workloads.

use std::fmt;

use serde::Serialize;

use crate::server::ReadRule;
use crate::sim::{run, Metrics, SimConfig, SimError};

#[derive(Clone, Debug, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    /// One entry per variant, in the order the variants were given.
    pub metrics: Vec<Metrics>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub variant: String,
    pub committed: u64,
    pub throughput: f64,
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p99: f64,
    pub versions_per_read: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchTable {
    pub variants: Vec<ReadRule>,
    /// Means over seeds.
    pub rows: Vec<BenchRow>,
    pub seeds: Vec<SeedResult>,
}

impl BenchTable {
    /// Fraction of seeds where `pick` of variant `a` is at least that of `b`.
    pub fn fraction_at_least(&self, a: usize, b: usize, pick: impl Fn(&Metrics) -> f64) -> f64 {
        if self.seeds.is_empty() {
            return 0.0;
        }
        let n = self.seeds.iter().filter(|s| pick(&s.metrics[a]) >= pick(&s.metrics[b])).count();
        n as f64 / self.seeds.len() as f64
    }
}

impl fmt::Display for BenchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>10} {:>12} {:>10} {:>8} {:>8} {:>14}",
            "variant", "committed", "txns/ktick", "lat mean", "p50", "p99", "versions/read"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:>10} {:>12.3} {:>10.2} {:>8.1} {:>8.1} {:>14.4}",
                r.variant, r.committed, r.throughput, r.latency_mean, r.latency_p50, r.latency_p99, r.versions_per_read
            )?;
        }
        write!(f, "seeds: {}", self.seeds.len())
    }
}

/// Run every variant on every seed. The workload and each client's delay
/// stream depend only on the seed, so the variants see identical scripts.
pub fn bench_compare(base: &SimConfig, variants: &[ReadRule], seeds: &[u64]) -> Result<BenchTable, SimError> {
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut metrics = Vec::with_capacity(variants.len());
        for &variant in variants {
            let cfg = SimConfig {
                seed,
                variant,
                ..base.clone()
            };
            metrics.push(run(&cfg)?.metrics);
        }
        results.push(SeedResult { seed, metrics });
    }
    let n = results.len().max(1) as f64;
    let mean = |i: usize, f: &dyn Fn(&Metrics) -> f64| results.iter().map(|s| f(&s.metrics[i])).sum::<f64>() / n;
    let rows = variants
        .iter()
        .enumerate()
        .map(|(i, v)| BenchRow {
            variant: v.name().to_string(),
            committed: results.iter().map(|s| s.metrics[i].committed).sum(),
            throughput: mean(i, &|m| m.throughput),
            latency_mean: mean(i, &|m| m.latency_mean),
            latency_p50: mean(i, &|m| m.latency_p50 as f64),
            latency_p99: mean(i, &|m| m.latency_p99 as f64),
            versions_per_read: mean(i, &|m| m.versions_per_read),
        })
        .collect();
    Ok(BenchTable {
        variants: variants.to_vec(),
        rows,
        seeds: results,
    })
}
