//! Python bindings: simulate, check, explore and replay the divergence
//! scenario from Python.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use epp_core::checker::{check_each, check_tccv, Check, Verdict};
use epp_core::demo::{demo_divergence as run_demo, ALICE, BOB};
use epp_core::sim::{all_shapes, explore as run_explore, run as run_sim, ExploreConfig, Metrics as CoreMetrics, SimConfig};
use epp_core::{Mutation, ReadRule, Zipf};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn variant(s: &str) -> PyResult<ReadRule> {
    ReadRule::parse(s).ok_or_else(|| value_err(format!("unknown variant {s:?}")))
}

/// A recorded execution, serialised as JSON lines.
#[pyclass(module = "epp", skip_from_py_object)]
#[derive(Clone)]
struct History {
    inner: epp_core::History,
}

#[pymethods]
impl History {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        epp_core::History::from_jsonl(text).map(|inner| History { inner }).map_err(value_err)
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `{check name: None on pass, else the violation text}`.
    fn check(&self) -> PyResult<HashMap<String, Option<String>>> {
        verdicts(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("History({} events)", self.inner.len())
    }
}

fn verdicts(h: &epp_core::History) -> PyResult<HashMap<String, Option<String>>> {
    let vs = check_each(h).map_err(value_err)?;
    Ok([Check::Tccv, Check::Convergence, Check::Sessions]
        .iter()
        .zip(vs.iter())
        .map(|(c, v): (&Check, &Verdict)| (c.name().to_string(), v.violation().map(|x| x.to_string())))
        .collect())
}

#[pyclass(module = "epp", get_all, skip_from_py_object)]
#[derive(Clone)]
struct Metrics {
    committed: u64,
    reads: u64,
    writes: u64,
    ticks: u64,
    throughput: f64,
    latency_mean: f64,
    latency_p50: u64,
    latency_p99: u64,
    versions_per_read: f64,
    noc_holds: bool,
    invariant_violations: u64,
}

impl From<&CoreMetrics> for Metrics {
    fn from(m: &CoreMetrics) -> Self {
        Metrics {
            committed: m.committed,
            reads: m.reads,
            writes: m.writes,
            ticks: m.ticks,
            throughput: m.throughput,
            latency_mean: m.latency_mean,
            latency_p50: m.latency_p50,
            latency_p99: m.latency_p99,
            versions_per_read: m.versions_per_read,
            noc_holds: m.noc.holds(),
            invariant_violations: m.invariant_violations,
        }
    }
}

#[pymethods]
impl Metrics {
    fn __repr__(&self) -> String {
        format!(
            "Metrics(committed={}, throughput={:.3}, latency_p50={}, versions_per_read={:.4})",
            self.committed, self.throughput, self.latency_p50, self.versions_per_read
        )
    }
}

/// Simulate one workload. `settings` takes the same keys as a config file.
#[pyfunction]
#[pyo3(signature = (seed=0, variant="eiger-port-plus", settings=None))]
fn run(
    py: Python<'_>,
    seed: u64,
    variant: &str,
    settings: Option<HashMap<String, String>>,
) -> PyResult<(History, Metrics, Vec<String>)> {
    let mut cfg = SimConfig {
        seed,
        variant: self::variant(variant)?,
        ..SimConfig::default()
    };
    for (k, v) in settings.unwrap_or_default() {
        cfg.set(&k, &v).map_err(value_err)?;
    }
    cfg.validate().map_err(value_err)?;
    let o = py.detach(|| run_sim(&cfg)).map_err(runtime_err)?;
    Ok((History { inner: o.history }, Metrics::from(&o.metrics), o.violations))
}

/// Check a JSON-lines history.
#[pyfunction]
fn check(jsonl: &str) -> PyResult<HashMap<String, Option<String>>> {
    let h = epp_core::History::from_jsonl(jsonl).map_err(value_err)?;
    verdicts(&h)
}

#[pyclass(module = "epp", get_all)]
struct Demo {
    variant: String,
    alice: String,
    bob: String,
    converges: bool,
    /// `(client, earlier version, later version)`.
    witness: Option<(String, String, String)>,
    history: History,
}

#[pymethods]
impl Demo {
    fn __str__(&self) -> String {
        format!("{} Alice {} Bob {} converges={}", self.variant, self.alice, self.bob, self.converges)
    }
}

/// Replay the two-client divergence scenario under one read rule.
#[pyfunction]
#[pyo3(signature = (variant="eiger-port-read-rule"))]
fn demo_divergence(variant: &str) -> PyResult<Demo> {
    let d = run_demo(self::variant(variant)?).map_err(runtime_err)?;
    let last = |cl| d.last_read(cl).map(|r| r.to_string()).unwrap_or_default();
    Ok(Demo {
        variant: d.variant.name().to_string(),
        alice: last(ALICE),
        bob: last(BOB),
        converges: d.convergence.is_pass(),
        witness: d.witness(),
        history: History { inner: d.history.clone() },
    })
}

/// Explore every delivery order of every transaction shape for a small
/// configuration. Returns counts plus the number of histories failing TCCv.
#[pyfunction]
#[pyo3(signature = (clients=2, keys=2, txns=1, partitions=2, variant="eiger-port-plus", mutation=None))]
fn explore(
    py: Python<'_>,
    clients: u32,
    keys: u32,
    txns: u32,
    partitions: u32,
    variant: &str,
    mutation: Option<&str>,
) -> PyResult<HashMap<String, u64>> {
    let mutation = match mutation {
        None => None,
        Some(m) => Some(Mutation::parse(m).ok_or_else(|| value_err(format!("unknown mutation {m:?}")))?),
    };
    let cfg = ExploreConfig {
        clients,
        partitions,
        keys,
        variant: self::variant(variant)?,
        mutation,
        ..ExploreConfig::default()
    };
    py.detach(|| {
        let mut out: HashMap<String, u64> = HashMap::new();
        for w in all_shapes(clients, keys, txns) {
            let r = run_explore(&cfg, w).map_err(runtime_err)?;
            *out.entry("states".into()).or_default() += r.states as u64;
            *out.entry("schedules".into()).or_default() += r.schedules;
            *out.entry("histories".into()).or_default() += r.histories.len() as u64;
            *out.entry("invariant_violations".into()).or_default() += r.violations.len() as u64;
            let failing = r
                .histories
                .iter()
                .filter(|h| check_tccv(h).map(|v| !v.is_pass()).unwrap_or(true))
                .count();
            *out.entry("failing".into()).or_default() += failing as u64;
        }
        Ok(out)
    })
}

/// Probability of each rank 1..=n.
#[pyfunction]
fn zipf_pmf(n: u32, theta: f64) -> PyResult<Vec<f64>> {
    if n == 0 || !(theta >= 0.0 && theta.is_finite()) {
        return Err(value_err("need n >= 1 and a finite theta >= 0"));
    }
    let z = Zipf::new(n, theta);
    Ok((1..=n).map(|i| z.pmf(i)).collect())
}

/// `count` deterministic samples in 1..=n.
#[pyfunction]
fn zipf_sample(n: u32, theta: f64, seed: u64, count: usize) -> PyResult<Vec<u32>> {
    use rand::SeedableRng;
    if n == 0 || !(theta >= 0.0 && theta.is_finite()) {
        return Err(value_err("need n >= 1 and a finite theta >= 0"));
    }
    let z = Zipf::new(n, theta);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| z.sample(&mut rng)).collect())
}

#[pymodule]
fn epp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<History>()?;
    m.add_class::<Metrics>()?;
    m.add_class::<Demo>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(demo_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(explore, m)?)?;
    m.add_function(wrap_pyfunction!(zipf_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(zipf_sample, m)?)?;
    m.add("VARIANTS", ["eiger-port-plus", "eiger-port-read-rule"])?;
    Ok(())
}
