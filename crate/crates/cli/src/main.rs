use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use epp_core::bench::bench_compare;
use epp_core::checker::{check_each, check_tccv, minimize_witness, Check, Verdict};
use epp_core::config::parse_config;
use epp_core::demo::demo_divergence;
use epp_core::sim::{all_shapes, explore, run, ExploreConfig, Metrics, SimConfig};
use epp_core::{gen_workload, History, HistoryError, Mutation, ReadRule, WorkloadSpec};

const EXIT_VIOLATION: u8 = 2;
const EXIT_MALFORMED: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "epp", version, about = "Simulate, explore and check Eiger-PORT+ histories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Read rule: eiger-port-plus or eiger-port-read-rule.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<ReadRule>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args, Clone, Default)]
struct SimArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config field, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a workload and write its history.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Run this many consecutive seeds.
        #[arg(long, default_value_t = 1)]
        repeat: u64,
    },
    /// Check history files (exit 0 pass, 2 violation, 3 malformed).
    Check {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Shrink the first TCCv violation and write it to --out.
        #[arg(long)]
        minimize: bool,
    },
    /// Enumerate every delivery order of a small workload.
    Explore {
        #[arg(long, default_value_t = 2)]
        clients: u32,
        #[arg(long, default_value_t = 2)]
        keys: u32,
        #[arg(long, default_value_t = 2)]
        partitions: u32,
        #[arg(long, default_value_t = 2)]
        txns: u32,
        /// Explore every assignment of transaction shapes instead of one
        /// generated workload.
        #[arg(long)]
        all_shapes: bool,
        #[arg(long, value_parser = parse_mutation)]
        mutation: Option<Mutation>,
        #[arg(long, default_value_t = 5_000_000)]
        cap: usize,
        /// Walk every schedule instead of pruning revisited states.
        #[arg(long)]
        no_prune: bool,
    },
    /// Replay the two-client divergence scenario under both read rules.
    DemoDivergence,
    /// Compare the read rules on identical workloads.
    Bench {
        #[command(flatten)]
        sim: SimArgs,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn parse_variant(s: &str) -> Result<ReadRule, String> {
    ReadRule::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

fn parse_mutation(s: &str) -> Result<Mutation, String> {
    Mutation::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Mutation::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mutation {s:?}; one of {}", names.join(", "))
    })
}

/// Failure with the exit code it maps to.
struct Fail(u8, String);

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(1, e.to_string())
    }
}

fn sim_config(sim: &SimArgs, common: &Common) -> Result<SimConfig, Fail> {
    let mut cfg = SimConfig::default();
    if let Some(p) = &sim.config {
        let text = fs::read_to_string(p).map_err(|e| Fail(EXIT_USAGE, format!("{}: {e}", p.display())))?;
        cfg = parse_config(&text, cfg).map_err(|e| Fail(EXIT_USAGE, format!("{}: {e}", p.display())))?;
    }
    for kv in &sim.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Fail(EXIT_USAGE, format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(|e| Fail(EXIT_USAGE, e))?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    cfg.validate().map_err(|e| Fail(EXIT_USAGE, e.to_string()))?;
    Ok(cfg)
}

fn metrics_text(m: &Metrics) -> String {
    let rows = [
        ("committed", m.committed.to_string()),
        ("reads", m.reads.to_string()),
        ("writes", m.writes.to_string()),
        ("ticks", m.ticks.to_string()),
        ("throughput", format!("{:.3}", m.throughput)),
        ("latency_mean", format!("{:.2}", m.latency_mean)),
        ("latency_p50", m.latency_p50.to_string()),
        ("latency_p99", m.latency_p99.to_string()),
        ("versions_per_read", format!("{:.4}", m.versions_per_read)),
        ("noc", if m.noc.holds() { "ok" } else { "violated" }.to_string()),
        ("invariant_violations", m.invariant_violations.to_string()),
    ];
    rows.iter().map(|(k, v)| format!("{k:<22} = {v}\n")).collect()
}

fn history_path(out: &Path, seed: u64, repeat: u64) -> PathBuf {
    if repeat == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("history");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    out.with_file_name(format!("{stem}-{seed}.{ext}"))
}

fn cmd_run(sim: &SimArgs, repeat: u64, common: &Common) -> Result<u8, Fail> {
    if repeat == 0 {
        return Err(Fail(EXIT_USAGE, "--repeat must be at least 1".into()));
    }
    let base = sim_config(sim, common)?;
    let outcomes: Vec<_> = (0..repeat)
        .into_par_iter()
        .map(|i| {
            let cfg = SimConfig { seed: base.seed + i, ..base.clone() };
            run(&cfg).map(|o| (cfg.seed, o))
        })
        .collect();
    let mut docs = Vec::new();
    for o in outcomes {
        let (seed, o) = o.map_err(|e| Fail(1, e.to_string()))?;
        if let Some(out) = &common.out {
            let p = history_path(out, seed, repeat);
            fs::write(&p, o.history.to_jsonl()).map_err(|e| Fail(1, format!("{}: {e}", p.display())))?;
        }
        match common.format {
            Format::Text => {
                if repeat > 1 {
                    println!("# seed {seed}");
                }
                print!("{}", metrics_text(&o.metrics));
                for v in &o.violations {
                    println!("violation: {v}");
                }
            }
            Format::Json => docs.push(json!({ "seed": seed, "metrics": o.metrics, "violations": o.violations })),
        }
    }
    if common.format == Format::Json {
        println!("{}", serde_json::to_string_pretty(&docs).expect("serializable"));
    }
    Ok(0)
}

fn read_history(p: &Path) -> Result<History, HistoryError> {
    let f = fs::File::open(p).map_err(|e| HistoryError::Malformed(format!("{}: {e}", p.display())))?;
    History::read_jsonl(BufReader::new(f))
}

enum FileVerdict {
    Malformed(String),
    Checked(History, [Verdict; 3]),
}

fn cmd_check(files: &[PathBuf], minimize: bool, common: &Common) -> Result<u8, Fail> {
    let results: Vec<FileVerdict> = files
        .par_iter()
        .map(|p| match read_history(p).and_then(|h| check_each(&h).map(|v| (h, v))) {
            Ok((h, v)) => FileVerdict::Checked(h, v),
            Err(e) => FileVerdict::Malformed(e.to_string()),
        })
        .collect();
    let mut code = 0;
    let mut docs = Vec::new();
    for (p, r) in files.iter().zip(&results) {
        let name = p.display().to_string();
        match r {
            FileVerdict::Malformed(e) => {
                code = EXIT_MALFORMED;
                match common.format {
                    Format::Text => println!("{name}: malformed: {e}"),
                    Format::Json => docs.push(json!({ "file": name, "malformed": e })),
                }
            }
            FileVerdict::Checked(h, vs) => {
                if vs.iter().any(|v| !v.is_pass()) && code == 0 {
                    code = EXIT_VIOLATION;
                }
                let checks = [Check::Tccv, Check::Convergence, Check::Sessions];
                match common.format {
                    Format::Text => {
                        for (c, v) in checks.iter().zip(vs) {
                            match v.violation() {
                                None => println!("{name}: {} pass", c.name()),
                                Some(x) => {
                                    println!("{name}: {} FAIL: {x}", c.name());
                                    if let Some(d) = &x.divergence {
                                        println!(
                                            "{name}:   witness {} read {} from {} then {}",
                                            d.cl, d.key, d.versions[0], d.versions[1]
                                        );
                                    }
                                    println!("{name}:   events {:?}", x.events);
                                }
                            }
                        }
                    }
                    Format::Json => {
                        let per: Vec<_> = checks
                            .iter()
                            .zip(vs)
                            .map(|(c, v)| {
                                json!({
                                    "check": c.name(),
                                    "pass": v.is_pass(),
                                    "violation": v.violation().map(|x| json!({
                                        "guard": x.guard,
                                        "txn": x.txn.map(|t| t.to_string()),
                                        "detail": x.detail,
                                        "events": x.events,
                                        "witness": x.divergence.as_ref().map(|d| json!({
                                            "client": d.cl.0,
                                            "key": d.key.0,
                                            "versions": [d.versions[0].to_string(), d.versions[1].to_string()],
                                        })),
                                    })),
                                })
                            })
                            .collect();
                        docs.push(json!({ "file": name, "checks": per }));
                    }
                }
                if minimize {
                    if let Some(v) = vs[0].violation() {
                        let m = minimize_witness(h, v, check_tccv);
                        match &common.out {
                            Some(out) => fs::write(out, m.to_jsonl())?,
                            None => print!("{}", m.to_jsonl()),
                        }
                        if common.format == Format::Text {
                            eprintln!("{name}: minimized witness has {} of {} events", m.len(), h.len());
                        }
                    }
                }
            }
        }
    }
    if common.format == Format::Json {
        println!("{}", serde_json::to_string_pretty(&docs).expect("serializable"));
    }
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn cmd_explore(
    clients: u32,
    keys: u32,
    partitions: u32,
    txns: u32,
    shapes: bool,
    mutation: Option<Mutation>,
    cap: usize,
    prune: bool,
    common: &Common,
) -> Result<u8, Fail> {
    if clients == 0 || keys == 0 || partitions == 0 {
        return Err(Fail(EXIT_USAGE, "clients, keys and partitions must be at least 1".into()));
    }
    let cfg = ExploreConfig {
        clients,
        partitions,
        keys,
        variant: common.variant.unwrap_or_default(),
        mutation,
        prune,
        cap,
    };
    let workloads = if shapes {
        all_shapes(clients, keys, txns)
    } else {
        let spec = WorkloadSpec {
            clients,
            keys,
            txns_per_client: txns,
            read_proportion: 0.5,
            read_keys: keys.min(2),
            write_keys: keys.min(2),
            seed: common.seed.unwrap_or(0),
            ..WorkloadSpec::default()
        };
        spec.validate().map_err(|e| Fail(EXIT_USAGE, e))?;
        vec![gen_workload(&spec)]
    };
    let (mut states, mut schedules, mut histories, mut failing) = (0usize, 0u64, 0usize, 0usize);
    let mut violations = Vec::new();
    let mut first: Option<String> = None;
    for w in workloads {
        let r = explore(&cfg, w).map_err(|e| Fail(1, e.to_string()))?;
        states += r.states;
        schedules += r.schedules;
        histories += r.histories.len();
        violations.extend(r.violations);
        for h in &r.histories {
            let v = check_tccv(h).map_err(|e| Fail(EXIT_MALFORMED, e.to_string()))?;
            if let Some(x) = v.violation() {
                failing += 1;
                first.get_or_insert_with(|| x.to_string());
            }
        }
    }
    let pass = failing == 0 && violations.is_empty();
    match common.format {
        Format::Text => {
            println!("states      = {states}");
            println!("schedules   = {schedules}");
            println!("histories   = {histories}");
            println!("failing     = {failing}");
            println!("invariants  = {}", violations.len());
            if let Some(f) = &first {
                println!("first       = {f}");
            }
            println!("verdict     = {}", if pass { "pass" } else { "FAIL" });
        }
        Format::Json => println!(
            "{}",
            json!({ "states": states, "schedules": schedules, "histories": histories,
                    "failing": failing, "invariant_violations": violations, "first": first, "pass": pass })
        ),
    }
    Ok(if pass { 0 } else { EXIT_VIOLATION })
}

fn cmd_demo(common: &Common) -> Result<u8, Fail> {
    let mut docs = Vec::new();
    for rule in [ReadRule::EigerPortPlus, ReadRule::EigerPort] {
        let d = demo_divergence(rule).map_err(|e| Fail(1, e.to_string()))?;
        if let Some(dir) = &common.out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{}.jsonl", rule.name())), d.history.to_jsonl())?;
        }
        match common.format {
            Format::Text => println!("{d}"),
            Format::Json => {
                let reads: serde_json::Map<String, serde_json::Value> = d
                    .reads
                    .iter()
                    .map(|(cl, rs)| {
                        let v: Vec<_> = rs.iter().map(|r| r.versions.clone()).collect();
                        (epp_core::demo::client_name(*cl), json!(v))
                    })
                    .collect();
                docs.push(json!({
                    "variant": rule.name(),
                    "reads": reads,
                    "convergence": d.convergence.is_pass(),
                    "witness": d.witness(),
                }));
            }
        }
    }
    if common.format == Format::Json {
        println!("{}", serde_json::to_string_pretty(&docs).expect("serializable"));
    }
    Ok(0)
}

fn cmd_bench(sim: &SimArgs, seeds: u64, common: &Common) -> Result<u8, Fail> {
    let cfg = sim_config(sim, common)?;
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
    let t = bench_compare(&cfg, &[ReadRule::EigerPortPlus, ReadRule::EigerPort], &seeds)
        .map_err(|e| Fail(1, e.to_string()))?;
    match common.format {
        Format::Text => println!("{t}"),
        Format::Json => println!("{}", serde_json::to_string_pretty(&t).expect("serializable")),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let c = &cli.common;
    let res = match &cli.cmd {
        Cmd::Run { sim, repeat } => cmd_run(sim, *repeat, c),
        Cmd::Check { files, minimize } => cmd_check(files, *minimize, c),
        Cmd::Explore {
            clients,
            keys,
            partitions,
            txns,
            all_shapes,
            mutation,
            cap,
            no_prune,
        } => cmd_explore(*clients, *keys, *partitions, *txns, *all_shapes, *mutation, *cap, !*no_prune, c),
        Cmd::DemoDivergence => cmd_demo(c),
        Cmd::Bench { sim, seeds } => cmd_bench(sim, *seeds, c),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("epp: {msg}");
            ExitCode::from(code)
        }
    }
}
