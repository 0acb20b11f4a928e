use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use collab_harness::bench::{self, BenchConfig};
use collab_harness::exec::Exec;
use collab_harness::fuzz::{run_fuzz, FuzzConfig};
use collab_harness::oracle;
use collab_harness::relay::{RelayPeer, RelayServer};
use collab_harness::scenario::{run_scenario, SCENARIOS};
use collab_harness::sim::{Latency, NetConfig, Topology};
use collab_harness::workload::{FuzzDoc, Target};
use collab_kernel::{Document, Mode, ReplicaId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "collab-harness", about = "Simulation, fuzzing and benchmarking for collab-kernel")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Random concurrent ops over a simulated network; checks convergence.
    Fuzz {
        #[arg(long, default_value_t = 3)]
        replicas: usize,
        #[arg(long, default_value_t = 1000)]
        ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed ms, or LO:HI for uniform.
        #[arg(long, default_value = "0:200")]
        latency: Latency,
        #[arg(long, default_value_t = 0.0)]
        dup: f64,
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
        #[arg(long)]
        merge_every: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Dependency-free envelopes over a relay topology.
        #[arg(long)]
        no_vc: bool,
        /// Invert the register tie-break on this replica.
        #[arg(long)]
        faulty: Option<usize>,
        /// Restrict ops to these components (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
    /// Brute-force confluence check over sampled small causal DAGs.
    Oracle {
        #[arg(long, default_value_t = 500)]
        dags: usize,
        #[arg(long, default_value_t = 5)]
        max_ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs a named two-replica scenario (or `all`).
    Scenario { name: String },
    /// Replays an editing trace and reports size and latency metrics.
    Bench {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        #[arg(long)]
        batch_ms: Option<u64>,
        #[arg(long, default_value = "20:80")]
        latency: Latency,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    #[command(subcommand)]
    Relay(RelayCmd),
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Saves a scripted document after `--ops` random ops.
    Save {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Loads a save into a fresh scripted document and prints its state.
    Load {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum RelayCmd {
    /// Runs the relay until killed.
    Serve {
        #[arg(long, default_value_t = 7070)]
        port: u16,
    },
    /// Joins a relay, performs random ops, and persists the document.
    Client {
        #[arg(long)]
        addr: String,
        /// Save file: loaded at start if present, written at exit.
        #[arg(long)]
        doc: PathBuf,
        #[arg(long, default_value_t = 100)]
        ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        op_interval_ms: u64,
        #[arg(long, default_value_t = 2000)]
        settle_ms: u64,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Sequential typing trace at six keystrokes per second.
    Gen {
        #[arg(long, default_value_t = 10_000)]
        chars: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Converts a `[[pos, del, text], ...]` JSON edit list.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_targets(names: &[String]) -> Result<Vec<(Target, u32)>> {
    if names.is_empty() {
        return Ok(Target::ALL.iter().map(|&t| (t, 1)).collect());
    }
    names
        .iter()
        .map(|n| {
            let t: Target = serde_json::from_value(serde_json::Value::String(n.clone()))
                .with_context(|| format!("unknown component {n:?}"))?;
            Ok((t, 1))
        })
        .collect()
}

fn scripted(ops: usize, seed: u64) -> Result<(Document, FuzzDoc)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc = Document::new(ReplicaId::random(&mut rng), Mode::Full);
    let fd = FuzzDoc::register(&mut doc)?;
    for _ in 0..ops {
        let t = Target::ALL[rng.gen_range(0..Target::ALL.len())];
        fd.op(t, &mut doc, &mut rng)?;
    }
    doc.take_outbox();
    Ok((doc, fd))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Fuzz { replicas, ops, seed, latency, dup, drop, merge_every, checkpoint_every, no_vc, faulty, only } => {
            let cfg = FuzzConfig {
                replicas,
                ops,
                seed,
                net: NetConfig {
                    latency,
                    dup_prob: dup,
                    drop_prob: drop,
                    topology: if no_vc { Topology::Relay } else { Topology::Mesh },
                    ..NetConfig::default()
                },
                merge_every,
                checkpoint_every,
                no_vc,
                faulty_replica: faulty,
                mix: parse_targets(&only)?,
                ..FuzzConfig::default()
            };
            let out = run_fuzz(&cfg)?;
            println!("{}", serde_json::to_string(&out.report)?);
            println!("{}", serde_json::json!({ "elapsed_ms": out.elapsed.as_millis() as u64 }));
            if let Some(f) = &out.report.failure {
                bail!("{:?} at step {} (seed {}): {}", f.kind, f.step, f.seed, f.detail);
            }
        }
        Cmd::Oracle { dags, max_ops, seed } => {
            let mut failed = false;
            for s in oracle::subjects() {
                let r = s.check(dags, max_ops, seed, Exec::default())?;
                failed |= !r.pass();
                println!("{}", serde_json::to_string(&r)?);
            }
            if failed {
                bail!("confluence violated");
            }
        }
        Cmd::Scenario { name } => {
            let names: Vec<&str> = if name == "all" { SCENARIOS.to_vec() } else { vec![name.as_str()] };
            let mut failed = Vec::new();
            for n in names {
                let r = run_scenario(n)?;
                for line in &r.transcript {
                    eprintln!("[{n}] {line}");
                }
                println!("{}", serde_json::to_string(&r)?);
                if !r.passed {
                    failed.push(n);
                }
            }
            if !failed.is_empty() {
                bail!("scenarios failed: {failed:?}");
            }
        }
        Cmd::Bench { trace, replicas, batch_ms, latency, seed } => {
            let text = std::fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let events = bench::parse_trace(&text)?;
            let m = bench::run_bench(&events, &BenchConfig { replicas, batch_ms, latency, seed })?;
            println!("{}", serde_json::to_string(&m)?);
            println!("{}", serde_json::json!({ "counter_envelope_bytes": bench::counter_envelope_bytes(seed)? }));
            if !m.converged {
                bail!("replicas diverged");
            }
        }
        Cmd::Relay(RelayCmd::Serve { port }) => {
            let relay = RelayServer::start(("0.0.0.0", port))?;
            eprintln!("relay listening on {}", relay.addr());
            loop {
                std::thread::sleep(Duration::from_secs(3600));
            }
        }
        Cmd::Relay(RelayCmd::Client { addr, doc, ops, seed, op_interval_ms, settle_ms }) => {
            let addr = std::net::ToSocketAddrs::to_socket_addrs(&addr)?.next().context("unresolvable address")?;
            let id = ReplicaId::random(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut peer = RelayPeer::new(id.as_str(), Mode::NoVc, seed)?;
            if doc.exists() {
                peer.doc.load(&std::fs::read(&doc)?)?;
            }
            peer.connect(addr)?;
            peer.send_save()?;
            for _ in 0..ops {
                peer.op()?;
                peer.pump(Duration::from_millis(op_interval_ms))?;
            }
            peer.pump(Duration::from_millis(settle_ms))?;
            std::fs::write(&doc, peer.doc.save())?;
            println!("{}", serde_json::json!({ "replica": id.as_str(), "digest": peer.doc.digest().to_hex() }));
        }
        Cmd::Trace(TraceCmd::Gen { chars, seed, out }) => {
            std::fs::write(out, bench::format_trace(&bench::typing_trace(chars, seed)))?;
        }
        Cmd::Trace(TraceCmd::Convert { input, out }) => {
            let events = bench::convert_triples(&std::fs::read_to_string(input)?)?;
            std::fs::write(out, bench::format_trace(&events))?;
        }
        Cmd::Save { out, ops, seed } => {
            let (doc, _) = scripted(ops, seed)?;
            let bytes = doc.save();
            std::fs::write(&out, &bytes)?;
            println!("{}", serde_json::json!({ "bytes": bytes.len(), "digest": doc.digest().to_hex() }));
        }
        Cmd::Load { input } => {
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let (mut doc, _) = scripted(0, 0)?;
            doc.load(&bytes)?;
            println!("{}", serde_json::json!({ "digest": doc.digest().to_hex(), "state": doc.observe() }));
        }
    }
    Ok(())
}
