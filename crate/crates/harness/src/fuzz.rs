//! Convergence fuzzer.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use collab_kernel::runtime::SAVE_MAGIC;
use collab_kernel::{Document, DocumentSave, Faults, MessageEnvelope, Mode, ReplicaId, VectorClock};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{NetConfig, NetStats, SimNetwork, Topology};
use crate::workload::{FuzzDoc, Target};
use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub replicas: usize,
    pub ops: usize,
    pub seed: u64,
    pub net: NetConfig,
    /// Save/load crossover between two random replicas every this many ops.
    pub merge_every: Option<usize>,
    /// Relative weight of each component in the op stream.
    pub mix: Vec<(Target, u32)>,
    /// Envelopes without dependency lists; needs a causal transport.
    pub no_vc: bool,
    /// Virtual milliseconds between consecutive local ops.
    pub op_interval_ms: u64,
    /// Replica whose registers break ties the wrong way.
    pub faulty_replica: Option<usize>,
    /// Flush the network and compare digests every this many ops.
    pub checkpoint_every: Option<usize>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            replicas: 3,
            ops: 1000,
            seed: 0,
            net: NetConfig::default(),
            merge_every: None,
            mix: Target::ALL.iter().map(|&t| (t, 1)).collect(),
            no_vc: false,
            op_interval_ms: 5,
            faulty_replica: None,
            checkpoint_every: None,
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replicas == 0 {
            return Err(HarnessError::Config("at least one replica".into()));
        }
        if self.mix.iter().all(|(_, w)| *w == 0) {
            return Err(HarnessError::Config("op mix weights are all zero".into()));
        }
        for p in [self.net.dup_prob, self.net.drop_prob] {
            if !(0.0..1.0).contains(&p) {
                return Err(HarnessError::Config(format!("probability {p} outside [0, 1)")));
            }
        }
        if self.no_vc && self.net.topology != Topology::Relay {
            return Err(HarnessError::Config("no-vc mode needs the relay topology".into()));
        }
        // Drop retries overtake later messages on the same link.
        if self.no_vc && self.net.drop_prob > 0.0 {
            return Err(HarnessError::Config("no-vc mode needs a lossless transport (drop = 0)".into()));
        }
        if self.faulty_replica.is_some_and(|r| r >= self.replicas) {
            return Err(HarnessError::Config("faulty replica out of range".into()));
        }
        if self.merge_every == Some(0) || self.checkpoint_every == Some(0) {
            return Err(HarnessError::Config("intervals must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Divergence,
    CausalSafety,
    ExactlyOnce,
    Apply,
    View,
}

/// A replayable witness: rerun with the same config to reproduce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub step: usize,
    pub kind: FailureKind,
    pub detail: String,
}

/// Deterministic summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub replicas: usize,
    pub ops_executed: usize,
    pub op_counts: BTreeMap<String, u64>,
    pub envelopes: u64,
    pub envelope_bytes: u64,
    pub max_envelope_bytes: u64,
    pub max_deps: usize,
    pub net: NetStats,
    pub merges: u64,
    pub duplicates_suppressed: u64,
    pub final_digest: Option<String>,
    pub converged: bool,
    pub failure: Option<Failure>,
}

impl FuzzReport {
    pub fn mean_envelope_bytes(&self) -> f64 {
        if self.envelopes == 0 {
            0.0
        } else {
            self.envelope_bytes as f64 / self.envelopes as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.converged
    }
}

#[derive(Clone, Debug)]
pub struct FuzzOutcome {
    pub report: FuzzReport,
    pub elapsed: Duration,
}

struct Replica {
    doc: Document,
    fd: FuzzDoc,
    /// Dots this replica has applied, as observed by the harness.
    delivered: VectorClock,
}

struct Run<'a> {
    cfg: &'a FuzzConfig,
    replicas: Vec<Replica>,
    net: SimNetwork,
    report: FuzzReport,
    step: usize,
}

type Check = Result<(), Failure>;

impl<'a> Run<'a> {
    fn fail(&self, kind: FailureKind, detail: impl Into<String>) -> Failure {
        Failure { seed: self.cfg.seed, step: self.step, kind, detail: detail.into() }
    }

    fn record_delivery(&mut self, at: usize, env: &MessageEnvelope) -> Check {
        let vc = &self.replicas[at].delivered;
        let cur = vc.get(&env.sender.replica);
        if env.sender.counter <= cur {
            return Err(self.fail(FailureKind::ExactlyOnce, format!("replica {at} applied {} twice", env.sender)));
        }
        if env.sender.counter != cur + 1 {
            return Err(
                self.fail(FailureKind::CausalSafety, format!("replica {at} applied {} after {cur}", env.sender))
            );
        }
        if let Some(d) = env.deps.iter().find(|d| !vc.covers(d)) {
            return Err(
                self.fail(FailureKind::CausalSafety, format!("replica {at} applied {} before dep {d}", env.sender))
            );
        }
        self.replicas[at].delivered.observe(&env.sender);
        Ok(())
    }

    fn deliver(&mut self, d: crate::sim::Delivered) -> Check {
        if d.bytes.first() == Some(&SAVE_MAGIC) {
            return self.merge_save(d.to, &d.bytes);
        }
        let env = MessageEnvelope::decode(&d.bytes).map_err(|e| self.fail(FailureKind::Apply, e.to_string()))?;
        let out = self.replicas[d.to].doc.receive(env);
        let applied = out.map_err(|e| self.fail(FailureKind::Apply, format!("replica {}: {e}", d.to)))?;
        for env in &applied {
            self.record_delivery(d.to, env)?;
        }
        Ok(())
    }

    fn deliver_until(&mut self, t: u64) -> Check {
        while let Some(d) = self.net.next_until(t) {
            self.deliver(d)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Check {
        while let Some(d) = self.net.next_any() {
            self.deliver(d)?;
        }
        Ok(())
    }

    fn local_op(&mut self, r: usize, target: Target, rng: &mut ChaCha8Rng) -> Check {
        let rep = &mut self.replicas[r];
        let label = rep.fd.op(target, &mut rep.doc, rng).map_err(|e| Failure {
            seed: self.cfg.seed,
            step: self.step,
            kind: FailureKind::Apply,
            detail: format!("local {target:?} op at replica {r}: {e}"),
        })?;
        *self.report.op_counts.entry(label.to_owned()).or_default() += 1;
        for env in self.replicas[r].doc.take_outbox() {
            self.record_delivery(r, &env)?;
            let bytes = env.encode();
            self.report.envelopes += 1;
            self.report.envelope_bytes += bytes.len() as u64;
            self.report.max_envelope_bytes = self.report.max_envelope_bytes.max(bytes.len() as u64);
            self.report.max_deps = self.report.max_deps.max(env.deps.len());
            self.net.broadcast(r, bytes);
        }
        let rep = &self.replicas[r];
        rep.fd.check_views(&rep.doc).map_err(|e| self.fail(FailureKind::View, e))
    }

    fn crossover(&mut self, rng: &mut ChaCha8Rng) -> Check {
        let n = self.replicas.len();
        if n < 2 {
            return Ok(());
        }
        let from = rng.gen_range(0..n);
        let to = (from + rng.gen_range(1..n)) % n;
        let bytes = self.replicas[from].doc.save();
        if self.cfg.no_vc {
            // Without dependency lists, state may only arrive in transport
            // order; an out-of-band load would let later ops overtake it.
            self.net.send(from, to, bytes);
            return Ok(());
        }
        self.merge_save(to, &bytes)
    }

    fn merge_save(&mut self, to: usize, bytes: &[u8]) -> Check {
        let save = DocumentSave::decode(bytes).map_err(|e| self.fail(FailureKind::Apply, e.to_string()))?;
        let released = self.replicas[to]
            .doc
            .load(bytes)
            .map_err(|e| self.fail(FailureKind::Apply, format!("load at {to}: {e}")))?;
        self.replicas[to].delivered.merge(&save.causal);
        for env in &released {
            self.record_delivery(to, env)?;
        }
        self.report.merges += 1;
        Ok(())
    }

    fn compare_digests(&mut self) -> Check {
        let digests: Vec<String> = self.replicas.iter().map(|r| r.doc.digest().to_hex()).collect();
        if let Some(i) = digests.iter().position(|d| *d != digests[0]) {
            return Err(self.fail(
                FailureKind::Divergence,
                format!("replica 0 digest {} != replica {i} digest {}", &digests[0][..12], &digests[i][..12]),
            ));
        }
        Ok(())
    }

    fn finish(&mut self) -> Check {
        self.flush()?;
        for (i, rep) in self.replicas.iter().enumerate() {
            if rep.doc.runtime().pending_len() != 0 {
                return Err(
                    self.fail(FailureKind::CausalSafety, format!("replica {i} still buffers messages at quiescence"))
                );
            }
            rep.doc.runtime().check_buffer().map_err(|e| self.fail(FailureKind::CausalSafety, e.to_string()))?;
            rep.fd.check_views(&rep.doc).map_err(|e| self.fail(FailureKind::View, e))?;
        }
        let clocks: Vec<&VectorClock> = self.replicas.iter().map(|r| r.doc.clock()).collect();
        if clocks.iter().any(|c| *c != clocks[0]) {
            return Err(self.fail(FailureKind::ExactlyOnce, "replicas delivered different dot sets"));
        }
        self.compare_digests()?;
        self.report.converged = true;
        self.report.final_digest = Some(self.replicas[0].doc.digest().to_hex());
        Ok(())
    }
}

pub fn run_fuzz(cfg: &FuzzConfig) -> Result<FuzzOutcome, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mode = if cfg.no_vc { Mode::NoVc } else { Mode::Full };
    let mut replicas = Vec::with_capacity(cfg.replicas);
    for i in 0..cfg.replicas {
        let id = ReplicaId::random(&mut rng);
        let faults = Faults { invert_lww_tiebreak: cfg.faulty_replica == Some(i) };
        let mut doc = Document::with_faults(id, mode, faults);
        let fd = FuzzDoc::register(&mut doc)?;
        replicas.push(Replica { doc, fd, delivered: VectorClock::new() });
    }
    let net = SimNetwork::new(cfg.net.clone(), cfg.replicas, rng.gen());
    let report = FuzzReport {
        seed: cfg.seed,
        replicas: cfg.replicas,
        ops_executed: 0,
        op_counts: BTreeMap::new(),
        envelopes: 0,
        envelope_bytes: 0,
        max_envelope_bytes: 0,
        max_deps: 0,
        net: NetStats::default(),
        merges: 0,
        duplicates_suppressed: 0,
        final_digest: None,
        converged: false,
        failure: None,
    };
    let mut run = Run { cfg, replicas, net, report, step: 0 };
    let weights =
        WeightedIndex::new(cfg.mix.iter().map(|(_, w)| *w)).map_err(|e| HarnessError::Config(e.to_string()))?;

    let result = (|| -> Check {
        for step in 0..cfg.ops {
            run.step = step;
            run.deliver_until((step as u64 + 1) * cfg.op_interval_ms)?;
            let r = rng.gen_range(0..cfg.replicas);
            let target = cfg.mix[weights.sample(&mut rng)].0;
            run.local_op(r, target, &mut rng)?;
            run.report.ops_executed += 1;
            if cfg.merge_every.is_some_and(|k| (step + 1) % k == 0) {
                run.crossover(&mut rng)?;
            }
            if cfg.checkpoint_every.is_some_and(|k| (step + 1) % k == 0) {
                run.flush()?;
                run.compare_digests()?;
            }
        }
        run.step = cfg.ops;
        run.finish()
    })();
    run.report.failure = result.err();
    run.report.net = run.net.stats.clone();
    run.report.duplicates_suppressed = run.replicas.iter().map(|r| r.doc.runtime().duplicates()).sum();
    Ok(FuzzOutcome { report: run.report, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Latency;

    #[test]
    fn zero_ops_trivially_converge() {
        let cfg = FuzzConfig { replicas: 2, ops: 0, ..FuzzConfig::default() };
        let out = run_fuzz(&cfg).unwrap();
        assert!(out.report.passed());
    }

    #[test]
    fn small_run_converges_and_is_deterministic() {
        let cfg = FuzzConfig { replicas: 3, ops: 300, seed: 11, merge_every: Some(50), ..FuzzConfig::default() };
        let a = run_fuzz(&cfg).unwrap().report;
        let b = run_fuzz(&cfg).unwrap().report;
        assert!(a.passed(), "{:?}", a.failure);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let zero = FuzzConfig { mix: vec![(Target::Var, 0)], ..FuzzConfig::default() };
        assert!(run_fuzz(&zero).is_err());
        let novc = FuzzConfig { no_vc: true, ..FuzzConfig::default() };
        assert!(run_fuzz(&novc).is_err());
        let lossy = FuzzConfig {
            no_vc: true,
            net: NetConfig { topology: Topology::Relay, drop_prob: 0.1, ..NetConfig::default() },
            ..FuzzConfig::default()
        };
        assert!(run_fuzz(&lossy).is_err());
    }

    #[test]
    fn no_vc_merges_travel_through_the_relay() {
        let cfg = FuzzConfig {
            replicas: 4,
            ops: 600,
            seed: 12725248796721121247,
            no_vc: true,
            net: NetConfig {
                latency: Latency::Uniform(19, 185),
                dup_prob: 0.21,
                topology: Topology::Relay,
                ..NetConfig::default()
            },
            merge_every: Some(50),
            ..FuzzConfig::default()
        };
        let r = run_fuzz(&cfg).unwrap().report;
        assert!(r.passed(), "{:?}", r.failure);
        assert!(r.merges > 0);
    }
}
