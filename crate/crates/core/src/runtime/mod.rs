//! Replica identity, causal broadcast, and whole-document save framing.

mod clock;
mod envelope;
mod ids;
mod save;

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub use clock::VectorClock;
pub use envelope::{decode_batch, encode_batch, MessageEnvelope, TreePath, BATCH_MAGIC, ENVELOPE_MAGIC, WIRE_VERSION};
pub use ids::{Dot, ReplicaId};
pub use save::{DocumentSave, SaveNode, SAVE_MAGIC};

/// How much causality metadata envelopes carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// Envelopes list causally-maximal dependencies; receivers buffer until
    /// they are covered.
    #[default]
    Full,
    /// Envelopes carry no dependencies. The transport must already deliver
    /// in causal order; only per-sender ordering and dedup are enforced.
    NoVc,
}

/// A message released by the causal buffer.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub envelope: MessageEnvelope,
    /// Transitive causal past of the message (including itself), when known.
    pub causal_past: Option<VectorClock>,
}

/// Per-replica causal broadcast state.
#[derive(Debug)]
pub struct Runtime {
    replica: ReplicaId,
    mode: Mode,
    clock: VectorClock,
    lamport: u64,
    /// Causal past of each delivered dot (Full mode only). Dots learned
    /// through a load have no entry and are treated as covering only their
    /// own replica's prefix.
    closures: HashMap<Dot, VectorClock>,
    pending: BTreeMap<ReplicaId, BTreeMap<u64, MessageEnvelope>>,
    pending_len: usize,
    duplicates: u64,
}

impl Runtime {
    pub fn new(replica: ReplicaId, mode: Mode) -> Self {
        Runtime {
            replica,
            mode,
            clock: VectorClock::new(),
            lamport: 0,
            closures: HashMap::new(),
            pending: BTreeMap::new(),
            pending_len: 0,
            duplicates: 0,
        }
    }

    pub fn replica(&self) -> &ReplicaId {
        &self.replica
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn clock(&self) -> &VectorClock {
        &self.clock
    }

    pub fn lamport(&self) -> u64 {
        self.lamport
    }

    /// Envelopes waiting for their dependencies.
    pub fn pending_len(&self) -> usize {
        self.pending_len
    }

    /// Envelopes discarded because their dot was already covered.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    /// Stamps a locally originated message. The caller is responsible for the
    /// synchronous local echo.
    pub fn send_local(&mut self, path: TreePath, payload: Vec<u8>) -> MessageEnvelope {
        let deps = match self.mode {
            Mode::Full => self.causally_maximal_deps(),
            Mode::NoVc => Vec::new(),
        };
        let sender = Dot::new(self.replica.clone(), self.clock.get(&self.replica) + 1);
        self.lamport += 1;
        self.clock.observe(&sender);
        if self.mode == Mode::Full {
            self.closures.insert(sender.clone(), self.clock.clone());
        }
        MessageEnvelope { sender, deps, lamport: self.lamport, path, payload }
    }

    /// Latest delivered dot of each other replica, minus those already in the
    /// causal past of another replica's latest dot.
    pub fn causally_maximal_deps(&self) -> Vec<Dot> {
        causally_maximal(&self.clock, &self.replica, |d| self.closures.get(d))
    }

    /// Accepts an envelope from the network and returns every message that
    /// became deliverable, in delivery order.
    pub fn receive_envelope(&mut self, env: MessageEnvelope) -> Result<Vec<Delivery>> {
        env.validate()?;
        if self.clock.covers(&env.sender) {
            self.duplicates += 1;
            return Ok(Vec::new());
        }
        let queue = self.pending.entry(env.sender.replica.clone()).or_default();
        if queue.insert(env.sender.counter, env).is_some() {
            self.duplicates += 1;
        } else {
            self.pending_len += 1;
        }
        Ok(self.drain())
    }

    /// Merges a remote causal summary (from a loaded save) and releases any
    /// buffered messages that became deliverable or redundant.
    pub fn merge_remote(&mut self, remote: &VectorClock, lamport: u64) -> Vec<Delivery> {
        self.clock.merge(remote);
        self.lamport = self.lamport.max(lamport);
        self.drain()
    }

    fn deliverable(&self, env: &MessageEnvelope) -> bool {
        if env.sender.counter != self.clock.get(&env.sender.replica) + 1 {
            return false;
        }
        match self.mode {
            Mode::Full => env.deps.iter().all(|d| self.clock.covers(d)),
            Mode::NoVc => true,
        }
    }

    fn drain(&mut self) -> Vec<Delivery> {
        let mut out = Vec::new();
        loop {
            let mut progressed = false;
            let replicas: Vec<ReplicaId> = self.pending.keys().cloned().collect();
            for r in replicas {
                while let Some((&k, env)) = self.pending.get(&r).and_then(|q| q.first_key_value()) {
                    if k <= self.clock.get(&r) {
                        self.pending.get_mut(&r).expect("present").remove(&k);
                        self.pending_len -= 1;
                        self.duplicates += 1;
                        continue;
                    }
                    if !self.deliverable(env) {
                        break;
                    }
                    let env = self.pending.get_mut(&r).expect("present").remove(&k).expect("present");
                    self.pending_len -= 1;
                    out.push(self.deliver(env));
                    progressed = true;
                }
                if self.pending.get(&r).is_some_and(BTreeMap::is_empty) {
                    self.pending.remove(&r);
                }
            }
            if !progressed {
                break;
            }
        }
        out
    }

    fn deliver(&mut self, env: MessageEnvelope) -> Delivery {
        self.clock.observe(&env.sender);
        self.lamport = self.lamport.max(env.lamport);
        let causal_past = match self.mode {
            Mode::Full => {
                let mut past = VectorClock::new();
                let prev = Dot::new(env.sender.replica.clone(), env.sender.counter - 1);
                for d in std::iter::once(&prev).chain(env.deps.iter()) {
                    match self.closures.get(d) {
                        Some(c) => past.merge(c),
                        None => past.observe(d),
                    }
                }
                past.observe(&env.sender);
                self.closures.insert(env.sender.clone(), past.clone());
                Some(past)
            }
            Mode::NoVc => None,
        };
        Delivery { envelope: env, causal_past }
    }

    /// Asserts the invariant that nothing deliverable is left buffered.
    pub fn check_buffer(&self) -> Result<()> {
        for queue in self.pending.values() {
            for env in queue.values() {
                if self.clock.covers(&env.sender) || self.deliverable(env) {
                    return Err(Error::ContractViolation(format!("deliverable envelope {} left buffered", env.sender)));
                }
            }
        }
        Ok(())
    }
}

/// Causally-maximal dependency selection over a clock.
///
/// `closure` returns the known causal past of a delivered dot; unknown dots
/// are assumed to cover only themselves, which keeps the result sound.
pub fn causally_maximal<'a>(
    clock: &VectorClock,
    own: &ReplicaId,
    closure: impl Fn(&Dot) -> Option<&'a VectorClock>,
) -> Vec<Dot> {
    let latest: Vec<Dot> = clock.iter().filter(|(r, _)| *r != own).map(|(r, c)| Dot::new(r.clone(), c)).collect();
    latest
        .iter()
        .filter(|d| !latest.iter().any(|e| e.replica != d.replica && closure(e).is_some_and(|past| past.covers(d))))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::from(s)
    }

    fn env(sender: &str, counter: u64, deps: &[(&str, u64)], lamport: u64) -> MessageEnvelope {
        MessageEnvelope {
            sender: Dot::new(rid(sender), counter),
            deps: deps.iter().map(|&(r, c)| Dot::new(rid(r), c)).collect(),
            lamport,
            path: vec!["x".into()],
            payload: vec![],
        }
    }

    fn dots(ds: &[Delivery]) -> Vec<String> {
        ds.iter().map(|d| d.envelope.sender.to_string()).collect()
    }

    #[test]
    fn first_local_send() {
        let mut rt = Runtime::new(rid("a"), Mode::Full);
        let e = rt.send_local(vec!["x".into()], vec![]);
        assert_eq!(e.sender, Dot::new(rid("a"), 1));
        assert!(e.deps.is_empty());
        assert_eq!(e.lamport, 1);
    }

    #[test]
    fn single_remote_dot_becomes_dependency() {
        let mut rt = Runtime::new(rid("a"), Mode::Full);
        for c in 1..=3 {
            rt.receive_envelope(env("b", c, &[], c)).unwrap();
        }
        let e = rt.send_local(vec![], vec![]);
        assert_eq!(e.deps, vec![Dot::new(rid("b"), 3)]);
        // Own previous dot is implicit: a second send repeats the same remote deps.
        let e2 = rt.send_local(vec![], vec![]);
        assert_eq!(e2.deps, e.deps);
        assert!(e2.lamport > e.lamport);
    }

    #[test]
    fn duplicates_and_reordering() {
        let mut rt = Runtime::new(rid("c"), Mode::Full);
        assert_eq!(dots(&rt.receive_envelope(env("a", 1, &[], 1)).unwrap()), ["a.1"]);
        assert!(rt.receive_envelope(env("a", 1, &[], 1)).unwrap().is_empty());
        assert!(rt.receive_envelope(env("a", 3, &[], 3)).unwrap().is_empty());
        assert_eq!(dots(&rt.receive_envelope(env("a", 2, &[], 2)).unwrap()), ["a.2", "a.3"]);
        assert_eq!(rt.lamport(), 3);
    }

    #[test]
    fn transitive_drain() {
        let mut rt = Runtime::new(rid("c"), Mode::Full);
        assert!(rt.receive_envelope(env("b", 1, &[("a", 1)], 2)).unwrap().is_empty());
        assert_eq!(rt.pending_len(), 1);
        assert_eq!(dots(&rt.receive_envelope(env("a", 1, &[], 1)).unwrap()), ["a.1", "b.1"]);
        assert_eq!(rt.pending_len(), 0);
        rt.check_buffer().unwrap();
    }

    #[test]
    fn linear_history_has_one_maximal_dep() {
        // a1 <- b1 <- a2, all delivered at c.
        let mut rt = Runtime::new(rid("c"), Mode::Full);
        rt.receive_envelope(env("a", 1, &[], 1)).unwrap();
        rt.receive_envelope(env("b", 1, &[("a", 1)], 2)).unwrap();
        rt.receive_envelope(env("a", 2, &[("b", 1)], 3)).unwrap();
        assert_eq!(rt.causally_maximal_deps(), vec![Dot::new(rid("a"), 2)]);
    }

    #[test]
    fn concurrent_dots_are_all_maximal() {
        let mut rt = Runtime::new(rid("c"), Mode::Full);
        rt.receive_envelope(env("a", 1, &[], 1)).unwrap();
        rt.receive_envelope(env("b", 1, &[], 1)).unwrap();
        assert_eq!(rt.causally_maximal_deps(), vec![Dot::new(rid("a"), 1), Dot::new(rid("b"), 1)]);
        assert!(Runtime::new(rid("z"), Mode::Full).causally_maximal_deps().is_empty());
    }

    #[test]
    fn novc_ignores_missing_deps() {
        let mut rt = Runtime::new(rid("c"), Mode::NoVc);
        let out = rt.receive_envelope(env("b", 1, &[("a", 1)], 2)).unwrap();
        assert_eq!(dots(&out), ["b.1"]);
        assert!(out[0].causal_past.is_none());
        assert!(rt.receive_envelope(env("b", 1, &[], 2)).unwrap().is_empty());
        let e = rt.send_local(vec![], vec![]);
        assert!(e.deps.is_empty());
    }

    #[test]
    fn merge_discards_covered_pending() {
        let mut rt = Runtime::new(rid("c"), Mode::Full);
        rt.receive_envelope(env("a", 2, &[], 2)).unwrap();
        rt.receive_envelope(env("a", 4, &[], 4)).unwrap();
        let remote: VectorClock = [(rid("a"), 3)].into_iter().collect();
        let out = rt.merge_remote(&remote, 3);
        assert_eq!(dots(&out), ["a.4"]);
        assert_eq!(rt.pending_len(), 0);
    }

    #[test]
    fn causal_past_of_delivered_message() {
        let mut rt = Runtime::new(rid("c"), Mode::Full);
        rt.receive_envelope(env("a", 1, &[], 1)).unwrap();
        let out = rt.receive_envelope(env("b", 1, &[("a", 1)], 2)).unwrap();
        let past = out[0].causal_past.as_ref().unwrap();
        assert!(past.covers(&Dot::new(rid("a"), 1)));
        assert!(past.covers(&Dot::new(rid("b"), 1)));
        assert!(!past.covers(&Dot::new(rid("c"), 1)));
    }
}
