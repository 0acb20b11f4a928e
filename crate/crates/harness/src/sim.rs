//! Deterministic virtual-time network.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One-way latency in virtual milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Latency {
    Fixed(u64),
    Uniform(u64, u64),
}

impl Latency {
    fn sample(self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Latency::Fixed(ms) => ms,
            Latency::Uniform(lo, hi) => rng.gen_range(lo..=hi.max(lo)),
        }
    }
}

impl std::str::FromStr for Latency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some((lo, hi)) => {
                let lo = lo.parse().map_err(|e| format!("{e}"))?;
                let hi = hi.parse().map_err(|e| format!("{e}"))?;
                if hi < lo {
                    return Err(format!("empty latency range {lo}:{hi}"));
                }
                Ok(Latency::Uniform(lo, hi))
            }
            None => s.parse().map(Latency::Fixed).map_err(|e| format!("{e}")),
        }
    }
}

/// Replicas in different groups cannot exchange messages during
/// `[start, end)`; messages wait for the partition to heal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub start: u64,
    pub end: u64,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    fn separates(&self, a: usize, b: usize, t: u64) -> bool {
        if t < self.start || t >= self.end {
            return false;
        }
        let group = |x| self.groups.iter().position(|g| g.contains(&x));
        group(a) != group(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Topology {
    /// Independent links; no ordering guarantees.
    #[default]
    Mesh,
    /// Every message goes through a hub that forwards in arrival order over
    /// FIFO links, like a relay server. Gives causal delivery.
    Relay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub latency: Latency,
    pub dup_prob: f64,
    /// Each delivery attempt is lost with this probability and retried after
    /// another latency sample (at-least-once).
    pub drop_prob: f64,
    pub partitions: Vec<Partition>,
    pub topology: Topology,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latency: Latency::Uniform(0, 200),
            dup_prob: 0.0,
            drop_prob: 0.0,
            partitions: Vec::new(),
            topology: Topology::Mesh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivered {
    pub time: u64,
    pub sent_at: u64,
    pub from: usize,
    pub to: usize,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub bytes_sent: u64,
    pub delivered: u64,
    pub duplicated: u64,
    pub dropped: u64,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: u64,
    seq: u64,
    from: usize,
    to: usize,
    sent_at: u64,
    /// Still has to pass through the hub (relay topology only).
    via_hub: bool,
    /// Hub forwards only to this replica instead of broadcasting.
    dest: Option<usize>,
    msg: usize,
}

/// Event-queue network over virtual time.
pub struct SimNetwork {
    cfg: NetConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    messages: Vec<Option<(Vec<u8>, usize)>>,
    /// Earliest next delivery time per FIFO link.
    fifo: HashMap<(usize, usize), u64>,
    replicas: usize,
    pub stats: NetStats,
}

const HUB: usize = usize::MAX;

impl SimNetwork {
    pub fn new(cfg: NetConfig, replicas: usize, seed: u64) -> Self {
        SimNetwork {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            messages: Vec::new(),
            fifo: HashMap::new(),
            replicas,
            stats: NetStats::default(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn store(&mut self, bytes: Vec<u8>, refs: usize) -> usize {
        self.messages.push(Some((bytes, refs)));
        self.messages.len() - 1
    }

    fn take(&mut self, msg: usize) -> Vec<u8> {
        let slot = self.messages[msg].as_mut().expect("live message");
        slot.1 -= 1;
        if slot.1 == 0 {
            self.messages[msg].take().expect("live").0
        } else {
            slot.0.clone()
        }
    }

    fn push(&mut self, from: usize, to: usize, via_hub: bool, dest: Option<usize>, msg: usize, fifo: bool) {
        let mut time = self.now + self.cfg.latency.sample(&mut self.rng);
        if fifo {
            let slot = self.fifo.entry((from, to)).or_insert(0);
            time = time.max(*slot);
            *slot = time;
        }
        self.seq += 1;
        let sent_at = self.now;
        self.queue.push(Reverse(Event { time, seq: self.seq, from, to, sent_at, via_hub, dest, msg }));
    }

    /// Sends `bytes` from `from` to `to` alone. Over the relay this takes the
    /// same FIFO links as broadcasts, so it arrives after everything the hub
    /// forwarded to `to` before it.
    pub fn send(&mut self, from: usize, to: usize, bytes: Vec<u8>) {
        self.stats.sent += 1;
        self.stats.bytes_sent += bytes.len() as u64;
        let msg = self.store(bytes, 1);
        match self.cfg.topology {
            Topology::Mesh => self.push(from, to, false, None, msg, false),
            Topology::Relay => self.push(from, HUB, true, Some(to), msg, true),
        }
    }

    /// Sends `bytes` from `from` to every other replica.
    pub fn broadcast(&mut self, from: usize, bytes: Vec<u8>) {
        match self.cfg.topology {
            Topology::Mesh => {
                let targets: Vec<usize> = (0..self.replicas).filter(|&t| t != from).collect();
                let mut copies = Vec::new();
                for &t in &targets {
                    copies.push(t);
                    if self.rng.gen_bool(self.cfg.dup_prob) {
                        copies.push(t);
                        self.stats.duplicated += 1;
                    }
                }
                self.stats.sent += targets.len() as u64;
                self.stats.bytes_sent += (bytes.len() * targets.len()) as u64;
                if copies.is_empty() {
                    return;
                }
                let msg = self.store(bytes, copies.len());
                for t in copies {
                    self.push(from, t, false, None, msg, false);
                }
            }
            Topology::Relay => {
                self.stats.sent += (self.replicas - 1) as u64;
                self.stats.bytes_sent += (bytes.len() * (self.replicas - 1)) as u64;
                let msg = self.store(bytes, 1);
                self.push(from, HUB, true, None, msg, true);
            }
        }
    }

    /// Next delivery at or before `until`, advancing virtual time.
    pub fn next_until(&mut self, until: u64) -> Option<Delivered> {
        loop {
            let Some(head) = self.queue.peek() else {
                if until != u64::MAX {
                    self.now = self.now.max(until);
                }
                return None;
            };
            if head.0.time > until {
                self.now = self.now.max(until);
                return None;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.now = self.now.max(ev.time);
            if let Some(d) = self.step(ev) {
                return Some(d);
            }
        }
    }

    /// Next delivery regardless of time; `None` once the network is idle.
    pub fn next_any(&mut self) -> Option<Delivered> {
        self.next_until(u64::MAX)
    }

    fn step(&mut self, ev: Event) -> Option<Delivered> {
        let blocked =
            self.cfg.partitions.iter().find(|p| ev.to != HUB && ev.from != HUB && p.separates(ev.from, ev.to, ev.time));
        if let Some(p) = blocked {
            let end = p.end;
            self.seq += 1;
            self.queue.push(Reverse(Event { time: end, seq: self.seq, ..ev }));
            return None;
        }
        if ev.to == HUB {
            // Hub forwards in arrival order over FIFO links.
            let bytes = self.take(ev.msg);
            let targets: Vec<usize> = match ev.dest {
                Some(t) => vec![t],
                None => (0..self.replicas).filter(|&t| t != ev.from).collect(),
            };
            let mut copies = Vec::new();
            for &t in &targets {
                copies.push(t);
                if self.rng.gen_bool(self.cfg.dup_prob) {
                    copies.push(t);
                    self.stats.duplicated += 1;
                }
            }
            if copies.is_empty() {
                return None;
            }
            let msg = self.store(bytes, copies.len());
            for t in copies {
                self.seq += 1;
                let mut time = ev.time + self.cfg.latency.sample(&mut self.rng);
                let slot = self.fifo.entry((HUB, t)).or_insert(0);
                time = time.max(*slot);
                *slot = time;
                self.queue.push(Reverse(Event {
                    time,
                    seq: self.seq,
                    from: ev.from,
                    to: t,
                    sent_at: ev.sent_at,
                    via_hub: false,
                    dest: None,
                    msg,
                }));
            }
            return None;
        }
        if self.cfg.drop_prob > 0.0 && self.rng.gen_bool(self.cfg.drop_prob) {
            self.stats.dropped += 1;
            let retry = ev.time + self.cfg.latency.sample(&mut self.rng).max(1);
            self.seq += 1;
            self.queue.push(Reverse(Event { time: retry, seq: self.seq, ..ev }));
            return None;
        }
        self.stats.delivered += 1;
        let bytes = self.take(ev.msg);
        Some(Delivered { time: ev.time, sent_at: ev.sent_at, from: ev.from, to: ev.to, bytes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(net: &mut SimNetwork) -> Vec<Delivered> {
        std::iter::from_fn(|| net.next_any()).collect()
    }

    #[test]
    fn same_seed_same_schedule() {
        let cfg = NetConfig { dup_prob: 0.2, drop_prob: 0.1, ..NetConfig::default() };
        let run = || {
            let mut net = SimNetwork::new(cfg.clone(), 4, 7);
            for i in 0..20u8 {
                net.broadcast(usize::from(i % 4), vec![i]);
            }
            drain(&mut net)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn at_least_once_under_drops() {
        let cfg = NetConfig { drop_prob: 0.5, ..NetConfig::default() };
        let mut net = SimNetwork::new(cfg, 3, 1);
        net.broadcast(0, vec![9]);
        let got = drain(&mut net);
        let mut to: Vec<usize> = got.iter().map(|d| d.to).collect();
        to.sort();
        assert_eq!(to, vec![1, 2]);
    }

    #[test]
    fn relay_preserves_per_sender_order() {
        let cfg = NetConfig { topology: Topology::Relay, ..NetConfig::default() };
        let mut net = SimNetwork::new(cfg, 3, 3);
        for i in 0..50u8 {
            net.broadcast(0, vec![i]);
        }
        let at1: Vec<u8> = drain(&mut net).into_iter().filter(|d| d.to == 1).map(|d| d.bytes[0]).collect();
        assert_eq!(at1, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn relay_send_arrives_after_earlier_broadcasts() {
        let cfg = NetConfig { topology: Topology::Relay, ..NetConfig::default() };
        let mut net = SimNetwork::new(cfg, 3, 5);
        for i in 0..20u8 {
            net.broadcast(0, vec![i]);
        }
        net.send(0, 1, vec![99]);
        let all = drain(&mut net);
        assert!(all.iter().all(|d| d.bytes[0] != 99 || d.to == 1));
        let at1: Vec<u8> = all.into_iter().filter(|d| d.to == 1).map(|d| d.bytes[0]).collect();
        assert_eq!(at1.last(), Some(&99));
        assert_eq!(at1.len(), 21);
    }

    #[test]
    fn partition_delays_until_heal() {
        let cfg = NetConfig {
            latency: Latency::Fixed(10),
            partitions: vec![Partition { start: 0, end: 1000, groups: vec![vec![0], vec![1]] }],
            ..NetConfig::default()
        };
        let mut net = SimNetwork::new(cfg, 2, 0);
        net.broadcast(0, vec![1]);
        let d = net.next_any().unwrap();
        assert_eq!(d.time, 1000);
    }
}
