//! Op/state equivalence: loading a save must match replaying the envelopes
//! it covers, and state merges must commute and be idempotent.

use collab_kernel::{Document, MessageEnvelope, Mode, ReplicaId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::workload::{FuzzDoc, Target};
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Debug, Default, Serialize)]
pub struct EquivReport {
    pub seed: u64,
    pub ops: usize,
    pub loads: usize,
    /// Human-readable description of every violated property.
    pub violations: Vec<String>,
}

impl EquivReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

fn fresh(id: &str) -> Result<Document> {
    let mut doc = Document::new(ReplicaId::new(id)?, Mode::Full);
    FuzzDoc::register(&mut doc)?;
    Ok(doc)
}

fn digest(doc: &Document) -> String {
    doc.digest().to_hex()
}

/// Replays, in causal order, every logged envelope covered by `doc`'s clock.
fn replay(doc: &Document, log: &[MessageEnvelope]) -> Result<Document> {
    let mut r = fresh("replay")?;
    for env in log.iter().filter(|e| doc.clock().covers(&e.sender)) {
        r.receive(env.clone())?;
    }
    Ok(r)
}

/// Three replicas, `ops` random ops, random partial delivery and loads.
pub fn equivalence_run(seed: u64, ops: usize) -> Result<EquivReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut fds = Vec::new();
    for _ in 0..3 {
        let mut d = Document::new(ReplicaId::random(&mut rng), Mode::Full);
        fds.push(FuzzDoc::register(&mut d)?);
        docs.push(d);
    }
    // Global send order is a linear extension of causality.
    let mut log: Vec<MessageEnvelope> = Vec::new();
    let mut report = EquivReport { seed, ops, ..EquivReport::default() };
    for _ in 0..ops {
        let r = rng.gen_range(0..3);
        let t = Target::ALL[rng.gen_range(0..Target::ALL.len())];
        fds[r].op(t, &mut docs[r], &mut rng)?;
        log.extend(docs[r].take_outbox());
        let to = rng.gen_range(0..3);
        match rng.gen_range(0..10) {
            0..=3 => {
                for env in log.iter().filter(|_| rng.gen_bool(0.5)) {
                    docs[to].receive(env.clone())?;
                }
            }
            4 => {
                let from = (to + rng.gen_range(1..3)) % 3;
                let save = docs[from].save();
                docs[to].load(&save)?;
                report.loads += 1;
            }
            _ => {}
        }
    }
    let saves: Vec<Vec<u8>> = docs.iter().map(Document::save).collect();
    for (i, d) in docs.iter().enumerate() {
        let mut loaded = fresh("loader")?;
        loaded.load(&saves[i])?;
        let replayed = replay(d, &log)?;
        if digest(&loaded) != digest(d) {
            report.violations.push(format!("replica {i}: load of save differs from the replica"));
        }
        if digest(&replayed) != digest(d) {
            report.violations.push(format!("replica {i}: replay differs from the replica"));
        }
        loaded.load(&saves[i])?;
        if digest(&loaded) != digest(d) {
            report.violations.push(format!("replica {i}: loading a save twice changed state"));
        }
    }
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        let mut ij = fresh("m1")?;
        ij.load(&saves[i])?;
        ij.load(&saves[j])?;
        let mut ji = fresh("m2")?;
        ji.load(&saves[j])?;
        ji.load(&saves[i])?;
        if digest(&ij) != digest(&ji) {
            report.violations.push(format!("merge of {i} and {j} does not commute"));
        }
        let union = replay(&ij, &log)?;
        if digest(&ij) != digest(&union) {
            report.violations.push(format!("merge of {i} and {j} differs from replaying their union"));
        }
        let before = digest(&ij);
        ij.load(&saves[j])?;
        if digest(&ij) != before {
            report.violations.push(format!("re-merging {j} into merge({i},{j}) changed state"));
        }
        // In-place merge between live replicas.
        let mut a = fresh("a2")?;
        a.load(&saves[i])?;
        let mut b = fresh("b2")?;
        b.load(&saves[j])?;
        a.load(&b.save())?;
        b.load(&saves[i])?;
        if digest(&a) != digest(&b) {
            report.violations.push(format!("cross-merge of {i} and {j} diverged"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_few_runs_hold() {
        for seed in 0..5 {
            let r = equivalence_run(seed, 40).unwrap();
            assert!(r.pass(), "{r:?}");
        }
    }
}
