use std::collections::BTreeMap;

use crate::encoding::{Reader, Writer};
use crate::error::Result;

use super::ids::{Dot, ReplicaId};

/// Maximum contiguous counter delivered per replica. Absent entries are 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VectorClock {
    entries: BTreeMap<ReplicaId, u64>,
}

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, replica: &ReplicaId) -> u64 {
        self.entries.get(replica).copied().unwrap_or(0)
    }

    pub fn covers(&self, dot: &Dot) -> bool {
        self.get(&dot.replica) >= dot.counter
    }

    /// Raises the entry for `dot.replica` to at least `dot.counter`.
    pub fn observe(&mut self, dot: &Dot) {
        self.raise(&dot.replica, dot.counter);
    }

    pub fn raise(&mut self, replica: &ReplicaId, counter: u64) {
        if counter == 0 {
            return;
        }
        let slot = self.entries.entry(replica.clone()).or_insert(0);
        if *slot < counter {
            *slot = counter;
        }
    }

    /// Entrywise max.
    pub fn merge(&mut self, other: &VectorClock) {
        for (r, &c) in &other.entries {
            self.raise(r, c);
        }
    }

    /// True iff every entry of `other` is covered by `self`.
    pub fn dominates(&self, other: &VectorClock) -> bool {
        other.entries.iter().all(|(r, &c)| self.get(r) >= c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ReplicaId, u64)> + '_ {
        self.entries.iter().map(|(r, &c)| (r, c))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of dots covered.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.varint(self.entries.len() as u64);
        for (r, &c) in &self.entries {
            w.str(r.as_str()).varint(c);
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.len_prefix()?;
        let mut vc = VectorClock::new();
        for _ in 0..n {
            let id = ReplicaId::new(r.str()?)?;
            let c = r.varint()?;
            vc.raise(&id, c);
        }
        Ok(vc)
    }
}

impl FromIterator<(ReplicaId, u64)> for VectorClock {
    fn from_iter<I: IntoIterator<Item = (ReplicaId, u64)>>(iter: I) -> Self {
        let mut vc = VectorClock::new();
        for (r, c) in iter {
            vc.raise(&r, c);
        }
        vc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vc(pairs: &[(&str, u64)]) -> VectorClock {
        pairs.iter().map(|&(r, c)| (ReplicaId::from(r), c)).collect()
    }

    #[test]
    fn coverage_and_merge() {
        let mut a = vc(&[("a", 3)]);
        assert!(a.covers(&Dot::new("a".into(), 3)));
        assert!(!a.covers(&Dot::new("a".into(), 4)));
        assert!(!a.covers(&Dot::new("b".into(), 1)));
        a.merge(&vc(&[("a", 1), ("b", 2)]));
        assert_eq!(a, vc(&[("a", 3), ("b", 2)]));
        assert!(a.dominates(&vc(&[("b", 2)])));
        assert!(!vc(&[("b", 2)]).dominates(&a));
    }

    #[test]
    fn zero_entries_are_not_stored() {
        let a = vc(&[("a", 0)]);
        assert!(a.is_empty());
    }
}
