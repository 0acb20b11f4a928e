use std::collections::BTreeMap;

use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::{Dot, ReplicaId, SaveNode};

/// Positive-negative counter.
///
/// `pos[r]`/`neg[r]` hold the totals added/subtracted by replica `r`. Since a
/// replica's delivered messages always form a prefix of its history, these
/// totals only grow, and state merge is an entrywise max.
#[derive(Debug, Default, Clone)]
pub struct CCounter {
    pos: BTreeMap<ReplicaId, u64>,
    neg: BTreeMap<ReplicaId, u64>,
}

impl CCounter {
    pub fn new(_init: &Init) -> Self {
        Self::default()
    }

    pub fn value(&self) -> i64 {
        let p: u64 = self.pos.values().sum();
        let n: u64 = self.neg.values().sum();
        p as i64 - n as i64
    }

    pub fn add_payload(n: i64) -> Result<Vec<u8>> {
        if n == 0 {
            return Err(Error::invalid("counter add of zero"));
        }
        let mut w = Writer::new();
        w.svarint(n);
        Ok(w.finish())
    }
}

fn encode_map(w: &mut Writer, m: &BTreeMap<ReplicaId, u64>) {
    w.varint(m.len() as u64);
    for (r, v) in m {
        w.str(r.as_str()).varint(*v);
    }
}

fn decode_map(r: &mut Reader<'_>) -> Result<BTreeMap<ReplicaId, u64>> {
    let n = r.len_prefix()?;
    let mut m = BTreeMap::new();
    for _ in 0..n {
        let id = ReplicaId::new(r.str()?)?;
        m.insert(id, r.varint()?);
    }
    Ok(m)
}

fn merge_max(into: &mut BTreeMap<ReplicaId, u64>, from: &BTreeMap<ReplicaId, u64>) {
    for (r, &v) in from {
        let slot = into.entry(r.clone()).or_insert(0);
        *slot = (*slot).max(v);
    }
}

impl Collab for CCounter {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        if !path.is_empty() {
            return Err(Error::UnknownChild(path[0].clone()));
        }
        let mut r = Reader::new(payload);
        let n = r.svarint()?;
        r.expect_end()?;
        let side = if n >= 0 { &mut self.pos } else { &mut self.neg };
        *side.entry(meta.replica().clone()).or_insert(0) += n.unsigned_abs();
        Ok(())
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        encode_map(&mut w, &self.pos);
        encode_map(&mut w, &self.neg);
        SaveNode::leaf(w.finish())
    }

    fn load(&mut self, save: &SaveNode, _cx: &MergeContext<'_>) -> Result<()> {
        let mut r = Reader::new(&save.data);
        let pos = decode_map(&mut r)?;
        let neg = decode_map(&mut r)?;
        r.expect_end()?;
        merge_max(&mut self.pos, &pos);
        merge_max(&mut self.neg, &neg);
        Ok(())
    }

    fn observe(&self) -> Json {
        Json::from(self.value())
    }
}

impl Handle<CCounter> {
    pub fn add(&self, doc: &mut Document, n: i64) -> Result<Dot> {
        doc.send(self.path().clone(), CCounter::add_payload(n)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Mode;

    fn doc(id: &str) -> (Document, Handle<CCounter>) {
        let mut d = Document::new(id.into(), Mode::Full);
        let h = d.register("counter", CCounter::new).unwrap();
        (d, h)
    }

    #[test]
    fn three_replicas_each_add_one() {
        let mut docs: Vec<_> = ["a", "b", "c"].iter().map(|id| doc(id)).collect();
        let mut envs = Vec::new();
        for (d, h) in docs.iter_mut() {
            h.add(d, 1).unwrap();
            envs.extend(d.take_outbox());
        }
        for (d, h) in docs.iter_mut() {
            for e in &envs {
                d.receive(e.clone()).unwrap();
            }
            assert_eq!(d.get(h).unwrap().value(), 3);
        }
    }

    #[test]
    fn add_and_subtract() {
        let (mut d, h) = doc("a");
        h.add(&mut d, 5).unwrap();
        h.add(&mut d, -2).unwrap();
        assert_eq!(d.get(&h).unwrap().value(), 3);
        assert!(h.add(&mut d, 0).is_err());
    }

    #[test]
    fn disjoint_merge_sums() {
        let (mut a, ha) = doc("a");
        let (mut b, hb) = doc("b");
        ha.add(&mut a, 2).unwrap();
        hb.add(&mut b, 5).unwrap();
        a.load(&b.save()).unwrap();
        assert_eq!(a.get(&ha).unwrap().value(), 7);
        let again = a.save();
        a.load(&again).unwrap();
        assert_eq!(a.get(&ha).unwrap().value(), 7);
    }
}
