use std::cmp::Ordering;

use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::SaveNode;

use super::position::{Creation, PosKey, Position, PositionTree, WaypointId};

/// Replicated dense total order. Its only operation creates positions;
/// positions are never removed.
#[derive(Debug, Default, Clone)]
pub struct CTotalOrder {
    tree: PositionTree,
}

impl CTotalOrder {
    pub fn new(_init: &Init) -> Self {
        Self::default()
    }

    pub fn tree(&self) -> &PositionTree {
        &self.tree
    }

    pub fn contains(&self, pos: &Position) -> bool {
        self.tree.contains(pos)
    }

    pub fn compare(&self, a: &Position, b: &Position) -> Result<Ordering> {
        self.tree.compare(a, b)
    }

    pub fn key(&self, pos: &Position) -> Result<PosKey> {
        self.tree.key(pos)
    }

    pub fn positions(&self) -> Vec<Position> {
        self.tree.traverse()
    }
}

/// Position produced by a creation sent as `dot`.
pub(crate) fn created_position(creation: &Creation, dot: &crate::runtime::Dot) -> Position {
    match creation {
        Creation::New { .. } => Position { waypoint: WaypointId::from_dot(dot), offset: 0 },
        Creation::Extend { counter, start, .. } => {
            Position { waypoint: WaypointId { counter: *counter, creator: dot.replica.clone() }, offset: *start }
        }
    }
}

impl Collab for CTotalOrder {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        if let Some(seg) = path.first() {
            return Err(Error::UnknownChild(seg.clone()));
        }
        let mut r = Reader::new(payload);
        let creation = Creation::decode(&mut r)?;
        r.expect_end()?;
        self.tree.apply(&creation, meta.sender)?;
        Ok(())
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        PositionTree::encode_records(&self.tree.records(), &mut w);
        SaveNode::leaf(w.finish())
    }

    fn load(&mut self, save: &SaveNode, _cx: &MergeContext<'_>) -> Result<()> {
        let mut r = Reader::new(&save.data);
        let records = PositionTree::decode_records(&mut r)?;
        r.expect_end()?;
        let mut merged = self.tree.clone();
        merged.merge(&records)?;
        self.tree = merged;
        Ok(())
    }

    fn observe(&self) -> Json {
        Json::Array(self.tree.traverse().iter().map(|p| Json::String(p.to_string())).collect())
    }
}

impl Handle<CTotalOrder> {
    /// Creates a position strictly between `prev` and `next` (`None` =
    /// start/end sentinels).
    pub fn create_position(
        &self,
        doc: &mut Document,
        prev: Option<&Position>,
        next: Option<&Position>,
    ) -> Result<Position> {
        let creation = doc.get(self)?.tree.plan(doc.replica(), prev, next, 1)?;
        let mut w = Writer::new();
        creation.encode(&mut w);
        let dot = doc.send(self.path().clone(), w.finish())?;
        Ok(created_position(&creation, &dot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Mode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str) -> (Document, Handle<CTotalOrder>) {
        let mut d = Document::new(id.into(), Mode::Full);
        let h = d.register("order", CTotalOrder::new).unwrap();
        (d, h)
    }

    #[test]
    fn density_between_neighbours() {
        let (mut d, h) = doc("a");
        let p = h.create_position(&mut d, None, None).unwrap();
        let q = h.create_position(&mut d, Some(&p), None).unwrap();
        let m = h.create_position(&mut d, Some(&p), Some(&q)).unwrap();
        let o = d.get(&h).unwrap();
        assert_eq!(o.compare(&p, &m).unwrap(), Ordering::Less);
        assert_eq!(o.compare(&m, &q).unwrap(), Ordering::Less);
        assert!(h.create_position(&mut d, Some(&q), Some(&p)).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let (mut a, ha) = doc("a");
        let p = ha.create_position(&mut a, None, None).unwrap();
        ha.create_position(&mut a, None, Some(&p)).unwrap();
        let (mut b, hb) = doc("b");
        b.load(&a.save()).unwrap();
        assert_eq!(b.get(&hb).unwrap().positions(), a.get(&ha).unwrap().positions());
        assert_eq!(b.digest(), a.digest());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn traversal_agrees_with_compare(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut docs: Vec<_> = ["a", "b", "c"].iter().map(|r| doc(r)).collect();
            // Create ~100 positions at random spots on random replicas, with
            // partial sync so concurrent siblings arise.
            for _ in 0..100 {
                let i = rng.gen_range(0..docs.len());
                let (d, h) = &mut docs[i];
                let order = d.get(h).unwrap().positions();
                let at = rng.gen_range(0..=order.len());
                let prev = at.checked_sub(1).map(|j| order[j].clone());
                let next = order.get(at).cloned();
                h.create_position(d, prev.as_ref(), next.as_ref()).unwrap();
                if rng.gen_bool(0.3) {
                    let out = d.take_outbox();
                    for (j, (other, _)) in docs.iter_mut().enumerate() {
                        if j != i {
                            for e in &out {
                                other.receive(e.clone()).unwrap();
                            }
                        }
                    }
                }
            }
            let mut all = Vec::new();
            for (d, _) in docs.iter_mut() {
                all.extend(d.take_outbox());
            }
            for (d, _) in docs.iter_mut() {
                for e in &all {
                    d.receive(e.clone()).unwrap();
                }
            }
            let t0 = docs[0].0.get(&docs[0].1).unwrap().positions();
            for (d, h) in &docs {
                prop_assert_eq!(&d.get(h).unwrap().positions(), &t0);
            }
            let o = docs[0].0.get(&docs[0].1).unwrap();
            for w in t0.windows(2) {
                prop_assert_eq!(o.compare(&w[0], &w[1]).unwrap(), Ordering::Less);
            }
            for _ in 0..200 {
                let x = &t0[rng.gen_range(0..t0.len())];
                let y = &t0[rng.gen_range(0..t0.len())];
                let ix = t0.iter().position(|p| p == x).unwrap();
                let iy = t0.iter().position(|p| p == y).unwrap();
                prop_assert_eq!(o.compare(x, y).unwrap(), ix.cmp(&iy));
            }
        }
    }
}
