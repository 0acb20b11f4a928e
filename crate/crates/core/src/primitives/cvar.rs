use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::{Dot, ReplicaId, SaveNode};

use super::value::Value;

/// Lamport timestamp plus writer id; compared lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LwwTag {
    pub lamport: u64,
    pub writer: ReplicaId,
}

/// Last-writer-wins register.
#[derive(Debug, Clone)]
pub struct CVar<V: Value> {
    value: V,
    tag: Option<LwwTag>,
    initial: V,
    inverted: bool,
}

impl<V: Value> CVar<V> {
    pub fn new(init: &Init, initial: V) -> Self {
        CVar { value: initial.clone(), tag: None, initial, inverted: init.faults().invert_lww_tiebreak }
    }

    pub fn get(&self) -> &V {
        &self.value
    }

    pub fn initial(&self) -> &V {
        &self.initial
    }

    pub fn tag(&self) -> Option<&LwwTag> {
        self.tag.as_ref()
    }

    pub fn set_payload(v: &V) -> Vec<u8> {
        let mut w = Writer::new();
        v.encode(&mut w);
        w.finish()
    }

    fn wins(&self, candidate: &LwwTag) -> bool {
        match &self.tag {
            None => true,
            Some(cur) => {
                if candidate.lamport != cur.lamport {
                    return candidate.lamport > cur.lamport;
                }
                if self.inverted {
                    candidate.writer < cur.writer
                } else {
                    candidate.writer > cur.writer
                }
            }
        }
    }

    fn offer(&mut self, value: V, tag: LwwTag) {
        if self.wins(&tag) {
            self.value = value;
            self.tag = Some(tag);
        }
    }
}

impl<V: Value> Collab for CVar<V> {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        if !path.is_empty() {
            return Err(Error::UnknownChild(path[0].clone()));
        }
        let mut r = Reader::new(payload);
        let v = V::decode(&mut r)?;
        r.expect_end()?;
        self.offer(v, LwwTag { lamport: meta.lamport, writer: meta.replica().clone() });
        Ok(())
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        match &self.tag {
            None => {
                w.u8(0);
            }
            Some(tag) => {
                w.u8(1).varint(tag.lamport).str(tag.writer.as_str());
                self.value.encode(&mut w);
            }
        }
        SaveNode::leaf(w.finish())
    }

    fn load(&mut self, save: &SaveNode, _cx: &MergeContext<'_>) -> Result<()> {
        let mut r = Reader::new(&save.data);
        match r.u8()? {
            0 => {}
            1 => {
                let lamport = r.varint()?;
                let writer = ReplicaId::new(r.str()?)?;
                let v = V::decode(&mut r)?;
                self.offer(v, LwwTag { lamport, writer });
            }
            b => return Err(Error::decode(format!("bad register tag {b}"))),
        }
        r.expect_end()
    }

    fn observe(&self) -> Json {
        self.value.to_json()
    }
}

impl<V: Value> Handle<CVar<V>> {
    pub fn set(&self, doc: &mut Document, v: V) -> Result<Dot> {
        doc.send(self.path().clone(), CVar::set_payload(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Mode;

    fn doc(id: &str) -> (Document, Handle<CVar<String>>) {
        let mut d = Document::new(id.into(), Mode::Full);
        let h = d.register("var", |i| CVar::new(i, "GRAMS".to_string())).unwrap();
        (d, h)
    }

    #[test]
    fn initial_then_causal_chain() {
        let (mut d, h) = doc("a");
        assert_eq!(d.get(&h).unwrap().get(), "GRAMS");
        h.set(&mut d, "A".into()).unwrap();
        h.set(&mut d, "B".into()).unwrap();
        assert_eq!(d.get(&h).unwrap().get(), "B");
    }

    #[test]
    fn equal_lamport_greater_writer_wins_in_both_orders() {
        let (mut a, ha) = doc("a");
        let (mut b, hb) = doc("b");
        ha.set(&mut a, "from-a".into()).unwrap();
        hb.set(&mut b, "from-b".into()).unwrap();
        let ea = a.take_outbox();
        let eb = b.take_outbox();
        assert_eq!(ea[0].lamport, eb[0].lamport);
        for e in eb {
            a.receive(e).unwrap();
        }
        for e in ea {
            b.receive(e).unwrap();
        }
        assert_eq!(a.get(&ha).unwrap().get(), "from-b");
        assert_eq!(b.get(&hb).unwrap().get(), "from-b");
    }

    #[test]
    fn inverted_tiebreak_diverges() {
        let mut a = Document::with_faults("a".into(), Mode::Full, crate::Faults { invert_lww_tiebreak: true });
        let ha = a.register("var", |i| CVar::new(i, 0i64)).unwrap();
        let mut c = Document::new("c".into(), Mode::Full);
        let hc = c.register("var", |i| CVar::new(i, 0i64)).unwrap();
        hc.set(&mut c, 7).unwrap();
        ha.set(&mut a, 3).unwrap();
        let from_c = c.take_outbox();
        for e in from_c {
            a.receive(e).unwrap();
        }
        // "c" > "a", so a correct replica would adopt 7.
        assert_eq!(*a.get(&ha).unwrap().get(), 3);
    }
}
