use std::collections::{HashMap, HashSet};

use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::SaveNode;

use super::local_list::LocalList;
use super::position::{Creation, PosKey, Position, PositionTree, WaypointId};
use super::value::Value;

const OP_INSERT: u8 = 0;
const OP_DELETE: u8 = 1;

/// List of plain values with an embedded position order.
///
/// Deleted values are dropped outright; only the position skeleton stays.
/// A position is known locally iff the op that created it has been
/// incorporated, so "known but not present" means deleted.
#[derive(Debug, Clone)]
pub struct CValueList<V: Value> {
    tree: PositionTree,
    list: LocalList<PosKey, (Position, V)>,
}

/// Plain-text list.
pub type CText = CValueList<char>;

impl<V: Value> Default for CValueList<V> {
    fn default() -> Self {
        CValueList { tree: PositionTree::new(), list: LocalList::new() }
    }
}

/// A run of consecutive positions in one waypoint.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Run {
    start: Position,
    len: u64,
}

fn runs<'a>(positions: impl Iterator<Item = &'a Position>) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for p in positions {
        if let Some(last) = out.last_mut() {
            if last.start.waypoint == p.waypoint && last.start.offset + last.len == p.offset {
                last.len += 1;
                continue;
            }
        }
        out.push(Run { start: p.clone(), len: 1 });
    }
    out
}

fn run_positions(run: &Run) -> impl Iterator<Item = Position> + '_ {
    (0..run.len).map(move |i| Position { waypoint: run.start.waypoint.clone(), offset: run.start.offset + i })
}

impl<V: Value> CValueList<V> {
    pub fn new(_init: &Init) -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&V> {
        self.list.get(index).map(|(_, (_, v))| v)
    }

    pub fn position_at(&self, index: usize) -> Option<&Position> {
        self.list.get(index).map(|(_, (p, _))| p)
    }

    pub fn index_of(&self, pos: &Position) -> Option<usize> {
        let key = self.tree.key(pos).ok()?;
        self.list.index_of(&key)
    }

    pub fn values(&self) -> impl Iterator<Item = &V> + '_ {
        self.list.iter().map(|(_, (_, v))| v)
    }

    pub fn to_vec(&self) -> Vec<V> {
        self.values().cloned().collect()
    }

    pub fn tree(&self) -> &PositionTree {
        &self.tree
    }

    fn insert_payload(&self, me: &crate::runtime::ReplicaId, index: usize, values: &[V]) -> Result<Vec<u8>> {
        if index > self.len() {
            return Err(Error::Range { index, len: self.len() });
        }
        if values.is_empty() {
            return Err(Error::invalid("insert of no values"));
        }
        let prev = index.checked_sub(1).and_then(|i| self.position_at(i));
        let next = self.position_at(index);
        let creation = self.tree.plan(me, prev, next, values.len() as u64)?;
        let mut w = Writer::new();
        w.u8(OP_INSERT);
        creation.encode(&mut w);
        V::encode_seq(values, &mut w);
        Ok(w.finish())
    }

    fn delete_payload(&self, index: usize, count: usize) -> Result<Vec<u8>> {
        if count == 0 || index + count > self.len() {
            return Err(Error::Range { index: index + count, len: self.len() });
        }
        let rs = runs(self.list.range(index, count).map(|(_, (p, _))| p));
        let mut w = Writer::new();
        w.u8(OP_DELETE).varint(rs.len() as u64);
        for r in &rs {
            r.start.encode(&mut w);
            w.varint(r.len);
        }
        Ok(w.finish())
    }

    fn add(&mut self, pos: Position, v: V) -> Result<()> {
        let key = self.tree.key(&pos)?;
        self.list.insert(key, (pos, v));
        Ok(())
    }

    /// Rebuilds the view from scratch; used to check the incremental one.
    pub fn rebuilt(&self) -> Vec<V> {
        let mut entries: Vec<(PosKey, V)> =
            self.list.iter().map(|(_, (p, v))| (self.tree.key(p).expect("present implies known"), v.clone())).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries.into_iter().map(|(_, v)| v).collect()
    }
}

impl CValueList<char> {
    pub fn as_string(&self) -> String {
        self.values().collect()
    }
}

impl<V: Value> Collab for CValueList<V> {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        if let Some(seg) = path.first() {
            return Err(Error::UnknownChild(seg.clone()));
        }
        let mut r = Reader::new(payload);
        match r.u8()? {
            OP_INSERT => {
                let creation = Creation::decode(&mut r)?;
                let values = V::decode_seq(&mut r)?;
                r.expect_end()?;
                if values.len() as u64 != creation.count() {
                    return Err(Error::decode("insert value count mismatch"));
                }
                let first = self.tree.apply(&creation, meta.sender)?;
                for (i, v) in values.into_iter().enumerate() {
                    let pos = Position { waypoint: first.waypoint.clone(), offset: first.offset + i as u64 };
                    self.add(pos, v)?;
                }
            }
            OP_DELETE => {
                let n = r.len_prefix()?;
                let mut rs = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    rs.push(Run { start: Position::decode(&mut r)?, len: r.varint()? });
                }
                r.expect_end()?;
                for run in &rs {
                    for p in run_positions(run) {
                        let key = self.tree.key(&p).map_err(|_| Error::decode(format!("delete of unknown {p:?}")))?;
                        // Already gone if a concurrent delete got there first.
                        self.list.remove(&key);
                    }
                }
            }
            t => return Err(Error::decode(format!("bad list op {t}"))),
        }
        Ok(())
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        PositionTree::encode_records(&self.tree.records(), &mut w);
        let rs = runs(self.list.iter().map(|(_, (p, _))| p));
        w.varint(rs.len() as u64);
        let mut it = self.list.iter();
        for run in &rs {
            run.start.encode(&mut w);
            let vals: Vec<V> = it.by_ref().take(run.len as usize).map(|(_, (_, v))| v.clone()).collect();
            V::encode_seq(&vals, &mut w);
        }
        SaveNode::leaf(w.finish())
    }

    fn load(&mut self, save: &SaveNode, _cx: &MergeContext<'_>) -> Result<()> {
        let mut r = Reader::new(&save.data);
        let records = PositionTree::decode_records(&mut r)?;
        let n = r.len_prefix()?;
        let mut remote_present: Vec<(Position, V)> = Vec::new();
        for _ in 0..n {
            let start = Position::decode(&mut r)?;
            let vals = V::decode_seq(&mut r)?;
            if vals.is_empty() {
                return Err(Error::decode("empty run"));
            }
            for (i, v) in vals.into_iter().enumerate() {
                remote_present
                    .push((Position { waypoint: start.waypoint.clone(), offset: start.offset + i as u64 }, v));
            }
        }
        r.expect_end()?;

        let remote_len: HashMap<&WaypointId, u64> = records.iter().map(|rec| (&rec.id, rec.len)).collect();
        let remote_knows = |p: &Position| remote_len.get(&p.waypoint).is_some_and(|&len| p.offset < len);
        for (p, _) in &remote_present {
            if !remote_knows(p) {
                return Err(Error::decode(format!("present value at unknown {p:?}")));
            }
        }

        // Remote-present values new to us are added; known-but-absent ones
        // were deleted here. Local values the remote knows but lacks were
        // deleted there.
        let remote_set: HashSet<&Position> = remote_present.iter().map(|(p, _)| p).collect();
        let deletions: Vec<Position> = self
            .list
            .iter()
            .map(|(_, (p, _))| p)
            .filter(|p| remote_knows(p) && !remote_set.contains(*p))
            .cloned()
            .collect();
        let additions: Vec<(Position, V)> =
            remote_present.iter().filter(|(p, _)| !self.tree.contains(p)).cloned().collect();
        let mut tree = self.tree.clone();
        tree.merge(&records)?;

        self.tree = tree;
        for p in deletions {
            let key = self.tree.key(&p)?;
            self.list.remove(&key);
        }
        for (p, v) in additions {
            self.add(p, v)?;
        }
        Ok(())
    }

    fn observe(&self) -> Json {
        Json::Array(self.values().map(Value::to_json).collect())
    }
}

impl<V: Value> Handle<CValueList<V>> {
    pub fn insert(&self, doc: &mut Document, index: usize, values: Vec<V>) -> Result<()> {
        let payload = doc.get(self)?.insert_payload(doc.replica(), index, &values)?;
        doc.send(self.path().clone(), payload)?;
        Ok(())
    }

    pub fn push(&self, doc: &mut Document, value: V) -> Result<()> {
        let len = doc.get(self)?.len();
        self.insert(doc, len, vec![value])
    }

    pub fn delete(&self, doc: &mut Document, index: usize, count: usize) -> Result<()> {
        let payload = doc.get(self)?.delete_payload(index, count)?;
        doc.send(self.path().clone(), payload)?;
        Ok(())
    }
}

impl Handle<CText> {
    pub fn insert_str(&self, doc: &mut Document, index: usize, s: &str) -> Result<()> {
        self.insert(doc, index, s.chars().collect())
    }

    pub fn text(&self, doc: &Document) -> Result<String> {
        Ok(doc.get(self)?.as_string())
    }
}
