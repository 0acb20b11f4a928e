use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::primitives::{CTotalOrder, CVar, LocalList, PosKey, Position};
use crate::runtime::{Dot, SaveNode, TreePath, VectorClock};

use super::set::{parse_name, CSet, SetEvent};

const ORDER: &str = "~order";
const ARCHIVE: &str = "~archive";
const SET: &str = "~set";
const POS: &str = "~pos";
const VALUE: &str = "~value";

/// A list element paired with its current position.
pub struct CListEntry<C: Collab> {
    position: CVar<Position>,
    value: C,
}

impl<C: Collab> CListEntry<C> {
    pub fn position(&self) -> &Position {
        self.position.get()
    }

    pub fn value(&self) -> &C {
        &self.value
    }
}

impl<C: Collab> Collab for CListEntry<C> {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        match path.split_first() {
            Some((h, rest)) if h == POS => self.position.receive(rest, payload, meta),
            _ => self.value.receive(path, payload, meta),
        }
    }

    fn save(&self) -> SaveNode {
        let mut node = SaveNode::default();
        node.children.insert(POS.to_owned(), self.position.save());
        node.children.insert(VALUE.to_owned(), self.value.save());
        node
    }

    fn load(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<()> {
        let pos = save.child(POS).ok_or_else(|| Error::decode("entry save without position"))?;
        let value = save.child(VALUE).ok_or_else(|| Error::decode("entry save without value"))?;
        self.position.load(pos, cx)?;
        self.value.load(value, cx)
    }

    fn observe(&self) -> Json {
        self.value.observe()
    }

    fn check_route(&self, path: &[String]) -> Result<()> {
        match path.split_first() {
            Some((h, rest)) if h == POS => self.position.check_route(rest),
            _ => self.value.check_route(path),
        }
    }

    fn child(&self, name: &str) -> Option<&dyn Collab> {
        self.value.child(name)
    }
}

/// List of child components with move, delete-wins deletion, and
/// update-wins archiving.
///
/// Composed of a [`CTotalOrder`], a [`CSet`] of (value, position register)
/// entries, and per-entry archive records. An archive record carries the
/// archiver's view of the entry's op history; any op on the entry that the
/// archiver had not seen cancels it. The visible list is a cache rebuilt
/// from those parts.
pub struct CList<C: Collab> {
    order: CTotalOrder,
    set: CSet<CListEntry<C>>,
    /// Per entry, the max counter per replica of ops delivered to it.
    seen: BTreeMap<String, VectorClock>,
    archives: BTreeMap<String, BTreeMap<Dot, VectorClock>>,
    view: LocalList<(PosKey, String), ()>,
    keys: BTreeMap<String, PosKey>,
}

impl<C: Collab> fmt::Debug for CList<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CList").field("visible", &self.visible_names()).field("archives", &self.archives).finish()
    }
}

fn canceled(seen: Option<&VectorClock>, observed: &VectorClock) -> bool {
    seen.is_some_and(|s| s.iter().any(|(r, c)| c > observed.get(r)))
}

impl<C: Collab> CList<C> {
    pub fn new(init: &Init, factory: impl Fn(&Init, &[u8]) -> Result<C> + 'static) -> Self {
        let set = CSet::new(init, move |init: &Init, args: &[u8]| {
            let mut r = Reader::new(args);
            let pos = Position::decode(&mut r)?;
            let value = factory(init, r.remaining())?;
            Ok(CListEntry { position: CVar::new(init, pos), value })
        });
        CList {
            order: CTotalOrder::new(init),
            set,
            seen: BTreeMap::new(),
            archives: BTreeMap::new(),
            view: LocalList::new(),
            keys: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.view.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view.is_empty()
    }

    pub fn name_at(&self, index: usize) -> Option<&str> {
        self.view.get(index).map(|((_, name), _)| name.as_str())
    }

    pub fn get(&self, index: usize) -> Option<&C> {
        self.entry(self.name_at(index)?).map(CListEntry::value)
    }

    pub fn position_at(&self, index: usize) -> Option<&Position> {
        self.entry(self.name_at(index)?).map(CListEntry::position)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let key = self.keys.get(name)?;
        self.view.index_of(&(key.clone(), name.to_owned()))
    }

    pub fn entry(&self, name: &str) -> Option<&CListEntry<C>> {
        self.set.get(name)
    }

    pub fn values(&self) -> impl Iterator<Item = &C> + '_ {
        self.view.iter().filter_map(|((_, name), _)| self.set.get(name).map(CListEntry::value))
    }

    pub fn visible_names(&self) -> Vec<String> {
        self.view.iter().map(|((_, n), _)| n.clone()).collect()
    }

    /// Present but hidden by an uncanceled archive.
    pub fn is_archived(&self, name: &str) -> bool {
        self.set.has(name) && !self.visible(name)
    }

    /// Names of present entries, archived ones included.
    pub fn entry_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.set.names()
    }

    pub fn order(&self) -> &CTotalOrder {
        &self.order
    }

    fn visible(&self, name: &str) -> bool {
        if !self.set.has(name) {
            return false;
        }
        let seen = self.seen.get(name);
        self.archives.get(name).is_none_or(|recs| recs.values().all(|obs| canceled(seen, obs)))
    }

    fn refresh(&mut self, name: &str) -> Result<()> {
        if let Some(old) = self.keys.remove(name) {
            self.view.remove(&(old, name.to_owned()));
        }
        if self.visible(name) {
            let pos = self.set.get(name).expect("visible implies present").position();
            let key = self.order.key(pos)?;
            self.view.insert((key.clone(), name.to_owned()), ());
            self.keys.insert(name.to_owned(), key);
        }
        Ok(())
    }

    fn forget(&mut self, name: &str) {
        self.seen.remove(name);
        self.archives.remove(name);
        if let Some(old) = self.keys.remove(name) {
            self.view.remove(&(old, name.to_owned()));
        }
    }

    /// Visible entry names computed from scratch, for checking the cached
    /// view.
    pub fn rebuild_view(&self) -> Result<Vec<String>> {
        let mut out: Vec<(PosKey, String)> = Vec::new();
        for name in self.set.names() {
            if self.visible(name) {
                let pos = self.set.get(name).expect("listed").position();
                out.push((self.order.key(pos)?, name.to_owned()));
            }
        }
        out.sort();
        Ok(out.into_iter().map(|(_, n)| n).collect())
    }

    fn rebuild(&mut self) -> Result<()> {
        let mut entries = Vec::new();
        self.keys.clear();
        for name in self.set.names() {
            if self.visible(name) {
                let pos = self.set.get(name).expect("listed").position();
                let key = self.order.key(pos)?;
                self.keys.insert(name.to_owned(), key.clone());
                entries.push(((key, name.to_owned()), ()));
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        self.view = LocalList::from_sorted(entries);
        Ok(())
    }

    fn archive_payload(&self, name: &str) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(name);
        self.seen.get(name).cloned().unwrap_or_default().encode(&mut w);
        w.finish()
    }
}

impl<C: Collab> Collab for CList<C> {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        match path.split_first() {
            None => match self.set.receive_op(payload, meta)? {
                SetEvent::Created(name) => {
                    self.seen.entry(name.clone()).or_default().observe(meta.sender);
                    self.refresh(&name)
                }
                SetEvent::Deleted(name) => {
                    self.forget(&name);
                    Ok(())
                }
                SetEvent::Noop => Ok(()),
            },
            Some((h, rest)) if h == ORDER => self.order.receive(rest, payload, meta),
            Some((h, rest)) if h == ARCHIVE => {
                if !rest.is_empty() {
                    return Err(Error::UnknownChild(rest[0].clone()));
                }
                let mut r = Reader::new(payload);
                let name = r.str()?.to_owned();
                let observed = VectorClock::decode(&mut r)?;
                r.expect_end()?;
                if self.set.has(&name) {
                    self.archives.entry(name.clone()).or_default().insert(meta.sender.clone(), observed);
                    self.refresh(&name)
                } else if meta.local_clock.covers(&parse_name(&name)?) {
                    Ok(())
                } else {
                    Err(Error::UnknownChild(name))
                }
            }
            Some((name, rest)) => {
                if self.set.receive_child(name, rest, payload, meta)? {
                    self.seen.entry(name.clone()).or_default().observe(meta.sender);
                    self.refresh(name)?;
                }
                Ok(())
            }
        }
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        w.varint(self.seen.len() as u64);
        for (name, clock) in &self.seen {
            w.str(name);
            clock.encode(&mut w);
        }
        w.varint(self.archives.len() as u64);
        for (name, recs) in &self.archives {
            w.str(name).varint(recs.len() as u64);
            for (dot, observed) in recs {
                w.str(dot.replica.as_str()).varint(dot.counter);
                observed.encode(&mut w);
            }
        }
        let mut node = SaveNode::leaf(w.finish());
        node.children.insert(ORDER.to_owned(), self.order.save());
        node.children.insert(SET.to_owned(), self.set.save());
        node
    }

    fn load(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<()> {
        let mut r = Reader::new(&save.data);
        let mut seen = Vec::new();
        for _ in 0..r.len_prefix()? {
            let name = r.str()?.to_owned();
            seen.push((name, VectorClock::decode(&mut r)?));
        }
        let mut archives = Vec::new();
        for _ in 0..r.len_prefix()? {
            let name = r.str()?.to_owned();
            for _ in 0..r.len_prefix()? {
                let replica = crate::runtime::ReplicaId::new(r.str()?)?;
                let dot = Dot::new(replica, r.varint()?);
                archives.push((name.clone(), dot, VectorClock::decode(&mut r)?));
            }
        }
        r.expect_end()?;
        let order = save.child(ORDER).ok_or_else(|| Error::decode("list save without order"))?;
        let set = save.child(SET).ok_or_else(|| Error::decode("list save without set"))?;

        self.order.load(order, cx)?;
        let (_, deleted) = self.set.merge(set, cx)?;
        for name in deleted {
            self.forget(&name);
        }
        for (name, clock) in seen {
            if self.set.has(&name) {
                self.seen.entry(name).or_default().merge(&clock);
            }
        }
        for (name, dot, observed) in archives {
            if self.set.has(&name) {
                self.archives.entry(name).or_default().insert(dot, observed);
            }
        }
        self.rebuild()
    }

    fn observe(&self) -> Json {
        Json::Array(self.values().map(Collab::observe).collect())
    }

    fn check_route(&self, path: &[String]) -> Result<()> {
        match path.split_first() {
            None => Ok(()),
            Some((h, rest)) if h == ORDER => self.order.check_route(rest),
            Some((h, rest)) if h == ARCHIVE && rest.is_empty() => Ok(()),
            _ => self.set.check_route(path),
        }
    }

    fn child(&self, name: &str) -> Option<&dyn Collab> {
        if name == ORDER {
            return Some(&self.order);
        }
        self.set.get(name).map(|e| &e.value as &dyn Collab)
    }
}

impl<C: Collab> Handle<CList<C>> {
    fn order_handle(&self) -> Handle<CTotalOrder> {
        self.child(ORDER)
    }

    fn position_path(&self, name: &str) -> TreePath {
        let mut p = self.path().clone();
        p.push(name.to_owned());
        p.push(POS.to_owned());
        p
    }

    /// Handle to the value at `index`.
    pub fn at(&self, doc: &Document, index: usize) -> Result<Handle<C>> {
        let list = doc.get(self)?;
        let name = list.name_at(index).ok_or(Error::Range { index, len: list.len() })?;
        Ok(self.child(name))
    }

    fn neighbours(&self, doc: &Document, index: usize) -> Result<(Option<Position>, Option<Position>)> {
        let list = doc.get(self)?;
        if index > list.len() {
            return Err(Error::Range { index, len: list.len() });
        }
        let prev = index.checked_sub(1).and_then(|i| list.position_at(i)).cloned();
        Ok((prev, list.position_at(index).cloned()))
    }

    /// Inserts a new element, built from `args` by the list's factory.
    pub fn insert(&self, doc: &mut Document, index: usize, args: &[u8]) -> Result<Handle<C>> {
        let (prev, next) = self.neighbours(doc, index)?;
        let pos = self.order_handle().create_position(doc, prev.as_ref(), next.as_ref())?;
        let mut w = Writer::with_capacity(args.len() + 16);
        pos.encode(&mut w);
        w.raw(args);
        let dot = doc.send(self.path().clone(), CSet::<CListEntry<C>>::create_payload(&w.finish()))?;
        Ok(self.child(&dot.to_string()))
    }

    /// Permanently deletes the element at `index`.
    pub fn delete(&self, doc: &mut Document, index: usize) -> Result<()> {
        let name = self.at(doc, index)?.path().last().cloned().expect("non-empty");
        doc.send(self.path().clone(), CSet::<CListEntry<C>>::delete_payload(&name))?;
        Ok(())
    }

    /// Moves the element at `start` so it lands between the elements
    /// currently at `insertion - 1` and `insertion`.
    pub fn move_entry(&self, doc: &mut Document, start: usize, insertion: usize) -> Result<()> {
        let name = self.at(doc, start)?.path().last().cloned().expect("non-empty");
        let (prev, next) = self.neighbours(doc, insertion)?;
        let pos = self.order_handle().create_position(doc, prev.as_ref(), next.as_ref())?;
        doc.send(self.position_path(&name), CVar::set_payload(&pos))?;
        Ok(())
    }

    /// Hides the element at `index` unless a concurrent update cancels it.
    pub fn archive(&self, doc: &mut Document, index: usize) -> Result<String> {
        let name = self.at(doc, index)?.path().last().cloned().expect("non-empty");
        let payload = doc.get(self)?.archive_payload(&name);
        doc.send(self.path().iter().cloned().chain([ARCHIVE.to_owned()]).collect(), payload)?;
        Ok(name)
    }

    /// Makes an archived element visible again, right after its last
    /// position.
    pub fn restore(&self, doc: &mut Document, name: &str) -> Result<()> {
        let list = doc.get(self)?;
        let Some(entry) = list.entry(name) else {
            return Err(Error::invalid(format!("cannot restore {name}: deleted")));
        };
        if !list.is_archived(name) {
            return Err(Error::invalid(format!("cannot restore {name}: not archived")));
        }
        let cur = entry.position().clone();
        let pos = self.order_handle().create_position(doc, Some(&cur), None)?;
        doc.send(self.position_path(name), CVar::set_payload(&pos))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::CCounter;
    use crate::runtime::{MessageEnvelope, Mode};

    type L = CList<CCounter>;

    fn doc(id: &str) -> (Document, Handle<L>) {
        let mut d = Document::new(id.into(), Mode::Full);
        let h = d.register("list", |i| CList::new(i, |i, _| Ok(CCounter::new(i)))).unwrap();
        (d, h)
    }

    fn deliver(to: &mut Document, envs: &[MessageEnvelope]) {
        for e in envs {
            to.receive(e.clone()).unwrap();
        }
    }

    fn values(d: &Document, h: &Handle<L>) -> Vec<i64> {
        d.get(h).unwrap().values().map(CCounter::value).collect()
    }

    fn fill(d: &mut Document, h: &Handle<L>, vals: &[i64]) {
        for (i, v) in vals.iter().enumerate() {
            let c = h.insert(d, i, &[]).unwrap();
            c.add(d, *v).unwrap();
        }
    }

    #[test]
    fn insert_and_index() {
        let (mut d, h) = doc("a");
        assert_eq!(d.get(&h).unwrap().len(), 0);
        fill(&mut d, &h, &[1, 2, 3]);
        h.insert(&mut d, 0, &[]).unwrap();
        assert_eq!(values(&d, &h), vec![0, 1, 2, 3]);
        assert!(matches!(h.insert(&mut d, 9, &[]), Err(Error::Range { .. })));
    }

    #[test]
    fn moves() {
        let (mut d, h) = doc("a");
        fill(&mut d, &h, &[1, 2, 3, 4]);
        h.move_entry(&mut d, 1, 1).unwrap();
        assert_eq!(values(&d, &h), vec![1, 2, 3, 4]);
        h.move_entry(&mut d, 0, 3).unwrap();
        assert_eq!(values(&d, &h), vec![2, 3, 1, 4]);
        h.move_entry(&mut d, 3, 0).unwrap();
        assert_eq!(values(&d, &h), vec![4, 2, 3, 1]);
        h.move_entry(&mut d, 0, 4).unwrap();
        assert_eq!(values(&d, &h), vec![2, 3, 1, 4]);
        let l = d.get(&h).unwrap();
        assert_eq!(l.rebuild_view().unwrap(), l.visible_names());
    }

    #[test]
    fn move_preserves_concurrent_edit() {
        let (mut a, ha) = doc("a");
        let (mut b, hb) = doc("b");
        fill(&mut a, &ha, &[10, 20, 30]);
        deliver(&mut b, &a.take_outbox());
        ha.move_entry(&mut a, 0, 3).unwrap();
        let c = hb.at(&b, 0).unwrap();
        c.add(&mut b, 5).unwrap();
        let ea = a.take_outbox();
        let eb = b.take_outbox();
        deliver(&mut a, &eb);
        deliver(&mut b, &ea);
        assert_eq!(values(&a, &ha), vec![20, 30, 15]);
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn archive_restore_and_update_wins() {
        let (mut a, ha) = doc("a");
        let (mut b, hb) = doc("b");
        fill(&mut a, &ha, &[1, 2]);
        deliver(&mut b, &a.take_outbox());
        let name = ha.archive(&mut a, 0).unwrap();
        assert_eq!(values(&a, &ha), vec![2]);
        ha.restore(&mut a, &name).unwrap();
        assert_eq!(values(&a, &ha), vec![1, 2]);
        assert!(ha.restore(&mut a, &name).is_err());
        deliver(&mut b, &a.take_outbox());

        // Concurrent archive and edit: the edit wins.
        ha.archive(&mut a, 1).unwrap();
        hb.at(&b, 1).unwrap().add(&mut b, 40).unwrap();
        let ea = a.take_outbox();
        let eb = b.take_outbox();
        deliver(&mut a, &eb);
        deliver(&mut b, &ea);
        assert_eq!(values(&a, &ha), vec![1, 42]);
        assert_eq!(values(&b, &hb), vec![1, 42]);
    }

    #[test]
    fn delete_wins_and_restore_of_deleted_fails() {
        let (mut a, ha) = doc("a");
        let (mut b, hb) = doc("b");
        fill(&mut a, &ha, &[1]);
        deliver(&mut b, &a.take_outbox());
        let name = hb.at(&b, 0).unwrap().path().last().cloned().unwrap();
        ha.delete(&mut a, 0).unwrap();
        hb.at(&b, 0).unwrap().add(&mut b, 5).unwrap();
        let ea = a.take_outbox();
        let eb = b.take_outbox();
        deliver(&mut a, &eb);
        deliver(&mut b, &ea);
        assert!(values(&a, &ha).is_empty());
        assert!(values(&b, &hb).is_empty());
        assert!(ha.restore(&mut a, &name).is_err());
    }

    #[test]
    fn merge_matches_replay() {
        let (mut a, ha) = doc("a");
        let (mut b, hb) = doc("b");
        fill(&mut a, &ha, &[1, 2, 3]);
        let init = a.take_outbox();
        deliver(&mut b, &init);
        ha.archive(&mut a, 0).unwrap();
        ha.move_entry(&mut a, 1, 0).unwrap();
        hb.delete(&mut b, 1).unwrap();
        hb.at(&b, 0).unwrap().add(&mut b, 100).unwrap();
        let mut c = doc("c");
        let ea = a.take_outbox();
        let eb = b.take_outbox();
        a.load(&b.save()).unwrap();
        b.load(&a.save()).unwrap();
        deliver(&mut c.0, &init);
        deliver(&mut c.0, &ea);
        deliver(&mut c.0, &eb);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.observe(), c.0.observe());
        assert_eq!(values(&c.0, &c.1), vec![3, 101]);
        let l = a.get(&ha).unwrap();
        assert_eq!(l.rebuild_view().unwrap(), l.visible_names());
    }
}
