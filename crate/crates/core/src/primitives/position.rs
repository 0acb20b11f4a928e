//! Dense total order on immutable positions.
//!
//! Positions form a tree. Each node has left children, then itself, then right
//! children in traversal order; same-side siblings are sorted by
//! `(counter, creator)` of the run that created them. A new position after
//! `prev` becomes a right child of `prev` when `prev` has none, otherwise a left
//! child of `prev`'s immediate successor, which always lands it directly after
//! `prev`.
//!
//! Consecutive right-child chains created by one replica are stored as one
//! *waypoint*: position `(w, i + 1)` is the right child of `(w, i)`. Other
//! waypoints hang off a specific position of their parent. Every position gets
//! a precomputed [`PosKey`] whose lexicographic order equals traversal order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::{Dot, ReplicaId};

/// Identifier of a run of positions; equal to the dot of the message that
/// created it. Ordered by `(counter, creator)`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WaypointId {
    pub counter: u64,
    pub creator: ReplicaId,
}

impl WaypointId {
    pub fn from_dot(dot: &Dot) -> Self {
        WaypointId { counter: dot.counter, creator: dot.replica.clone() }
    }
}

impl fmt::Debug for WaypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.creator, self.counter)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    pub waypoint: WaypointId,
    pub offset: u64,
}

impl Position {
    pub fn encode(&self, w: &mut Writer) {
        w.str(self.waypoint.creator.as_str()).varint(self.waypoint.counter).varint(self.offset);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let creator = ReplicaId::new(r.str()?)?;
        let counter = r.varint()?;
        let offset = r.varint()?;
        Ok(Position { waypoint: WaypointId { counter, creator }, offset })
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{}", self.waypoint, self.offset)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl super::value::Value for Position {
    fn encode(&self, w: &mut Writer) {
        Position::encode(self, w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Position::decode(r)
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::String(self.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Where a waypoint's first position hangs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Anchor {
    /// Right child of the start sentinel.
    Start,
    At {
        parent: Position,
        side: Side,
    },
}

/// One level of a [`PosKey`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Step {
    region: u8,
    idx: u64,
    sub: u8,
    key: Option<WaypointId>,
}

impl Step {
    fn node(offset: u64) -> Self {
        Step { region: 0, idx: offset, sub: 1, key: None }
    }
}

/// Sort key of a position; comparison is traversal order.
#[derive(Clone, Debug)]
pub struct PosKey {
    prefix: Arc<[Step]>,
    offset: u64,
}

impl PosKey {
    pub fn depth(&self) -> usize {
        self.prefix.len()
    }
}

impl PartialEq for PosKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PosKey {}

impl PartialOrd for PosKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PosKey {
    fn cmp(&self, other: &Self) -> Ordering {
        if Arc::ptr_eq(&self.prefix, &other.prefix) {
            return self.offset.cmp(&other.offset);
        }
        let a = Step::node(self.offset);
        let b = Step::node(other.offset);
        self.prefix.iter().chain(std::iter::once(&a)).cmp(other.prefix.iter().chain(std::iter::once(&b)))
    }
}

/// A position-creating operation, as carried in message payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Creation {
    /// Start a new waypoint (id = the message's dot) with `count` positions.
    New { anchor: Anchor, count: u64 },
    /// Append `count` positions to the sender's own waypoint.
    Extend { counter: u64, start: u64, count: u64 },
}

impl Creation {
    pub fn count(&self) -> u64 {
        match self {
            Creation::New { count, .. } | Creation::Extend { count, .. } => *count,
        }
    }

    pub fn encode(&self, w: &mut Writer) {
        match self {
            Creation::New { anchor, count } => {
                w.u8(0);
                match anchor {
                    Anchor::Start => {
                        w.u8(0);
                    }
                    Anchor::At { parent, side } => {
                        w.u8(if *side == Side::Left { 1 } else { 2 });
                        parent.encode(w);
                    }
                }
                w.varint(*count);
            }
            Creation::Extend { counter, start, count } => {
                w.u8(1).varint(*counter).varint(*start).varint(*count);
            }
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let c = match r.u8()? {
            0 => {
                let anchor = decode_anchor(r, Position::decode)?;
                Creation::New { anchor, count: r.varint()? }
            }
            1 => Creation::Extend { counter: r.varint()?, start: r.varint()?, count: r.varint()? },
            t => return Err(Error::decode(format!("bad creation tag {t}"))),
        };
        if c.count() == 0 {
            return Err(Error::decode("creation of zero positions"));
        }
        Ok(c)
    }
}

fn decode_anchor(r: &mut Reader<'_>, pos: impl FnOnce(&mut Reader<'_>) -> Result<Position>) -> Result<Anchor> {
    Ok(match r.u8()? {
        0 => Anchor::Start,
        1 => Anchor::At { parent: pos(r)?, side: Side::Left },
        2 => Anchor::At { parent: pos(r)?, side: Side::Right },
        t => return Err(Error::decode(format!("bad anchor tag {t}"))),
    })
}

#[derive(Clone, Debug)]
struct Waypoint {
    anchor: Anchor,
    len: u64,
    prefix: Arc<[Step]>,
    hangers: BTreeMap<(u64, Side), BTreeSet<WaypointId>>,
}

/// Waypoint metadata as exchanged in saves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WaypointRecord {
    pub id: WaypointId,
    pub anchor: Anchor,
    pub len: u64,
}

#[derive(Clone, Debug, Default)]
pub struct PositionTree {
    waypoints: HashMap<WaypointId, Waypoint>,
    roots: BTreeSet<WaypointId>,
    positions: u64,
}

impl PositionTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total number of positions ever created (deleted values included).
    pub fn position_count(&self) -> u64 {
        self.positions
    }

    pub fn waypoint_count(&self) -> usize {
        self.waypoints.len()
    }

    pub fn waypoint_len(&self, id: &WaypointId) -> Option<u64> {
        self.waypoints.get(id).map(|w| w.len)
    }

    pub fn contains(&self, pos: &Position) -> bool {
        self.waypoint_len(&pos.waypoint).is_some_and(|len| pos.offset < len)
    }

    fn require(&self, pos: &Position) -> Result<&Waypoint> {
        match self.waypoints.get(&pos.waypoint) {
            Some(w) if pos.offset < w.len => Ok(w),
            _ => Err(Error::invalid(format!("unknown position {pos:?}"))),
        }
    }

    pub fn key(&self, pos: &Position) -> Result<PosKey> {
        let w = self.require(pos)?;
        Ok(PosKey { prefix: w.prefix.clone(), offset: pos.offset })
    }

    pub fn compare(&self, a: &Position, b: &Position) -> Result<Ordering> {
        Ok(self.key(a)?.cmp(&self.key(b)?))
    }

    /// Plans the creation of `count` consecutive positions immediately after
    /// `prev` (`None` = start), checking that they would precede `next`.
    pub fn plan(
        &self,
        me: &ReplicaId,
        prev: Option<&Position>,
        next: Option<&Position>,
        count: u64,
    ) -> Result<Creation> {
        if count == 0 {
            return Err(Error::invalid("cannot create zero positions"));
        }
        if let Some(n) = next {
            self.require(n)?;
            if let Some(p) = prev {
                if self.compare(p, n)? != Ordering::Less {
                    return Err(Error::invalid(format!("prev {p:?} is not before next {n:?}")));
                }
            }
        }
        let Some(p) = prev else {
            return Ok(match self.roots.first() {
                None => Creation::New { anchor: Anchor::Start, count },
                Some(first) => {
                    let s = self.leftmost_descendant(Position { waypoint: first.clone(), offset: 0 });
                    Creation::New { anchor: Anchor::At { parent: s, side: Side::Left }, count }
                }
            });
        };
        let w = self.require(p)?;
        let continuation = p.offset + 1 < w.len;
        let first_hanger = w.hangers.get(&(p.offset, Side::Right)).and_then(|s| s.first());
        let first_right = match (continuation, first_hanger) {
            (false, None) => None,
            (true, None) => Some(Position { waypoint: p.waypoint.clone(), offset: p.offset + 1 }),
            (false, Some(h)) => Some(Position { waypoint: h.clone(), offset: 0 }),
            (true, Some(h)) => Some(if p.waypoint < *h {
                Position { waypoint: p.waypoint.clone(), offset: p.offset + 1 }
            } else {
                Position { waypoint: h.clone(), offset: 0 }
            }),
        };
        Ok(match first_right {
            None if p.waypoint.creator == *me => Creation::Extend { counter: p.waypoint.counter, start: w.len, count },
            None => Creation::New { anchor: Anchor::At { parent: p.clone(), side: Side::Right }, count },
            Some(r) => {
                let s = self.leftmost_descendant(r);
                Creation::New { anchor: Anchor::At { parent: s, side: Side::Left }, count }
            }
        })
    }

    fn leftmost_descendant(&self, mut x: Position) -> Position {
        loop {
            let w = &self.waypoints[&x.waypoint];
            match w.hangers.get(&(x.offset, Side::Left)).and_then(|s| s.first()) {
                Some(h) => x = Position { waypoint: h.clone(), offset: 0 },
                None => return x,
            }
        }
    }

    /// Applies a creation sent as message `dot`; returns the first new
    /// position (the rest follow at consecutive offsets).
    pub fn apply(&mut self, creation: &Creation, dot: &Dot) -> Result<Position> {
        match creation {
            Creation::New { anchor, count } => {
                let id = WaypointId::from_dot(dot);
                self.insert_waypoint(id.clone(), anchor.clone(), *count)?;
                Ok(Position { waypoint: id, offset: 0 })
            }
            Creation::Extend { counter, start, count } => {
                let id = WaypointId { counter: *counter, creator: dot.replica.clone() };
                let w =
                    self.waypoints.get_mut(&id).ok_or_else(|| Error::decode(format!("extend of unknown {id:?}")))?;
                if w.len != *start {
                    return Err(Error::decode(format!("extend of {id:?} at {start}, length is {}", w.len)));
                }
                w.len += count;
                self.positions += count;
                Ok(Position { waypoint: id, offset: *start })
            }
        }
    }

    fn insert_waypoint(&mut self, id: WaypointId, anchor: Anchor, len: u64) -> Result<()> {
        if self.waypoints.contains_key(&id) {
            return Err(Error::decode(format!("waypoint {id:?} already exists")));
        }
        let prefix: Arc<[Step]> = match &anchor {
            Anchor::Start => {
                self.roots.insert(id.clone());
                Arc::from(vec![Step { region: 0, idx: 0, sub: 2, key: Some(id.clone()) }])
            }
            Anchor::At { parent, side } => {
                let pw = self
                    .waypoints
                    .get_mut(&parent.waypoint)
                    .filter(|w| parent.offset < w.len)
                    .ok_or_else(|| Error::decode(format!("anchor {parent:?} unknown")))?;
                pw.hangers.entry((parent.offset, *side)).or_default().insert(id.clone());
                let a = parent.offset;
                let step = match side {
                    Side::Left => Step { region: 0, idx: a, sub: 0, key: Some(id.clone()) },
                    Side::Right if id < parent.waypoint => Step { region: 0, idx: a, sub: 2, key: Some(id.clone()) },
                    // Sorts after the parent's whole continuation chain.
                    Side::Right => Step { region: 1, idx: u64::MAX - a, sub: 0, key: Some(id.clone()) },
                };
                let mut steps = Vec::with_capacity(pw.prefix.len() + 1);
                steps.extend_from_slice(&pw.prefix);
                steps.push(step);
                Arc::from(steps)
            }
        };
        self.positions += len;
        self.waypoints.insert(id, Waypoint { anchor, len, prefix, hangers: BTreeMap::new() });
        Ok(())
    }

    /// Every position in traversal order.
    pub fn traverse(&self) -> Vec<Position> {
        let mut all: Vec<(PosKey, Position)> = Vec::with_capacity(self.positions as usize);
        for (id, w) in &self.waypoints {
            for offset in 0..w.len {
                all.push((PosKey { prefix: w.prefix.clone(), offset }, Position { waypoint: id.clone(), offset }));
            }
        }
        all.sort_by(|a, b| a.0.cmp(&b.0));
        all.into_iter().map(|(_, p)| p).collect()
    }

    pub fn records(&self) -> Vec<WaypointRecord> {
        let mut out: Vec<WaypointRecord> = self
            .waypoints
            .iter()
            .map(|(id, w)| WaypointRecord { id: id.clone(), anchor: w.anchor.clone(), len: w.len })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Unions remote waypoints into this tree.
    pub fn merge(&mut self, remote: &[WaypointRecord]) -> Result<()> {
        let mut todo: Vec<&WaypointRecord> = Vec::new();
        for rec in remote {
            match self.waypoints.get_mut(&rec.id) {
                Some(w) => {
                    if w.anchor != rec.anchor {
                        return Err(Error::decode(format!("waypoint {:?} anchored differently", rec.id)));
                    }
                    if rec.len > w.len {
                        self.positions += rec.len - w.len;
                        w.len = rec.len;
                    }
                }
                None => todo.push(rec),
            }
        }
        // Parents may appear after their children; insert in dependency order.
        while !todo.is_empty() {
            let before = todo.len();
            let mut rest = Vec::new();
            for rec in todo {
                let ready = match &rec.anchor {
                    Anchor::Start => true,
                    Anchor::At { parent, .. } => self.contains(parent),
                };
                if ready {
                    self.insert_waypoint(rec.id.clone(), rec.anchor.clone(), rec.len)?;
                } else {
                    rest.push(rec);
                }
            }
            if rest.len() == before {
                return Err(Error::decode("waypoints with unknown anchors"));
            }
            todo = rest;
        }
        Ok(())
    }

    /// Compact encoding: a creator table followed by waypoints sorted by id.
    pub fn encode_records(records: &[WaypointRecord], w: &mut Writer) {
        let creators: BTreeSet<&ReplicaId> = records
            .iter()
            .flat_map(|r| {
                let parent = match &r.anchor {
                    Anchor::At { parent, .. } => Some(&parent.waypoint.creator),
                    Anchor::Start => None,
                };
                std::iter::once(&r.id.creator).chain(parent)
            })
            .collect();
        let index: HashMap<&ReplicaId, u64> = creators.iter().enumerate().map(|(i, r)| (*r, i as u64)).collect();
        w.varint(creators.len() as u64);
        for c in &creators {
            w.str(c.as_str());
        }
        w.varint(records.len() as u64);
        for r in records {
            w.varint(index[&r.id.creator]).varint(r.id.counter).varint(r.len);
            match &r.anchor {
                Anchor::Start => {
                    w.u8(0);
                }
                Anchor::At { parent, side } => {
                    w.u8(if *side == Side::Left { 1 } else { 2 });
                    w.varint(index[&parent.waypoint.creator]).varint(parent.waypoint.counter).varint(parent.offset);
                }
            }
        }
    }

    pub fn decode_records(r: &mut Reader<'_>) -> Result<Vec<WaypointRecord>> {
        let ncreators = r.len_prefix()?;
        let mut creators = Vec::with_capacity(ncreators.min(1024));
        for _ in 0..ncreators {
            creators.push(ReplicaId::new(r.str()?)?);
        }
        let lookup = |i: u64| -> Result<ReplicaId> {
            creators.get(i as usize).cloned().ok_or_else(|| Error::decode("creator index out of range"))
        };
        let n = r.len_prefix()?;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let creator = lookup(r.varint()?)?;
            let counter = r.varint()?;
            let len = r.varint()?;
            let anchor = decode_anchor(r, |r| {
                let creator = lookup(r.varint()?)?;
                let counter = r.varint()?;
                Ok(Position { waypoint: WaypointId { counter, creator }, offset: r.varint()? })
            })?;
            out.push(WaypointRecord { id: WaypointId { counter, creator }, anchor, len });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::from(s)
    }

    /// Creates positions the way a replica would: plan locally, apply with
    /// the next dot of that replica.
    struct Maker {
        me: ReplicaId,
        counter: u64,
    }

    impl Maker {
        fn new(me: &str) -> Self {
            Maker { me: rid(me), counter: 0 }
        }

        fn make(&mut self, tree: &mut PositionTree, prev: Option<&Position>) -> (Creation, Dot, Position) {
            self.counter += 1;
            let c = tree.plan(&self.me, prev, None, 1).unwrap();
            let dot = Dot::new(self.me.clone(), self.counter);
            let p = tree.apply(&c, &dot).unwrap();
            (c, dot, p)
        }
    }

    #[test]
    fn first_position_on_empty_order() {
        let mut t = PositionTree::new();
        let (c, _, p) = Maker::new("a").make(&mut t, None);
        assert_eq!(c, Creation::New { anchor: Anchor::Start, count: 1 });
        assert_eq!(t.traverse(), vec![p.clone()]);
        assert_eq!(t.compare(&p, &p).unwrap(), Ordering::Equal);
    }

    #[test]
    fn sequential_creations_extend_one_waypoint() {
        let mut t = PositionTree::new();
        let mut m = Maker::new("a");
        let (_, _, mut prev) = m.make(&mut t, None);
        let mut all = vec![prev.clone()];
        for _ in 0..50 {
            let (c, _, p) = m.make(&mut t, Some(&prev));
            assert!(matches!(c, Creation::Extend { .. }));
            assert_eq!(t.compare(&prev, &p).unwrap(), Ordering::Less);
            all.push(p.clone());
            prev = p;
        }
        assert_eq!(t.waypoint_count(), 1);
        assert_eq!(t.traverse(), all);
    }

    #[test]
    fn concurrent_creations_at_start_order_by_counter_then_id() {
        // Brute force both delivery orders of a's and b's first position.
        let mut orders = Vec::new();
        for a_first in [true, false] {
            let mut t = PositionTree::new();
            let ca = t.plan(&rid("a"), None, None, 1).unwrap();
            let cb = t.plan(&rid("b"), None, None, 1).unwrap();
            let da = Dot::new(rid("a"), 1);
            let db = Dot::new(rid("b"), 1);
            if a_first {
                t.apply(&ca, &da).unwrap();
                t.apply(&cb, &db).unwrap();
            } else {
                t.apply(&cb, &db).unwrap();
                t.apply(&ca, &da).unwrap();
            }
            orders.push(t.traverse());
        }
        assert_eq!(orders[0], orders[1]);
        assert_eq!(orders[0][0].waypoint.creator, rid("a"));
    }

    #[test]
    fn insert_between_existing_positions() {
        let mut t = PositionTree::new();
        let mut a = Maker::new("a");
        let mut b = Maker::new("b");
        let (_, _, p0) = a.make(&mut t, None);
        let (_, _, p1) = a.make(&mut t, Some(&p0));
        // b inserts between p0 and p1: p0 has a right child, so this hangs
        // left of p1.
        let (c, _, q) = b.make(&mut t, Some(&p0));
        assert_eq!(c, Creation::New { anchor: Anchor::At { parent: p1.clone(), side: Side::Left }, count: 1 });
        assert_eq!(t.traverse(), vec![p0.clone(), q.clone(), p1.clone()]);
        // b appends after its own q: q has no right children, b owns it.
        let (c2, _, q2) = b.make(&mut t, Some(&q));
        assert!(matches!(c2, Creation::Extend { .. }));
        assert_eq!(t.traverse(), vec![p0, q, q2, p1]);
    }

    #[test]
    fn right_hangers_sort_around_the_continuation() {
        // Waypoint W = b.5 with positions 0..2. Right hangers at (W,0): a.1
        // (smaller id, before the continuation) and c.9 (after the whole
        // continuation chain).
        let mut t = PositionTree::new();
        let w = WaypointId { counter: 5, creator: rid("b") };
        t.insert_waypoint(w.clone(), Anchor::Start, 2).unwrap();
        let w0 = Position { waypoint: w.clone(), offset: 0 };
        let w1 = Position { waypoint: w.clone(), offset: 1 };
        let small = WaypointId { counter: 1, creator: rid("a") };
        let large = WaypointId { counter: 9, creator: rid("c") };
        t.insert_waypoint(large.clone(), Anchor::At { parent: w0.clone(), side: Side::Right }, 1).unwrap();
        t.insert_waypoint(small.clone(), Anchor::At { parent: w0.clone(), side: Side::Right }, 1).unwrap();
        let hang_w1 = WaypointId { counter: 7, creator: rid("z") };
        t.insert_waypoint(hang_w1.clone(), Anchor::At { parent: w1.clone(), side: Side::Right }, 1).unwrap();
        let p = |id: &WaypointId| Position { waypoint: id.clone(), offset: 0 };
        assert_eq!(t.traverse(), vec![w0, p(&small), w1, p(&hang_w1), p(&large)]);
    }

    #[test]
    fn plan_rejects_bad_bounds() {
        let mut t = PositionTree::new();
        let mut a = Maker::new("a");
        let (_, _, p0) = a.make(&mut t, None);
        let (_, _, p1) = a.make(&mut t, Some(&p0));
        assert!(t.plan(&rid("a"), Some(&p1), Some(&p0), 1).is_err());
        assert!(t.plan(&rid("a"), Some(&p0), Some(&p0), 1).is_err());
        let ghost = Position { waypoint: WaypointId { counter: 99, creator: rid("q") }, offset: 0 };
        assert!(t.plan(&rid("a"), Some(&ghost), None, 1).is_err());
    }

    #[test]
    fn records_roundtrip_and_merge_out_of_order() {
        let mut t = PositionTree::new();
        let mut a = Maker::new("a");
        let mut b = Maker::new("b");
        let (_, _, p0) = a.make(&mut t, None);
        let (_, _, p1) = b.make(&mut t, Some(&p0));
        let (_, _, _p2) = a.make(&mut t, Some(&p1));
        let (_, _, _p3) = b.make(&mut t, None);
        let mut recs = t.records();
        recs.reverse();
        let mut w = Writer::new();
        PositionTree::encode_records(&recs, &mut w);
        let bytes = w.finish();
        let decoded = PositionTree::decode_records(&mut Reader::new(&bytes)).unwrap();
        assert_eq!(decoded, recs);
        let mut fresh = PositionTree::new();
        fresh.merge(&decoded).unwrap();
        assert_eq!(fresh.traverse(), t.traverse());
        fresh.merge(&decoded).unwrap();
        assert_eq!(fresh.position_count(), t.position_count());
    }
}
