//! The component contract and the routing-only composite, [`CObject`].
//!
//! A document is a tree of [`Collab`]s. Every message is addressed by a
//! [`TreePath`]: each composite pops the head segment and hands the rest to
//! the named child; leaves consume an empty path. Local operations are
//! delivered through exactly the same path as remote ones, flagged
//! `is_local`.

use std::any::Any;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::runtime::{Dot, ReplicaId, SaveNode, VectorClock};

/// Segments starting with this character are reserved for internal routing.
pub const RESERVED_PREFIX: char = '~';

/// Metadata accompanying one delivered message.
#[derive(Clone, Copy, Debug)]
pub struct UpdateMeta<'a> {
    pub sender: &'a Dot,
    pub lamport: u64,
    pub is_local: bool,
    /// The receiving replica's clock once this delivery batch completed.
    pub local_clock: &'a VectorClock,
    causal_past: Option<&'a VectorClock>,
}

impl<'a> UpdateMeta<'a> {
    pub fn new(
        sender: &'a Dot,
        lamport: u64,
        is_local: bool,
        local_clock: &'a VectorClock,
        causal_past: Option<&'a VectorClock>,
    ) -> Self {
        UpdateMeta { sender, lamport, is_local, local_clock, causal_past }
    }

    pub fn replica(&self) -> &'a ReplicaId {
        &self.sender.replica
    }

    /// Whether `dot` is in this message's causal past. `None` when the
    /// runtime does not track causal pasts (NoVC mode, local echo).
    pub fn causally_precedes(&self, dot: &Dot) -> Option<bool> {
        self.causal_past.map(|p| p.covers(dot) && dot != self.sender)
    }
}

/// What a component sees while merging a remote save.
#[derive(Clone, Copy, Debug)]
pub struct MergeContext<'a> {
    /// Local causal summary before the merge.
    pub local: &'a VectorClock,
    /// Causal summary of the save being loaded.
    pub remote: &'a VectorClock,
}

/// Test hooks that deliberately break a replica. Never enabled in normal use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Reverse the writer-id tie-break of last-writer-wins registers.
    pub invert_lww_tiebreak: bool,
}

/// Handed to every component constructor.
#[derive(Clone, Debug, Default)]
pub struct Init {
    faults: Arc<Faults>,
}

impl Init {
    pub fn new(faults: Faults) -> Self {
        Init { faults: Arc::new(faults) }
    }

    pub fn faults(&self) -> Faults {
        *self.faults
    }
}

/// A self-contained hybrid op-based/state-based CRDT component.
///
/// Op side: if every message is delivered once, in causal order, to every
/// replica, replicas converge. State side: loading a save is equivalent to
/// receiving every message that contributed to it, skipping duplicates.
pub trait Collab: Any {
    /// Applies a delivered message. `path` is what remains after the
    /// ancestors consumed their segments.
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()>;

    fn save(&self) -> SaveNode;

    fn load(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<()>;

    /// Application-visible value, free of CRDT metadata.
    fn observe(&self) -> Json;

    /// Checks that a locally originated message for `path` has a live target.
    fn check_route(&self, path: &[String]) -> Result<()> {
        match path.first() {
            None => Ok(()),
            Some(name) => Err(Error::UnknownChild(name.clone())),
        }
    }

    /// Child by name, for typed navigation.
    fn child(&self, _name: &str) -> Option<&dyn Collab> {
        None
    }
}

/// Composite that owns a fixed, ordered set of named children and only routes
/// messages and saves between them.
#[derive(Default)]
pub struct CObject {
    children: IndexMap<String, Box<dyn Collab>>,
}

impl CObject {
    pub fn builder() -> CObjectBuilder {
        CObjectBuilder { obj: CObject::default() }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.children.keys().map(String::as_str)
    }

    pub fn get<C: Collab>(&self, name: &str) -> Option<&C> {
        let child: &dyn Any = self.children.get(name)?.as_ref();
        child.downcast_ref::<C>()
    }

    pub(crate) fn insert(&mut self, name: &str, child: Box<dyn Collab>) -> Result<()> {
        validate_name(name)?;
        if self.children.contains_key(name) {
            return Err(Error::DuplicateName(name.to_owned()));
        }
        self.children.insert(name.to_owned(), child);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.children.contains_key(name)
    }
}

/// Registers a [`CObject`]'s children during construction. Once built, the
/// child set is fixed.
pub struct CObjectBuilder {
    obj: CObject,
}

impl CObjectBuilder {
    pub fn register<C: Collab>(mut self, name: &str, child: C) -> Result<Self> {
        self.obj.insert(name, Box::new(child))?;
        Ok(self)
    }

    pub fn build(self) -> CObject {
        self.obj
    }
}

pub(crate) fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.starts_with(RESERVED_PREFIX) || name.contains('\0') {
        return Err(Error::invalid(format!("illegal child name {name:?}")));
    }
    Ok(())
}

impl Collab for CObject {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        let (head, rest) = path.split_first().ok_or_else(|| Error::decode("empty path at an object"))?;
        let child = self.children.get_mut(head).ok_or_else(|| Error::UnknownChild(head.clone()))?;
        child.receive(rest, payload, meta)
    }

    fn save(&self) -> SaveNode {
        let mut node = SaveNode::default();
        for (name, child) in &self.children {
            node.children.insert(name.clone(), child.save());
        }
        node
    }

    fn load(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<()> {
        if let Some(unknown) = save.children.keys().find(|k| !self.children.contains_key(*k)) {
            return Err(Error::UnknownChild(unknown.clone()));
        }
        // Children missing from the save keep their local state.
        for (name, child) in self.children.iter_mut() {
            if let Some(sub) = save.children.get(name) {
                child.load(sub, cx)?;
            }
        }
        Ok(())
    }

    fn observe(&self) -> Json {
        Json::Object(self.children.iter().map(|(k, c)| (k.clone(), c.observe())).collect())
    }

    fn check_route(&self, path: &[String]) -> Result<()> {
        let (head, rest) = path.split_first().ok_or_else(|| Error::decode("empty path at an object"))?;
        self.children.get(head).ok_or_else(|| Error::UnknownChild(head.clone()))?.check_route(rest)
    }

    fn child(&self, name: &str) -> Option<&dyn Collab> {
        self.children.get(name).map(|c| c.as_ref())
    }
}
