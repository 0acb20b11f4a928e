use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::{Dot, SaveNode};

const OP_CREATE: u8 = 0;
const OP_DELETE: u8 = 1;

/// Builds a child from its creation arguments.
pub type Factory<C> = Arc<dyn Fn(&Init, &[u8]) -> Result<C>>;

struct Slot<C> {
    args: Vec<u8>,
    child: C,
}

/// What a set-level message did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SetEvent {
    Created(String),
    Deleted(String),
    /// Delete of a child that was already gone.
    Noop,
}

/// Set of dynamically created children with permanent deletion.
///
/// Each child is named by the dot of its create message. No tombstones are
/// kept: a name whose dot the local clock covers but which is absent has been
/// deleted, so late messages for it are dropped.
pub struct CSet<C: Collab> {
    init: Init,
    factory: Factory<C>,
    children: BTreeMap<String, Slot<C>>,
}

impl<C: Collab> fmt::Debug for CSet<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CSet").field("children", &self.children.keys().collect::<Vec<_>>()).finish()
    }
}

pub(crate) fn parse_name(name: &str) -> Result<Dot> {
    name.parse().map_err(|_| Error::UnknownChild(name.to_owned()))
}

impl<C: Collab> CSet<C> {
    pub fn new(init: &Init, factory: impl Fn(&Init, &[u8]) -> Result<C> + 'static) -> Self {
        CSet { init: init.clone(), factory: Arc::new(factory), children: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn has(&self, name: &str) -> bool {
        self.children.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&C> {
        self.children.get(name).map(|s| &s.child)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.children.keys().map(String::as_str)
    }

    pub fn values(&self) -> impl Iterator<Item = (&str, &C)> + '_ {
        self.children.iter().map(|(k, s)| (k.as_str(), &s.child))
    }

    pub fn create_payload(args: &[u8]) -> Vec<u8> {
        let mut w = Writer::with_capacity(args.len() + 1);
        w.u8(OP_CREATE).raw(args);
        w.finish()
    }

    pub fn delete_payload(name: &str) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(OP_DELETE).str(name);
        w.finish()
    }

    /// Applies a set-level (empty-path) message.
    pub fn receive_op(&mut self, payload: &[u8], meta: &UpdateMeta<'_>) -> Result<SetEvent> {
        let mut r = Reader::new(payload);
        match r.u8()? {
            OP_CREATE => {
                let name = meta.sender.to_string();
                let args = r.remaining().to_vec();
                let child = (self.factory)(&self.init, &args)?;
                self.children.insert(name.clone(), Slot { args, child });
                Ok(SetEvent::Created(name))
            }
            OP_DELETE => {
                let name = r.str()?.to_owned();
                r.expect_end()?;
                parse_name(&name)?;
                Ok(match self.children.remove(&name) {
                    Some(_) => SetEvent::Deleted(name),
                    None => SetEvent::Noop,
                })
            }
            t => Err(Error::decode(format!("bad set op {t}"))),
        }
    }

    /// Routes a message to child `name`. Returns false if the child was
    /// deleted and the message was dropped.
    pub fn receive_child(
        &mut self,
        name: &str,
        rest: &[String],
        payload: &[u8],
        meta: &UpdateMeta<'_>,
    ) -> Result<bool> {
        match self.children.get_mut(name) {
            Some(slot) => {
                slot.child.receive(rest, payload, meta)?;
                Ok(true)
            }
            None if meta.local_clock.covers(&parse_name(name)?) => Ok(false),
            None => Err(Error::UnknownChild(name.to_owned())),
        }
    }

    /// Merges a remote save; returns names created and deleted locally.
    pub fn merge(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<(Vec<String>, Vec<String>)> {
        let mut r = Reader::new(&save.data);
        let n = r.len_prefix()?;
        let mut remote: BTreeMap<String, &[u8]> = BTreeMap::new();
        for _ in 0..n {
            let name = r.str()?.to_owned();
            parse_name(&name)?;
            remote.insert(name, r.bytes()?);
        }
        r.expect_end()?;
        if remote.len() != save.children.len() || !save.children.keys().all(|k| remote.contains_key(k)) {
            return Err(Error::decode("set save children do not match its entries"));
        }

        let mut created = Vec::new();
        let mut deleted = Vec::new();
        // Build new children first so a failure leaves the set untouched.
        let mut fresh = Vec::new();
        for (name, args) in &remote {
            if self.children.contains_key(name) || cx.local.covers(&parse_name(name)?) {
                continue;
            }
            let mut child = (self.factory)(&self.init, args)?;
            child.load(&save.children[name], cx)?;
            fresh.push((name.clone(), Slot { args: args.to_vec(), child }));
        }
        for (name, slot) in self.children.iter_mut() {
            if let Some(sub) = save.children.get(name) {
                slot.child.load(sub, cx)?;
            }
        }
        let gone: Vec<String> = self
            .children
            .keys()
            .filter(|name| !remote.contains_key(*name) && parse_name(name).is_ok_and(|d| cx.remote.covers(&d)))
            .cloned()
            .collect();
        for name in gone {
            self.children.remove(&name);
            deleted.push(name);
        }
        for (name, slot) in fresh {
            self.children.insert(name.clone(), slot);
            created.push(name);
        }
        Ok((created, deleted))
    }
}

impl<C: Collab> Collab for CSet<C> {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        match path.split_first() {
            None => self.receive_op(payload, meta).map(|_| ()),
            Some((name, rest)) => self.receive_child(name, rest, payload, meta).map(|_| ()),
        }
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        w.varint(self.children.len() as u64);
        let mut node = SaveNode::default();
        for (name, slot) in &self.children {
            w.str(name).bytes(&slot.args);
            node.children.insert(name.clone(), slot.child.save());
        }
        node.data = w.finish();
        node
    }

    fn load(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<()> {
        self.merge(save, cx).map(|_| ())
    }

    fn observe(&self) -> Json {
        Json::Array(self.children.values().map(|s| s.child.observe()).collect())
    }

    fn check_route(&self, path: &[String]) -> Result<()> {
        match path.split_first() {
            None => Ok(()),
            Some((name, rest)) => match self.children.get(name) {
                Some(slot) => slot.child.check_route(rest),
                None => Err(Error::UnknownChild(name.clone())),
            },
        }
    }

    fn child(&self, name: &str) -> Option<&dyn Collab> {
        self.children.get(name).map(|s| &s.child as &dyn Collab)
    }
}

impl<C: Collab> Handle<CSet<C>> {
    /// Creates a child everywhere; returns a handle to it.
    pub fn add(&self, doc: &mut Document, args: &[u8]) -> Result<Handle<C>> {
        let dot = doc.send(self.path().clone(), CSet::<C>::create_payload(args))?;
        Ok(self.child(&dot.to_string()))
    }

    /// Deletes a child everywhere. Deleting an absent child does nothing.
    pub fn delete(&self, doc: &mut Document, name: &str) -> Result<()> {
        if !doc.get(self)?.has(name) {
            return Ok(());
        }
        doc.send(self.path().clone(), CSet::<C>::delete_payload(name))?;
        Ok(())
    }
}
