//! A document replica: the causal runtime plus the root of the component
//! tree.

use std::fmt;
use std::marker::PhantomData;

use serde_json::Value as Json;

use crate::collab::{CObject, Collab, Faults, Init, MergeContext, UpdateMeta};
use crate::digest::StateDigest;
use crate::error::{Error, Result};
use crate::runtime::{Delivery, DocumentSave, Dot, MessageEnvelope, Mode, ReplicaId, Runtime, TreePath, VectorClock};

/// Typed address of a component inside a [`Document`].
pub struct Handle<C: ?Sized> {
    path: TreePath,
    _marker: PhantomData<fn() -> C>,
}

impl<C: ?Sized> Handle<C> {
    pub fn new(path: TreePath) -> Self {
        Handle { path, _marker: PhantomData }
    }

    pub fn path(&self) -> &TreePath {
        &self.path
    }

    /// Handle to a named child of this component.
    pub fn child<D: ?Sized>(&self, name: &str) -> Handle<D> {
        let mut path = self.path.clone();
        path.push(name.to_owned());
        Handle::new(path)
    }
}

impl<C: ?Sized> Clone for Handle<C> {
    fn clone(&self) -> Self {
        Handle::new(self.path.clone())
    }
}

impl<C: ?Sized> PartialEq for Handle<C> {
    fn eq(&self, other: &Self) -> bool {
        self.path == other.path
    }
}

impl<C: ?Sized> Eq for Handle<C> {}

impl<C: ?Sized> fmt::Debug for Handle<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({})", self.path.join("/"))
    }
}

pub struct Document {
    runtime: Runtime,
    root: CObject,
    init: Init,
    outbox: Vec<MessageEnvelope>,
    used: bool,
}

impl Document {
    pub fn new(replica: ReplicaId, mode: Mode) -> Self {
        Self::with_faults(replica, mode, Faults::default())
    }

    pub fn with_faults(replica: ReplicaId, mode: Mode, faults: Faults) -> Self {
        Document {
            runtime: Runtime::new(replica, mode),
            root: CObject::default(),
            init: Init::new(faults),
            outbox: Vec::new(),
            used: false,
        }
    }

    pub fn replica(&self) -> &ReplicaId {
        self.runtime.replica()
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn clock(&self) -> &VectorClock {
        self.runtime.clock()
    }

    /// Registers a top-level component. Must happen before the document sends,
    /// receives or loads anything, in the same order on every replica.
    pub fn register<C: Collab>(&mut self, name: &str, ctor: impl FnOnce(&Init) -> C) -> Result<Handle<C>> {
        if self.used {
            return Err(Error::ContractViolation(format!("register({name:?}) after the document was used")));
        }
        self.root.insert(name, Box::new(ctor(&self.init)))?;
        Ok(Handle::new(vec![name.to_owned()]))
    }

    pub fn resolve(&self, path: &[String]) -> Result<&dyn Collab> {
        let mut node: &dyn Collab = &self.root;
        for seg in path {
            node = node.child(seg).ok_or_else(|| Error::UnknownChild(seg.clone()))?;
        }
        Ok(node)
    }

    pub fn get<C: Collab>(&self, handle: &Handle<C>) -> Result<&C> {
        let node: &dyn std::any::Any = self.resolve(handle.path())?;
        node.downcast_ref::<C>().ok_or_else(|| Error::TypeMismatch(handle.path().clone()))
    }

    /// Sends a locally originated message: stamps it, applies it through the
    /// normal receive path, and queues the envelope for broadcast.
    pub fn send(&mut self, path: TreePath, payload: Vec<u8>) -> Result<Dot> {
        if let Err(e) = self.root.check_route(&path) {
            return Err(match e {
                Error::UnknownChild(_) => Error::Orphaned(path),
                other => other,
            });
        }
        self.used = true;
        let env = self.runtime.send_local(path, payload);
        let meta = UpdateMeta::new(&env.sender, env.lamport, true, self.runtime.clock(), None);
        self.root.receive(&env.path, &env.payload, &meta)?;
        let dot = env.sender.clone();
        self.outbox.push(env);
        Ok(dot)
    }

    /// Envelopes produced by local operations since the last call.
    pub fn take_outbox(&mut self) -> Vec<MessageEnvelope> {
        std::mem::take(&mut self.outbox)
    }

    /// Hands a network envelope to the causal buffer and applies everything
    /// that became deliverable. Returns the delivered envelopes in order.
    pub fn receive(&mut self, env: MessageEnvelope) -> Result<Vec<MessageEnvelope>> {
        self.used = true;
        let deliveries = self.runtime.receive_envelope(env)?;
        self.apply(deliveries)
    }

    fn apply(&mut self, deliveries: Vec<Delivery>) -> Result<Vec<MessageEnvelope>> {
        let mut first_err = None;
        let mut out = Vec::with_capacity(deliveries.len());
        for d in deliveries {
            let env = &d.envelope;
            let meta = UpdateMeta::new(&env.sender, env.lamport, false, self.runtime.clock(), d.causal_past.as_ref());
            if let Err(e) = self.root.receive(&env.path, &env.payload, &meta) {
                first_err.get_or_insert(e);
            }
            out.push(d.envelope);
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    pub fn save_document(&self) -> DocumentSave {
        DocumentSave { causal: self.runtime.clock().clone(), lamport: self.runtime.lamport(), tree: self.root.save() }
    }

    pub fn save(&self) -> Vec<u8> {
        self.save_document().encode()
    }

    /// Merges a saved state. Returns buffered envelopes released by the
    /// merge.
    pub fn load(&mut self, bytes: &[u8]) -> Result<Vec<MessageEnvelope>> {
        let save = DocumentSave::decode(bytes)?;
        self.load_document(&save)
    }

    pub fn load_document(&mut self, save: &DocumentSave) -> Result<Vec<MessageEnvelope>> {
        if let Some(unknown) = save.tree.children.keys().find(|k| !self.root.contains(k)) {
            return Err(Error::UnknownChild(unknown.clone()));
        }
        self.used = true;
        let local = self.runtime.clock().clone();
        let cx = MergeContext { local: &local, remote: &save.causal };
        self.root.load(&save.tree, &cx)?;
        let released = self.runtime.merge_remote(&save.causal, save.lamport);
        self.apply(released)
    }

    pub fn observe(&self) -> Json {
        self.root.observe()
    }

    pub fn digest(&self) -> StateDigest {
        StateDigest::of(&self.observe())
    }
}
