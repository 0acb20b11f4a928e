//! Composable hybrid op-based/state-based CRDT kernel.
//!
//! A [`Document`] owns a causal-broadcast [`Runtime`](runtime::Runtime) and a
//! tree of [`Collab`] components. Local operations are stamped, applied
//! through the ordinary receive path, and queued as envelopes; remote
//! envelopes are buffered until causally ready. Saved states merge with the
//! same observable effect as replaying the operations they contain.

pub mod collab;
pub mod collections;
pub mod custom;
pub mod digest;
pub mod document;
pub mod encoding;
pub mod error;
pub mod primitives;
pub mod runtime;

pub use collab::{CObject, CObjectBuilder, Collab, Faults, Init, MergeContext, UpdateMeta, RESERVED_PREFIX};
pub use collections::{CList, CSet};
pub use custom::{CIngredient, CRecipe, CScaleNum, Unit};
pub use digest::StateDigest;
pub use document::{Document, Handle};
pub use error::{Error, Result};
pub use primitives::{CCounter, CText, CTotalOrder, CValueList, CVar, Position};
pub use runtime::{DocumentSave, Dot, MessageEnvelope, Mode, ReplicaId, SaveNode, TreePath, VectorClock};
