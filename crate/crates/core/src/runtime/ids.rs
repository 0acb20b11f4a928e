use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

const ID_ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
const ID_LEN: usize = 10;

/// Identity of one replica of a document. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReplicaId(Arc<str>);

impl ReplicaId {
    pub fn new(id: impl AsRef<str>) -> Result<Self> {
        let id = id.as_ref();
        if id.is_empty() {
            return Err(Error::invalid("replica id must be non-empty"));
        }
        if id.contains('\0') {
            return Err(Error::invalid("replica id must not contain NUL"));
        }
        Ok(ReplicaId(Arc::from(id)))
    }

    /// Ten symbols from a 64-letter alphabet, drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let id: String = (0..ID_LEN).map(|_| ID_ALPHABET[rng.gen_range(0..64)] as char).collect();
        ReplicaId(Arc::from(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ReplicaId {
    /// Panics on an empty string; use [`ReplicaId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        ReplicaId::new(s).expect("valid replica id")
    }
}

/// Globally unique operation identifier: the `counter`-th message sent by
/// `replica`. Counters start at 1.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Dot {
    pub replica: ReplicaId,
    pub counter: u64,
}

impl Dot {
    pub fn new(replica: ReplicaId, counter: u64) -> Self {
        Dot { replica, counter }
    }
}

impl fmt::Display for Dot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.replica, self.counter)
    }
}

impl FromStr for Dot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (replica, counter) = s.rsplit_once('.').ok_or_else(|| Error::decode(format!("not a dot: {s:?}")))?;
        let counter = counter.parse::<u64>().map_err(|_| Error::decode(format!("not a dot: {s:?}")))?;
        if counter == 0 {
            return Err(Error::decode("dot counters start at 1"));
        }
        Ok(Dot { replica: ReplicaId::new(replica)?, counter })
    }
}
