use std::collections::BTreeSet;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};

use super::ids::{Dot, ReplicaId};

pub const ENVELOPE_MAGIC: u8 = 0x43;
pub const BATCH_MAGIC: u8 = 0x42;
pub const WIRE_VERSION: u8 = 0x01;

/// Names from the root runtime down to the target component.
pub type TreePath = Vec<String>;

/// One broadcast message.
///
/// `deps` lists only causally-maximal dots from replicas other than the
/// sender; the sender's own previous message is an implicit dependency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageEnvelope {
    pub sender: Dot,
    pub deps: Vec<Dot>,
    pub lamport: u64,
    pub path: TreePath,
    pub payload: Vec<u8>,
}

impl MessageEnvelope {
    /// Checks the structural invariants that every well-formed envelope has.
    pub fn validate(&self) -> Result<()> {
        if self.sender.counter == 0 {
            return Err(Error::decode("sender counter must be positive"));
        }
        let mut seen = BTreeSet::new();
        for d in &self.deps {
            if d.replica == self.sender.replica {
                return Err(Error::decode("deps must not name the sender's replica"));
            }
            if d.counter == 0 {
                return Err(Error::decode("dep counter must be positive"));
            }
            if !seen.insert(&d.replica) {
                return Err(Error::decode("deps name the same replica twice"));
            }
        }
        for seg in &self.path {
            if seg.as_bytes().contains(&0) {
                return Err(Error::decode("path segment contains NUL"));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(32 + self.payload.len());
        w.u8(ENVELOPE_MAGIC).u8(WIRE_VERSION);
        w.str(self.sender.replica.as_str());
        self.encode_body(&mut w);
        w.finish()
    }

    fn encode_body(&self, w: &mut Writer) {
        w.varint(self.sender.counter).varint(self.lamport);
        w.varint(self.deps.len() as u64);
        for d in &self.deps {
            w.str(d.replica.as_str()).varint(d.counter);
        }
        w.varint(self.path.len() as u64);
        for seg in &self.path {
            w.str(seg);
        }
        w.bytes(&self.payload);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        expect_header(&mut r, ENVELOPE_MAGIC)?;
        let replica = ReplicaId::new(r.str()?)?;
        let env = Self::decode_body(&mut r, replica)?;
        r.expect_end()?;
        Ok(env)
    }

    fn decode_body(r: &mut Reader<'_>, replica: ReplicaId) -> Result<Self> {
        let counter = r.varint()?;
        let lamport = r.varint()?;
        let ndeps = r.len_prefix()?;
        let mut deps = Vec::with_capacity(ndeps.min(64));
        for _ in 0..ndeps {
            let id = ReplicaId::new(r.str()?)?;
            deps.push(Dot::new(id, r.varint()?));
        }
        let nseg = r.len_prefix()?;
        let mut path = Vec::with_capacity(nseg.min(16));
        for _ in 0..nseg {
            path.push(r.str()?.to_owned());
        }
        let payload = r.bytes()?.to_vec();
        let env = MessageEnvelope { sender: Dot::new(replica, counter), deps, lamport, path, payload };
        env.validate()?;
        Ok(env)
    }

    /// Single-line textual form used by the relay service and trace files.
    pub fn to_line(&self) -> String {
        let rec = LineRecord {
            sender: self.sender.replica.to_string(),
            counter: self.sender.counter,
            lamport: self.lamport,
            deps: self.deps.iter().map(|d| (d.replica.to_string(), d.counter)).collect(),
            path: self.path.clone(),
            payload: BASE64.encode(&self.payload),
        };
        serde_json::to_string(&rec).expect("line record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let rec: LineRecord =
            serde_json::from_str(line).map_err(|e| Error::decode(format!("bad envelope line: {e}")))?;
        let mut deps = Vec::with_capacity(rec.deps.len());
        for (id, c) in rec.deps {
            deps.push(Dot::new(ReplicaId::new(id)?, c));
        }
        let env = MessageEnvelope {
            sender: Dot::new(ReplicaId::new(rec.sender)?, rec.counter),
            deps,
            lamport: rec.lamport,
            path: rec.path,
            payload: BASE64.decode(rec.payload).map_err(|e| Error::decode(format!("bad base64: {e}")))?,
        };
        env.validate()?;
        Ok(env)
    }
}

#[derive(Serialize, Deserialize)]
struct LineRecord {
    sender: String,
    counter: u64,
    lamport: u64,
    deps: Vec<(String, u64)>,
    path: Vec<String>,
    payload: String,
}

fn expect_header(r: &mut Reader<'_>, magic: u8) -> Result<()> {
    let m = r.u8()?;
    if m != magic {
        return Err(Error::decode(format!("bad magic byte {m:#04x}")));
    }
    let v = r.u8()?;
    if v != WIRE_VERSION {
        return Err(Error::decode(format!("unsupported version {v}")));
    }
    Ok(())
}

/// Encodes several envelopes from one sender as a single frame that carries
/// the sender id once.
pub fn encode_batch(envs: &[MessageEnvelope]) -> Result<Vec<u8>> {
    let first = envs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    if envs.iter().any(|e| e.sender.replica != first.sender.replica) {
        return Err(Error::invalid("batch mixes senders"));
    }
    let mut w = Writer::new();
    w.u8(BATCH_MAGIC).u8(WIRE_VERSION);
    w.str(first.sender.replica.as_str());
    w.varint(envs.len() as u64);
    for e in envs {
        e.encode_body(&mut w);
    }
    Ok(w.finish())
}

pub fn decode_batch(bytes: &[u8]) -> Result<Vec<MessageEnvelope>> {
    let mut r = Reader::new(bytes);
    expect_header(&mut r, BATCH_MAGIC)?;
    let replica = ReplicaId::new(r.str()?)?;
    let n = r.len_prefix()?;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        out.push(MessageEnvelope::decode_body(&mut r, replica.clone())?);
    }
    r.expect_end()?;
    Ok(out)
}
