use std::collections::BTreeMap;

use serde_json::Value as Json;

use crate::collab::{Collab, Init, MergeContext, UpdateMeta};
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::runtime::{Dot, ReplicaId, SaveNode, VectorClock};

const OP_SET: u8 = 0;
const OP_SCALE: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
struct BaseSet {
    value: f64,
    lamport: u64,
    writer: ReplicaId,
    /// Max scale counter per replica the setter had delivered.
    observed: VectorClock,
}

impl BaseSet {
    fn beats(&self, other: &BaseSet) -> bool {
        (self.lamport, &self.writer) > (other.lamport, &other.writer)
    }
}

/// A number that can be set (last writer wins) or scaled, where scaling also
/// applies to concurrent sets.
///
/// The value is the winning set's value times every scale factor not in
/// that set's causal past. Sets carry a per-replica summary of the scales
/// their sender had seen, so no causal query is needed at the receiver.
#[derive(Clone, Debug)]
pub struct CScaleNum {
    initial: f64,
    base: Option<BaseSet>,
    scales: BTreeMap<Dot, f64>,
}

fn check_value(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("non-finite value {v}")))
    }
}

fn check_factor(f: f64) -> Result<f64> {
    if f.is_finite() && f > 0.0 {
        Ok(f)
    } else {
        Err(Error::invalid(format!("scale factor must be finite and positive, got {f}")))
    }
}

impl CScaleNum {
    pub fn new(_init: &Init, initial: f64) -> Self {
        CScaleNum { initial, base: None, scales: BTreeMap::new() }
    }

    pub fn value(&self) -> f64 {
        let (mut v, observed) = match &self.base {
            Some(b) => (b.value, Some(&b.observed)),
            None => (self.initial, None),
        };
        for (dot, f) in &self.scales {
            if !observed.is_some_and(|o| o.covers(dot)) {
                v *= f;
            }
        }
        v
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    fn observed_scales(&self) -> VectorClock {
        let mut vc = VectorClock::new();
        for dot in self.scales.keys() {
            vc.observe(dot);
        }
        vc
    }

    pub fn set_payload(&self, v: f64) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.u8(OP_SET).f64(check_value(v)?);
        self.observed_scales().encode(&mut w);
        Ok(w.finish())
    }

    pub fn scale_payload(f: f64) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.u8(OP_SCALE).f64(check_factor(f)?);
        Ok(w.finish())
    }

    fn offer(&mut self, cand: BaseSet) {
        if self.base.as_ref().is_none_or(|cur| cand.beats(cur)) {
            self.base = Some(cand);
        }
    }
}

impl Collab for CScaleNum {
    fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
        if let Some(seg) = path.first() {
            return Err(Error::UnknownChild(seg.clone()));
        }
        let mut r = Reader::new(payload);
        match r.u8()? {
            OP_SET => {
                let value = check_value(r.f64()?).map_err(|e| Error::decode(e.to_string()))?;
                let observed = VectorClock::decode(&mut r)?;
                r.expect_end()?;
                self.offer(BaseSet { value, lamport: meta.lamport, writer: meta.replica().clone(), observed });
            }
            OP_SCALE => {
                let f = check_factor(r.f64()?).map_err(|e| Error::decode(e.to_string()))?;
                r.expect_end()?;
                self.scales.insert(meta.sender.clone(), f);
            }
            t => return Err(Error::decode(format!("bad scale-num op {t}"))),
        }
        Ok(())
    }

    fn save(&self) -> SaveNode {
        let mut w = Writer::new();
        match &self.base {
            None => {
                w.u8(0);
            }
            Some(b) => {
                w.u8(1).f64(b.value).varint(b.lamport).str(b.writer.as_str());
                b.observed.encode(&mut w);
            }
        }
        w.varint(self.scales.len() as u64);
        for (dot, f) in &self.scales {
            w.str(dot.replica.as_str()).varint(dot.counter).f64(*f);
        }
        SaveNode::leaf(w.finish())
    }

    fn load(&mut self, save: &SaveNode, _cx: &MergeContext<'_>) -> Result<()> {
        let mut r = Reader::new(&save.data);
        let base = match r.u8()? {
            0 => None,
            1 => {
                let value = r.f64()?;
                let lamport = r.varint()?;
                let writer = ReplicaId::new(r.str()?)?;
                Some(BaseSet { value, lamport, writer, observed: VectorClock::decode(&mut r)? })
            }
            t => return Err(Error::decode(format!("bad base tag {t}"))),
        };
        let n = r.len_prefix()?;
        let mut scales = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let replica = ReplicaId::new(r.str()?)?;
            let dot = Dot::new(replica, r.varint()?);
            scales.push((dot, r.f64()?));
        }
        r.expect_end()?;
        if let Some(b) = base {
            self.offer(b);
        }
        self.scales.extend(scales);
        Ok(())
    }

    fn observe(&self) -> Json {
        serde_json::Number::from_f64(self.value()).map_or(Json::Null, Json::Number)
    }
}

impl Handle<CScaleNum> {
    pub fn set(&self, doc: &mut Document, v: f64) -> Result<Dot> {
        let payload = doc.get(self)?.set_payload(v)?;
        doc.send(self.path().clone(), payload)
    }

    pub fn scale(&self, doc: &mut Document, f: f64) -> Result<Dot> {
        doc.send(self.path().clone(), CScaleNum::scale_payload(f)?)
    }

    pub fn value(&self, doc: &Document) -> Result<f64> {
        Ok(doc.get(self)?.value())
    }
}
