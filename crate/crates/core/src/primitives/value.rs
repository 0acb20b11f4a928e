use std::fmt::Debug;

use serde_json::Value as Json;

use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};

/// Plain data stored inside registers and value lists.
pub trait Value: Clone + PartialEq + Debug + 'static {
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self>;
    fn to_json(&self) -> Json;

    fn encode_seq(items: &[Self], w: &mut Writer) {
        w.varint(items.len() as u64);
        for it in items {
            it.encode(w);
        }
    }

    fn decode_seq(r: &mut Reader<'_>) -> Result<Vec<Self>> {
        let n = r.len_prefix()?;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            out.push(Self::decode(r)?);
        }
        Ok(out)
    }
}

impl Value for String {
    fn encode(&self, w: &mut Writer) {
        w.str(self);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(r.str()?.to_owned())
    }

    fn to_json(&self) -> Json {
        Json::String(self.clone())
    }
}

impl Value for i64 {
    fn encode(&self, w: &mut Writer) {
        w.svarint(*self);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        r.svarint()
    }

    fn to_json(&self) -> Json {
        Json::from(*self)
    }
}

impl Value for bool {
    fn encode(&self, w: &mut Writer) {
        w.u8(u8::from(*self));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::decode(format!("bad bool byte {b}"))),
        }
    }

    fn to_json(&self) -> Json {
        Json::Bool(*self)
    }
}

impl Value for f64 {
    fn encode(&self, w: &mut Writer) {
        w.f64(*self);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        r.f64()
    }

    fn to_json(&self) -> Json {
        serde_json::Number::from_f64(*self).map_or(Json::Null, Json::Number)
    }
}

/// Characters are stored as one UTF-8 string per run.
impl Value for char {
    fn encode(&self, w: &mut Writer) {
        let mut buf = [0u8; 4];
        w.str(self.encode_utf8(&mut buf));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let s = r.str()?;
        let mut it = s.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(Error::decode("expected exactly one char")),
        }
    }

    fn to_json(&self) -> Json {
        Json::String(self.to_string())
    }

    fn encode_seq(items: &[Self], w: &mut Writer) {
        let s: String = items.iter().collect();
        w.str(&s);
    }

    fn decode_seq(r: &mut Reader<'_>) -> Result<Vec<Self>> {
        Ok(r.str()?.chars().collect())
    }
}
