use std::fmt;

use serde_json::Value as Json;
use sha2::{Digest, Sha256};

/// Hash of a document's observable state. Metadata (dots, clocks,
/// positions) never contributes, so equal values give equal digests.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateDigest([u8; 32]);

impl StateDigest {
    pub fn of(value: &Json) -> Self {
        // serde_json maps are sorted by key, so this encoding is canonical.
        let bytes = serde_json::to_vec(value).expect("json values always serialize");
        StateDigest(Sha256::digest(&bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateDigest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_does_not_matter() {
        let a: Json = serde_json::from_str(r#"{"x":1,"y":[1,2]}"#).unwrap();
        let b: Json = serde_json::from_str(r#"{"y":[1,2],"x":1}"#).unwrap();
        assert_eq!(StateDigest::of(&a), StateDigest::of(&b));
        assert_ne!(StateDigest::of(&a), StateDigest::of(&json!({"x": 2, "y": [1, 2]})));
    }
}
