use std::collections::BTreeMap;

use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};

use super::clock::VectorClock;

pub const SAVE_MAGIC: u8 = 0x53;

/// Saved state of one component and, recursively, its children.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SaveNode {
    pub data: Vec<u8>,
    pub children: BTreeMap<String, SaveNode>,
}

impl SaveNode {
    pub fn leaf(data: Vec<u8>) -> Self {
        SaveNode { data, children: BTreeMap::new() }
    }

    pub fn child(&self, name: &str) -> Option<&SaveNode> {
        self.children.get(name)
    }

    fn encode(&self, w: &mut Writer) {
        w.bytes(&self.data);
        w.varint(self.children.len() as u64);
        for (name, node) in &self.children {
            w.str(name);
            node.encode(w);
        }
    }

    fn decode(r: &mut Reader<'_>, depth: usize) -> Result<Self> {
        if depth > 512 {
            return Err(Error::decode("save tree too deep"));
        }
        let data = r.bytes()?.to_vec();
        let n = r.len_prefix()?;
        let mut children = BTreeMap::new();
        for _ in 0..n {
            let name = r.str()?.to_owned();
            let node = SaveNode::decode(r, depth + 1)?;
            if children.insert(name.clone(), node).is_some() {
                return Err(Error::decode(format!("duplicate save entry {name:?}")));
            }
        }
        Ok(SaveNode { data, children })
    }

    /// Number of nodes in this subtree, including itself.
    pub fn node_count(&self) -> usize {
        1 + self.children.values().map(SaveNode::node_count).sum::<usize>()
    }
}

/// Whole-document saved state: causal summary plus the component tree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocumentSave {
    pub causal: VectorClock,
    pub lamport: u64,
    pub tree: SaveNode,
}

impl DocumentSave {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(SAVE_MAGIC).u8(super::envelope::WIRE_VERSION);
        self.causal.encode(&mut w);
        w.varint(self.lamport);
        self.tree.encode(&mut w);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.u8()? != SAVE_MAGIC {
            return Err(Error::decode("not a document save"));
        }
        if r.u8()? != super::envelope::WIRE_VERSION {
            return Err(Error::decode("unsupported save version"));
        }
        let causal = VectorClock::decode(&mut r)?;
        let lamport = r.varint()?;
        let tree = SaveNode::decode(&mut r, 0)?;
        r.expect_end()?;
        Ok(DocumentSave { causal, lamport, tree })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::ReplicaId;

    #[test]
    fn nested_tree_roundtrips() {
        let mut inner = SaveNode::leaf(vec![1, 2]);
        inner.children.insert("deep".into(), SaveNode::leaf(vec![3]));
        let mut tree = SaveNode::default();
        tree.children.insert("x".into(), inner);
        let mut causal = VectorClock::new();
        causal.raise(&ReplicaId::from("a"), 3);
        let save = DocumentSave { causal, lamport: 9, tree };
        let bytes = save.encode();
        assert_eq!(DocumentSave::decode(&bytes).unwrap(), save);
        assert!(DocumentSave::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
