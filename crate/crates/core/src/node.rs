use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a node in the complete network. Node 0 is the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const SOURCE: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_source(self) -> bool {
        self == Self::SOURCE
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// All node ids `0..n` in ascending order.
pub fn all_nodes(n: usize) -> impl Iterator<Item = NodeId> {
    (0..n).map(NodeId::from)
}

/// Unordered node pair, stored with the smaller id first.
pub fn edge(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
