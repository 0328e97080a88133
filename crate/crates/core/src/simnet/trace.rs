use serde::{Deserialize, Serialize};

use super::StepTag;
use crate::node::NodeId;

/// One trace record per delivered round, written as a JSON line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u64,
    pub generation: u64,
    pub step_tag: StepTag,
    pub message_count: u64,
    pub bits: u64,
    /// `(message size in bits, number of messages of that size)`, ascending by size.
    pub message_sizes: Vec<(usize, u64)>,
    /// Diagnosis-graph changes decided at the end of this round, if any.
    pub graph_delta: Option<GraphDelta>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub new_f_edges: Vec<(NodeId, NodeId)>,
    pub self_contradictory: Vec<NodeId>,
    pub newly_isolated: Vec<NodeId>,
}
