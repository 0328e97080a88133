//! Diagnosis graph: which node pairs trust (`g`) or accuse (`f`) each other,
//! which nodes are isolated, and the dispute rules that update it from the
//! transcripts broadcast in an extended step.
//!
//! Dispute rules, applied identically by every fault-free node to the
//! agreed transcripts:
//!
//! * **R1** – for every dissemination edge `(p, c)` (star from the source
//!   while no `f`-edge exists, the `g`-edge spanning tree afterwards) the
//!   payload `p` claims differs from the payload `c` claims; or for a
//!   trusting pair `i, j`, the digest `i` claims to have sent to `j` differs
//!   from the one `j` claims to have received from `i`. The edge is marked `f`.
//! * **R2** – a node's agreed flag disagrees with recomputing its received
//!   digests against its own claimed payload, or a digest it claims to have
//!   sent does not match its own claimed payload. The node is isolated.
//! * **R3** – a flag was raised but R1 and R2 found nothing: every
//!   flag-raising node is isolated.
//!
//! Honest transcripts are truthful and honest channels are reliable, so R1
//! never marks a pair of fault-free nodes and R2 never fires on a fault-free
//! node. A fault-free node only raises its flag after seeing a digest that
//! mismatches its payload; the digest and payload claims along the path to
//! that sender then necessarily contain an R1 or R2 violation, so R3 only
//! ever reaches faulty nodes. Every extended step therefore adds at least one
//! `f`-edge or isolates at least one node.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, Bits};
use crate::field::{FieldError, KeyedDigest, Payload};
use crate::node::{all_nodes, edge, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeLabel {
    /// The endpoints trust each other.
    G,
    /// The endpoints accuse each other.
    F,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosisError {
    #[error("source is isolated")]
    SourceFaulty,
    #[error("no g-edge spanning tree reaches node {unreached}")]
    NoSpanningTree { unreached: NodeId },
    #[error("transcript of node {node} is {got} bits, expected {expected}")]
    TranscriptLength { node: NodeId, got: usize, expected: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisGraph {
    n: usize,
    t: usize,
    f_edges: BTreeSet<(NodeId, NodeId)>,
    isolated: BTreeSet<NodeId>,
}

impl DiagnosisGraph {
    /// Complete graph with every edge labeled `g`.
    pub fn new(n: usize, t: usize) -> Self {
        DiagnosisGraph {
            n,
            t,
            f_edges: BTreeSet::new(),
            isolated: BTreeSet::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn label(&self, a: NodeId, b: NodeId) -> EdgeLabel {
        if self.f_edges.contains(&edge(a, b)) {
            EdgeLabel::F
        } else {
            EdgeLabel::G
        }
    }

    pub fn trusts(&self, a: NodeId, b: NodeId) -> bool {
        self.label(a, b) == EdgeLabel::G
    }

    /// Marks `ab` as `f`. Returns whether the label changed.
    pub fn mark_f(&mut self, a: NodeId, b: NodeId) -> bool {
        assert_ne!(a, b, "self-edge");
        self.f_edges.insert(edge(a, b))
    }

    pub fn isolate(&mut self, node: NodeId) -> bool {
        self.isolated.insert(node)
    }

    pub fn is_isolated(&self, node: NodeId) -> bool {
        self.isolated.contains(&node)
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        node.index() < self.n && !self.isolated.contains(&node)
    }

    pub fn f_edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.f_edges
    }

    pub fn isolated(&self) -> &BTreeSet<NodeId> {
        &self.isolated
    }

    pub fn has_f_edges(&self) -> bool {
        !self.f_edges.is_empty()
    }

    pub fn active_nodes(&self) -> BTreeSet<NodeId> {
        all_nodes(self.n).filter(|&v| self.is_active(v)).collect()
    }

    /// Active nodes `v` trusts, ascending.
    pub fn g_neighbors(&self, v: NodeId) -> Vec<NodeId> {
        all_nodes(self.n)
            .filter(|&u| u != v && self.is_active(u) && self.trusts(u, v))
            .collect()
    }

    /// Number of active nodes accusing `v`.
    pub fn accusations(&self, v: NodeId) -> usize {
        all_nodes(self.n)
            .filter(|&u| u != v && self.is_active(u) && !self.trusts(u, v))
            .count()
    }

    pub fn apply(&mut self, verdict: &DisputeVerdict) {
        for &(a, b) in &verdict.new_f_edges {
            self.mark_f(a, b);
        }
        for &v in &verdict.self_contradictory_nodes {
            self.isolate(v);
        }
    }

    /// JSON shape `{"n": .., "t": .., "f_edges": [[a, b], ..], "isolated": [..]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serializes")
    }
}

/// Moves every active node accused by more than `t` active nodes to the
/// isolated set, recounting until nothing changes.
pub fn update_isolation(graph: &mut DiagnosisGraph) -> BTreeSet<NodeId> {
    let mut newly = BTreeSet::new();
    loop {
        let over: Vec<NodeId> = graph
            .active_nodes()
            .into_iter()
            .filter(|&v| graph.accusations(v) > graph.t)
            .collect();
        if over.is_empty() {
            return newly;
        }
        for v in over {
            graph.isolate(v);
            newly.insert(v);
        }
    }
}

/// Source-rooted tree over the active nodes using only `g`-edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanningTree {
    pub root: NodeId,
    pub parent: BTreeMap<NodeId, NodeId>,
}

impl SpanningTree {
    pub fn children(&self, v: NodeId) -> Vec<NodeId> {
        self.parent
            .iter()
            .filter(|(_, &p)| p == v)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Tree edges `(parent, child)` grouped by depth, top level first.
    pub fn levels(&self) -> Vec<Vec<(NodeId, NodeId)>> {
        let mut levels = Vec::new();
        let mut frontier = vec![self.root];
        loop {
            let level: Vec<(NodeId, NodeId)> = frontier
                .iter()
                .flat_map(|&p| self.children(p).into_iter().map(move |c| (p, c)))
                .collect();
            if level.is_empty() {
                return levels;
            }
            frontier = level.iter().map(|&(_, c)| c).collect();
            levels.push(level);
        }
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.levels().into_iter().flatten().collect()
    }
}

/// Breadth-first tree from the source over `g`-edges between active nodes,
/// visiting neighbors in ascending id order.
pub fn build_spanning_tree(graph: &DiagnosisGraph) -> Result<SpanningTree, DiagnosisError> {
    let root = NodeId::SOURCE;
    if !graph.is_active(root) {
        return Err(DiagnosisError::SourceFaulty);
    }
    let mut parent = BTreeMap::new();
    let mut seen: BTreeSet<NodeId> = [root].into();
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for u in graph.g_neighbors(v) {
            if seen.insert(u) {
                parent.insert(u, v);
                queue.push_back(u);
            }
        }
    }
    if let Some(unreached) = graph.active_nodes().into_iter().find(|v| !seen.contains(v)) {
        return Err(DiagnosisError::NoSpanningTree { unreached });
    }
    Ok(SpanningTree { root, parent })
}

/// Every pair of active peers is joined by a `g`-path of length at most 2
/// through active peers (the source excluded).
pub fn check_two_hop_lemma(graph: &DiagnosisGraph) -> bool {
    let peers: Vec<NodeId> = graph
        .active_nodes()
        .into_iter()
        .filter(|v| !v.is_source())
        .collect();
    peers.iter().enumerate().all(|(idx, &i)| {
        peers[idx + 1..].iter().all(|&j| {
            graph.trusts(i, j)
                || peers
                    .iter()
                    .any(|&m| m != i && m != j && graph.trusts(i, m) && graph.trusts(m, j))
        })
    })
}

/// Payload dissemination edges `(sender, receiver)` implied by the graph:
/// the source to every active peer while no `f`-edge exists, otherwise the
/// edges of the `g`-edge spanning tree.
pub fn dissemination_edges(graph: &DiagnosisGraph) -> Result<Vec<(NodeId, NodeId)>, DiagnosisError> {
    if !graph.is_active(NodeId::SOURCE) {
        return Err(DiagnosisError::SourceFaulty);
    }
    if graph.has_f_edges() {
        Ok(build_spanning_tree(graph)?.edges())
    } else {
        Ok(graph
            .active_nodes()
            .into_iter()
            .filter(|v| !v.is_source())
            .map(|v| (NodeId::SOURCE, v))
            .collect())
    }
}

/// What a node claims, in the extended step, about one generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub node_id: NodeId,
    /// The payload it holds; for the source, the payload it sent.
    pub claimed_payload: Payload,
    pub claimed_sent_digests: BTreeMap<NodeId, KeyedDigest>,
    pub claimed_received_digests: BTreeMap<NodeId, KeyedDigest>,
    /// `true` when it reported an inconsistency.
    pub claimed_flag: bool,
}

impl Transcript {
    /// Wire length: `D` payload bits plus a `2k`-bit keyed digest per
    /// trusting neighbor in each direction. The flag travels separately in
    /// the notification broadcast.
    pub fn wire_len(d_bits: usize, k: u32, neighbors: usize) -> usize {
        d_bits + 2 * neighbors * KeyedDigest::wire_bits(k)
    }

    /// Encodes payload, then sent digests and received digests for each of
    /// `neighbors` in the given order. Missing entries encode as zeros.
    pub fn encode(&self, neighbors: &[NodeId], k: u32) -> Bits {
        let mut out = self.claimed_payload.bits().clone();
        let zero_digest = bits::zeros(KeyedDigest::wire_bits(k));
        for map in [&self.claimed_sent_digests, &self.claimed_received_digests] {
            for j in neighbors {
                match map.get(j) {
                    Some(kd) if kd.key.width() == k && kd.digest.width() == k => kd.encode_into(&mut out),
                    _ => out.extend_from_bitslice(&zero_digest),
                }
            }
        }
        out
    }

    pub fn decode(
        node_id: NodeId,
        bits: &Bits,
        neighbors: &[NodeId],
        d_bits: usize,
        k: u32,
        claimed_flag: bool,
    ) -> Result<Self, DiagnosisError> {
        let expected = Self::wire_len(d_bits, k, neighbors.len());
        if bits.len() != expected {
            return Err(DiagnosisError::TranscriptLength {
                node: node_id,
                got: bits.len(),
                expected,
            });
        }
        let claimed_payload = Payload::new(bits[..d_bits].to_bitvec());
        let w = KeyedDigest::wire_bits(k);
        let mut offset = d_bits;
        let read = |offset: &mut usize| -> Result<BTreeMap<NodeId, KeyedDigest>, DiagnosisError> {
            let mut m = BTreeMap::new();
            for &j in neighbors {
                m.insert(j, KeyedDigest::decode(bits, *offset, k)?);
                *offset += w;
            }
            Ok(m)
        };
        let claimed_sent_digests = read(&mut offset)?;
        let claimed_received_digests = read(&mut offset)?;
        Ok(Transcript {
            node_id,
            claimed_payload,
            claimed_sent_digests,
            claimed_received_digests,
            claimed_flag,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeVerdict {
    pub new_f_edges: BTreeSet<(NodeId, NodeId)>,
    pub self_contradictory_nodes: BTreeSet<NodeId>,
}

impl DisputeVerdict {
    pub fn is_empty(&self) -> bool {
        self.new_f_edges.is_empty() && self.self_contradictory_nodes.is_empty()
    }
}

/// Applies R1–R3 to the agreed transcripts of the active nodes.
///
/// An active node without a transcript, or whose transcript lacks an entry
/// for a trusting neighbor, is self-contradictory.
pub fn analyze_dispute(
    graph: &DiagnosisGraph,
    transcripts: &BTreeMap<NodeId, Transcript>,
) -> Result<DisputeVerdict, DiagnosisError> {
    let mut verdict = DisputeVerdict::default();
    let active = graph.active_nodes();

    for &v in &active {
        let Some(tr) = transcripts.get(&v) else {
            verdict.self_contradictory_nodes.insert(v);
            continue;
        };
        let neighbors = graph.g_neighbors(v);
        let complete = neighbors.iter().all(|j| {
            tr.claimed_sent_digests.contains_key(j) && tr.claimed_received_digests.contains_key(j)
        });
        if !complete {
            verdict.self_contradictory_nodes.insert(v);
            continue;
        }
        // R2: the flag must match the node's own claims, and so must every digest it sent.
        let mismatch = neighbors
            .iter()
            .any(|j| !tr.claimed_received_digests[j].verifies(&tr.claimed_payload));
        let bad_sent = neighbors
            .iter()
            .any(|j| !tr.claimed_sent_digests[j].verifies(&tr.claimed_payload));
        if mismatch != tr.claimed_flag || bad_sent {
            verdict.self_contradictory_nodes.insert(v);
        }
    }

    // R1, payload: dissemination edges.
    for (p, c) in dissemination_edges(graph)? {
        if let (Some(tp), Some(tc)) = (transcripts.get(&p), transcripts.get(&c)) {
            if tp.claimed_payload != tc.claimed_payload && graph.trusts(p, c) {
                verdict.new_f_edges.insert(edge(p, c));
            }
        }
    }

    // R1, digests: every trusting active pair, both directions.
    for &i in &active {
        for j in graph.g_neighbors(i) {
            let (Some(ti), Some(tj)) = (transcripts.get(&i), transcripts.get(&j)) else {
                continue;
            };
            if ti.claimed_sent_digests.get(&j) != tj.claimed_received_digests.get(&i) {
                verdict.new_f_edges.insert(edge(i, j));
            }
        }
    }

    // R3
    if verdict.is_empty() {
        for (&v, tr) in transcripts {
            if tr.claimed_flag && active.contains(&v) {
                verdict.self_contradictory_nodes.insert(v);
            }
        }
    }
    Ok(verdict)
}
