//! Synchronous round engine over a complete network.
//!
//! Every call to [`Network::step`] is one round: all messages are delivered
//! together at the barrier and charged to the counter of their [`StepTag`].
//! Callers enforce rushing order themselves: honest messages for a step are
//! built first, the adversary is shown the ones addressed to faulty nodes
//! ([`rushing_view`]), and only then are faulty messages added to the outbox.

mod metrics;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::node::NodeId;

pub use metrics::{bound_terms, complexity_report, security_bound, security_bound_f64, ComplexityReport, CostTerms, RunMetrics};
pub use trace::{GraphDelta, RoundTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StepTag {
    Data,
    HashExchange,
    NotificationBA,
    ExtendedBA,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundMessage {
    pub sender: NodeId,
    pub recipient: NodeId,
    pub step_tag: StepTag,
    pub bits: Bits,
}

/// Harness bugs: the protocol code tried to do something the model forbids.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("node {node} is isolated and may not send or receive ({sender} -> {recipient})")]
    IsolatedEndpoint {
        node: NodeId,
        sender: NodeId,
        recipient: NodeId,
    },
    #[error("node {0} sent a message to itself")]
    SelfMessage(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("empty message {sender} -> {recipient}")]
    EmptyMessage { sender: NodeId, recipient: NodeId },
    #[error("round mixes step tags {first:?} and {other:?}")]
    MixedStepTags { first: StepTag, other: StepTag },
}

/// Messages delivered in one round, grouped by recipient.
#[derive(Debug, Default)]
pub struct Inboxes {
    by_node: BTreeMap<NodeId, Vec<RoundMessage>>,
}

impl Inboxes {
    pub fn get(&self, node: NodeId) -> &[RoundMessage] {
        self.by_node.get(&node).map_or(&[], Vec::as_slice)
    }

    /// The message from `sender` to `node`, if any.
    pub fn from(&self, node: NodeId, sender: NodeId) -> Option<&RoundMessage> {
        self.get(node).iter().find(|m| m.sender == sender)
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.values().all(Vec::is_empty)
    }

    pub fn into_map(self) -> BTreeMap<NodeId, Vec<RoundMessage>> {
        self.by_node
    }
}

/// Honest messages of the current step that faulty nodes are allowed to see
/// before choosing their own.
pub fn rushing_view<'a>(
    outbox: &'a [RoundMessage],
    faulty: &'a BTreeSet<NodeId>,
) -> impl Iterator<Item = &'a RoundMessage> {
    outbox.iter().filter(move |m| faulty.contains(&m.recipient))
}

#[derive(Debug, Clone)]
pub struct Network {
    n: usize,
    isolated: BTreeSet<NodeId>,
    metrics: RunMetrics,
    round: u64,
    generation: u64,
    trace: Option<Vec<RoundTrace>>,
}

impl Network {
    pub fn new(n: usize, trace: bool) -> Self {
        Network {
            n,
            isolated: BTreeSet::new(),
            metrics: RunMetrics::default(),
            round: 0,
            generation: 0,
            trace: trace.then(Vec::new),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn isolate(&mut self, node: NodeId) {
        self.isolated.insert(node);
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        node.index() < self.n && !self.isolated.contains(&node)
    }

    pub fn set_generation(&mut self, generation: u64) {
        self.generation = generation;
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn metrics_mut(&mut self) -> &mut RunMetrics {
        &mut self.metrics
    }

    pub fn trace(&self) -> Option<&[RoundTrace]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<RoundTrace>> {
        self.trace.take()
    }

    /// Attaches a diagnosis-graph update to the most recent round record.
    pub fn record_graph_delta(&mut self, delta: GraphDelta) {
        if let Some(last) = self.trace.as_mut().and_then(|t| t.last_mut()) {
            last.graph_delta = Some(delta);
        }
    }

    /// Delivers one round of messages.
    pub fn step(&mut self, outbox: Vec<RoundMessage>) -> Result<Inboxes, SimError> {
        let Some(first) = outbox.first().map(|m| m.step_tag) else {
            return Ok(Inboxes::default());
        };
        for m in &outbox {
            if m.step_tag != first {
                return Err(SimError::MixedStepTags {
                    first,
                    other: m.step_tag,
                });
            }
            for node in [m.sender, m.recipient] {
                if node.index() >= self.n {
                    return Err(SimError::UnknownNode(node));
                }
                if self.isolated.contains(&node) {
                    return Err(SimError::IsolatedEndpoint {
                        node,
                        sender: m.sender,
                        recipient: m.recipient,
                    });
                }
            }
            if m.sender == m.recipient {
                return Err(SimError::SelfMessage(m.sender));
            }
            if m.bits.is_empty() {
                return Err(SimError::EmptyMessage {
                    sender: m.sender,
                    recipient: m.recipient,
                });
            }
        }

        let mut sizes: BTreeMap<usize, u64> = BTreeMap::new();
        let mut round_bits = 0u64;
        for m in &outbox {
            let len = m.bits.len() as u64;
            self.metrics.charge(m.step_tag, len);
            round_bits += len;
            *sizes.entry(m.bits.len()).or_default() += 1;
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(RoundTrace {
                round: self.round,
                generation: self.generation,
                step_tag: first,
                message_count: outbox.len() as u64,
                bits: round_bits,
                message_sizes: sizes.into_iter().collect(),
                graph_delta: None,
            });
        }
        self.round += 1;

        let mut inboxes = Inboxes::default();
        for m in outbox {
            inboxes.by_node.entry(m.recipient).or_default().push(m);
        }
        Ok(inboxes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::zeros;

    fn msg(s: u32, r: u32, tag: StepTag, len: usize) -> RoundMessage {
        RoundMessage {
            sender: NodeId(s),
            recipient: NodeId(r),
            step_tag: tag,
            bits: zeros(len),
        }
    }

    #[test]
    fn empty_outbox_changes_nothing() {
        let mut net = Network::new(4, true);
        let inboxes = net.step(Vec::new()).unwrap();
        assert!(inboxes.is_empty());
        assert_eq!(net.metrics(), &RunMetrics::default());
        assert_eq!(net.trace().unwrap().len(), 0);
    }

    #[test]
    fn data_message_charged_exactly() {
        let mut net = Network::new(4, false);
        let inboxes = net.step(vec![msg(0, 1, StepTag::Data, 16)]).unwrap();
        assert_eq!(net.metrics().bits_data, 16);
        assert_eq!(net.metrics().bits_total, 16);
        assert_eq!(inboxes.from(NodeId(1), NodeId(0)).unwrap().bits.len(), 16);
    }

    #[test]
    fn counters_by_tag_sum_to_total() {
        let mut net = Network::new(4, false);
        net.step(vec![msg(0, 1, StepTag::Data, 5), msg(0, 2, StepTag::Data, 5)]).unwrap();
        net.step(vec![msg(1, 2, StepTag::HashExchange, 8)]).unwrap();
        net.step(vec![msg(3, 2, StepTag::NotificationBA, 1)]).unwrap();
        net.step(vec![msg(3, 0, StepTag::ExtendedBA, 40)]).unwrap();
        let m = net.metrics();
        assert_eq!((m.bits_data, m.bits_hash, m.bits_notification_measured, m.bits_extended_measured), (10, 8, 1, 40));
        assert_eq!(m.measured_sum(), m.bits_total);
        assert_eq!(m.messages_delivered, 5);
    }

    #[test]
    fn rejects_bad_messages() {
        let mut net = Network::new(4, false);
        net.isolate(NodeId(2));
        assert!(matches!(
            net.step(vec![msg(0, 2, StepTag::Data, 1)]),
            Err(SimError::IsolatedEndpoint { .. })
        ));
        assert!(matches!(net.step(vec![msg(1, 1, StepTag::Data, 1)]), Err(SimError::SelfMessage(_))));
        assert!(matches!(net.step(vec![msg(1, 9, StepTag::Data, 1)]), Err(SimError::UnknownNode(_))));
        assert!(matches!(net.step(vec![msg(1, 3, StepTag::Data, 0)]), Err(SimError::EmptyMessage { .. })));
        assert!(matches!(
            net.step(vec![msg(1, 3, StepTag::Data, 1), msg(1, 0, StepTag::HashExchange, 1)]),
            Err(SimError::MixedStepTags { .. })
        ));
        assert_eq!(net.metrics().bits_total, 0);
    }

    #[test]
    fn rushing_view_shows_only_faulty_recipients() {
        let out = vec![msg(1, 2, StepTag::HashExchange, 4), msg(1, 3, StepTag::HashExchange, 4)];
        let faulty: BTreeSet<NodeId> = [NodeId(3)].into();
        let seen: Vec<_> = rushing_view(&out, &faulty).collect();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].recipient, NodeId(3));
    }
}
