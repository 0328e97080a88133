//! Reliable broadcast of short bit strings by recursive oral messages, OM(t).
//!
//! The commander sends its value to every other participant; then for `t`
//! further rounds every lieutenant relays each value it received along a
//! relay path `σ` (commander first, no repeats) to every participant not yet
//! on `σ`. Messages carry no path label: within a round, the messages from
//! `i` to `j` arrive in the canonical order of the paths `i` is expected to
//! relay, so each slot is known to the recipient in advance. A missing or
//! malformed value is replaced by an all-zero string of the instance length.
//!
//! Resolution at lieutenant `j` is the usual recursive majority:
//! `resolve(σ) = majority(value(σ), resolve(σ·m) for each m ∉ σ, m ≠ j)`
//! and `resolve(σ) = value(σ)` at depth `t + 1`. No strict majority
//! resolves to all zeros.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, Bits};
use crate::node::NodeId;
use crate::simnet::{Network, RoundMessage, SimError, StepTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BroadcastPurpose {
    /// One-bit consistency flag of a node.
    Notification,
    /// A node's dispute transcript.
    Transcript,
}

impl BroadcastPurpose {
    pub fn step_tag(self) -> StepTag {
        match self {
            BroadcastPurpose::Notification => StepTag::NotificationBA,
            BroadcastPurpose::Transcript => StepTag::ExtendedBA,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub generation: u64,
    pub purpose: BroadcastPurpose,
    pub source: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BroadcastInstance {
    pub id: InstanceId,
    pub source_id: NodeId,
    pub payload_bits: Bits,
    /// Number of rounds, `t + 1`.
    pub round_budget: usize,
}

impl BroadcastInstance {
    pub fn new(id: InstanceId, payload_bits: Bits, t: usize) -> Self {
        BroadcastInstance {
            source_id: id.source,
            id,
            payload_bits,
            round_budget: t + 1,
        }
    }

    pub fn t(&self) -> usize {
        self.round_budget - 1
    }
}

/// Where a faulty participant is about to send a value.
#[derive(Clone, Copy, Debug)]
pub struct RelayContext<'a> {
    pub instance: &'a InstanceId,
    pub sender: NodeId,
    pub recipient: NodeId,
    /// Relay path of the value being forwarded; empty when the commander sends its own value.
    pub path: &'a [NodeId],
}

/// Decides what faulty participants send. Honest participants always follow the protocol.
pub trait RelayPolicy {
    fn is_faulty(&self, node: NodeId) -> bool;

    /// The value faulty `ctx.sender` sends instead of `honest`. `None` sends nothing.
    fn relay(&mut self, ctx: &RelayContext<'_>, honest: &Bits) -> Option<Bits>;
}

/// Every participant is honest.
pub struct AllHonest;

impl RelayPolicy for AllHonest {
    fn is_faulty(&self, _: NodeId) -> bool {
        false
    }

    fn relay(&mut self, _: &RelayContext<'_>, honest: &Bits) -> Option<Bits> {
        Some(honest.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BroadcastError {
    #[error("broadcast needs more than 3t participants: {participants} with t={t}")]
    TooFewParticipants { participants: usize, t: usize },
    #[error("commander {0} is not a participant")]
    SourceNotParticipant(NodeId),
    #[error("cannot broadcast an empty value")]
    EmptyPayload,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// All relay paths of length `len` that start at `source`, use distinct
/// participants, and avoid `exclude`, in lexicographic order.
fn relay_paths(source: NodeId, participants: &[NodeId], len: usize, exclude: &[NodeId]) -> Vec<Vec<NodeId>> {
    fn extend(
        path: &mut Vec<NodeId>,
        participants: &[NodeId],
        len: usize,
        exclude: &[NodeId],
        out: &mut Vec<Vec<NodeId>>,
    ) {
        if path.len() == len {
            out.push(path.clone());
            return;
        }
        for &p in participants {
            if !path.contains(&p) && !exclude.contains(&p) {
                path.push(p);
                extend(path, participants, len, exclude, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if exclude.contains(&source) {
        return out;
    }
    extend(&mut vec![source], participants, len, exclude, &mut out);
    out
}

fn majority(values: &[Bits], len: usize) -> Bits {
    for (i, candidate) in values.iter().enumerate() {
        // only count from the first occurrence
        if values[..i].contains(candidate) {
            continue;
        }
        let count = values.iter().filter(|v| *v == candidate).count();
        if 2 * count > values.len() {
            return candidate.clone();
        }
    }
    bits::zeros(len)
}

fn resolve(
    store: &HashMap<Vec<NodeId>, Bits>,
    path: &mut Vec<NodeId>,
    participants: &[NodeId],
    depth: usize,
    me: NodeId,
    len: usize,
) -> Bits {
    let direct = store.get(path.as_slice()).cloned().unwrap_or_else(|| bits::zeros(len));
    if path.len() == depth {
        return direct;
    }
    let mut values = vec![direct];
    for &m in participants {
        if m != me && !path.contains(&m) {
            path.push(m);
            values.push(resolve(store, path, participants, depth, me, len));
            path.pop();
        }
    }
    majority(&values, len)
}

/// Runs one OM(t) instance over `participants` and returns every
/// participant's output. Bits are charged to the purpose's step tag.
pub fn om_broadcast(
    net: &mut Network,
    instance: &BroadcastInstance,
    participants: &BTreeSet<NodeId>,
    policy: &mut dyn RelayPolicy,
) -> Result<BTreeMap<NodeId, Bits>, BroadcastError> {
    let t = instance.t();
    let source = instance.source_id;
    let len = instance.payload_bits.len();
    if len == 0 {
        return Err(BroadcastError::EmptyPayload);
    }
    if !participants.contains(&source) {
        return Err(BroadcastError::SourceNotParticipant(source));
    }
    if participants.len() <= 3 * t {
        return Err(BroadcastError::TooFewParticipants {
            participants: participants.len(),
            t,
        });
    }
    let tag = instance.id.purpose.step_tag();
    let members: Vec<NodeId> = participants.iter().copied().collect();
    let mut stores: BTreeMap<NodeId, HashMap<Vec<NodeId>, Bits>> =
        members.iter().map(|&p| (p, HashMap::new())).collect();

    let send = |policy: &mut dyn RelayPolicy, sender: NodeId, recipient: NodeId, path: &[NodeId], value: &Bits| {
        let bits = if policy.is_faulty(sender) {
            let ctx = RelayContext {
                instance: &instance.id,
                sender,
                recipient,
                path,
            };
            bits::fit_to_length(policy.relay(&ctx, value), len)
        } else {
            value.clone()
        };
        RoundMessage {
            sender,
            recipient,
            step_tag: tag,
            bits,
        }
    };

    // Round 0: the commander sends its own value.
    let mut outbox = Vec::new();
    for &r in members.iter().filter(|&&p| p != source) {
        outbox.push(send(policy, source, r, &[], &instance.payload_bits));
    }
    let inboxes = net.step(outbox)?;
    for (recipient, msgs) in inboxes.into_map() {
        for m in msgs {
            stores.get_mut(&recipient).expect("participant").insert(vec![source], m.bits);
        }
    }

    // Rounds 1..=t: relay every value received in the previous round.
    for round in 1..=t {
        let mut outbox = Vec::new();
        let mut honest_first = members.clone();
        honest_first.sort_by_key(|&p| (policy.is_faulty(p), p));
        for &i in honest_first.iter().filter(|&&p| p != source) {
            for &j in members.iter().filter(|&&p| p != i) {
                for path in relay_paths(source, &members, round, &[i, j]) {
                    let value = stores[&i].get(&path).cloned().unwrap_or_else(|| bits::zeros(len));
                    outbox.push(send(policy, i, j, &path, &value));
                }
            }
        }
        let inboxes = net.step(outbox)?;
        for (j, msgs) in inboxes.into_map() {
            let mut by_sender: BTreeMap<NodeId, Vec<Bits>> = BTreeMap::new();
            for m in msgs {
                by_sender.entry(m.sender).or_default().push(m.bits);
            }
            for (i, values) in by_sender {
                let slots = relay_paths(source, &members, round, &[i, j]);
                let store = stores.get_mut(&j).expect("participant");
                for (mut path, value) in slots.into_iter().zip(values) {
                    path.push(i);
                    store.insert(path, value);
                }
            }
        }
    }

    let mut outputs = BTreeMap::new();
    for &p in &members {
        let out = if p == source {
            instance.payload_bits.clone()
        } else {
            resolve(&stores[&p], &mut vec![source], &members, t + 1, p, len)
        };
        outputs.insert(p, out);
    }
    Ok(outputs)
}

/// Model cost `c·n²·payload_bits` of broadcasting `payload_bits` bits,
/// rounded up to whole bits.
pub fn ideal_broadcast_cost(n: usize, payload_bits: u64, c: Ratio<u64>) -> u64 {
    let scaled = c * Ratio::from_integer((n * n) as u64 * payload_bits);
    scaled.ceil().to_integer()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::from_str;

    fn id(source: u32) -> InstanceId {
        InstanceId {
            generation: 0,
            purpose: BroadcastPurpose::Notification,
            source: NodeId(source),
        }
    }

    fn nodes(n: u32) -> BTreeSet<NodeId> {
        (0..n).map(NodeId).collect()
    }

    /// Faulty nodes pick each outgoing value from a fixed table keyed by
    /// `(sender, recipient, path)`, defaulting to the honest value.
    struct Scripted {
        faulty: BTreeSet<NodeId>,
        script: HashMap<(NodeId, NodeId, Vec<NodeId>), Option<Bits>>,
    }

    impl RelayPolicy for Scripted {
        fn is_faulty(&self, node: NodeId) -> bool {
            self.faulty.contains(&node)
        }
        fn relay(&mut self, ctx: &RelayContext<'_>, honest: &Bits) -> Option<Bits> {
            self.script
                .get(&(ctx.sender, ctx.recipient, ctx.path.to_vec()))
                .cloned()
                .unwrap_or_else(|| Some(honest.clone()))
        }
    }

    #[test]
    fn relay_path_enumeration() {
        let members: Vec<NodeId> = (0..4).map(NodeId).collect();
        assert_eq!(relay_paths(NodeId(0), &members, 1, &[NodeId(1)]), vec![vec![NodeId(0)]]);
        let p2 = relay_paths(NodeId(0), &members, 2, &[NodeId(3)]);
        assert_eq!(p2, vec![vec![NodeId(0), NodeId(1)], vec![NodeId(0), NodeId(2)]]);
    }

    #[test]
    fn validity_without_faults() {
        let mut net = Network::new(4, false);
        let inst = BroadcastInstance::new(id(0), from_str("1").unwrap(), 1);
        let out = om_broadcast(&mut net, &inst, &nodes(4), &mut AllHonest).unwrap();
        assert!(out.values().all(|v| *v == from_str("1").unwrap()));
        // 3 direct + 3·2 relays
        assert_eq!(net.metrics().bits_notification_measured, 9);
    }

    #[test]
    fn om_message_count_n7_t2() {
        let mut net = Network::new(7, false);
        let inst = BroadcastInstance::new(id(3), from_str("101").unwrap(), 2);
        om_broadcast(&mut net, &inst, &nodes(7), &mut AllHonest).unwrap();
        assert_eq!(net.metrics().messages_delivered, 6 + 6 * 5 + 6 * 5 * 4);
        assert_eq!(net.metrics().bits_notification_measured, 3 * 156);
    }

    #[test]
    fn faulty_source_split_001_resolves_to_zero() {
        let mut script = HashMap::new();
        for (r, v) in [(1, "0"), (2, "0"), (3, "1")] {
            script.insert((NodeId(0), NodeId(r), vec![]), Some(from_str(v).unwrap()));
        }
        let mut policy = Scripted {
            faulty: [NodeId(0)].into(),
            script,
        };
        let mut net = Network::new(4, false);
        let inst = BroadcastInstance::new(id(0), from_str("1").unwrap(), 1);
        let out = om_broadcast(&mut net, &inst, &nodes(4), &mut policy).unwrap();
        for p in 1..4 {
            assert_eq!(out[&NodeId(p)], from_str("0").unwrap());
        }
    }

    /// All 8 send patterns of a faulty commander at n=4, t=1: the honest
    /// peers always agree, on the majority of what was sent.
    #[test]
    fn faulty_source_all_patterns_agree() {
        for pattern in 0..8u32 {
            let mut script = HashMap::new();
            for r in 1..4u32 {
                let bit = if (pattern >> (r - 1)) & 1 == 1 { "1" } else { "0" };
                script.insert((NodeId(0), NodeId(r), vec![]), Some(from_str(bit).unwrap()));
            }
            let mut policy = Scripted {
                faulty: [NodeId(0)].into(),
                script,
            };
            let mut net = Network::new(4, false);
            let inst = BroadcastInstance::new(id(0), from_str("0").unwrap(), 1);
            let out = om_broadcast(&mut net, &inst, &nodes(4), &mut policy).unwrap();
            let expect = if pattern.count_ones() >= 2 { "1" } else { "0" };
            for p in 1..4 {
                assert_eq!(out[&NodeId(p)], from_str(expect).unwrap(), "pattern {pattern:03b}");
            }
        }
    }

    /// Exhaustive over a faulty relay's choices at n=4, t=1 with a 1-bit
    /// value: each of its 2 outgoing relays is 0, 1 or missing.
    #[test]
    fn faulty_relay_exhaustive_validity() {
        for faulty in 1..4u32 {
            for payload in ["0", "1"] {
                for choice in 0..9u32 {
                    let targets: Vec<u32> = (1..4).filter(|&p| p != faulty).collect();
                    let mut script = HashMap::new();
                    for (slot, &r) in targets.iter().enumerate() {
                        let c = (choice / 3u32.pow(slot as u32)) % 3;
                        let v = match c {
                            0 => Some(from_str("0").unwrap()),
                            1 => Some(from_str("1").unwrap()),
                            _ => None,
                        };
                        script.insert((NodeId(faulty), NodeId(r), vec![NodeId(0)]), v);
                    }
                    let mut policy = Scripted {
                        faulty: [NodeId(faulty)].into(),
                        script,
                    };
                    let mut net = Network::new(4, false);
                    let inst = BroadcastInstance::new(id(0), from_str(payload).unwrap(), 1);
                    let out = om_broadcast(&mut net, &inst, &nodes(4), &mut policy).unwrap();
                    for p in (0..4).filter(|&p| p != faulty) {
                        assert_eq!(out[&NodeId(p)], from_str(payload).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn precondition_errors() {
        let mut net = Network::new(7, false);
        let inst = BroadcastInstance::new(id(0), from_str("1").unwrap(), 2);
        assert_eq!(
            om_broadcast(&mut net, &inst, &nodes(6), &mut AllHonest),
            Err(BroadcastError::TooFewParticipants { participants: 6, t: 2 })
        );
        let inst = BroadcastInstance::new(id(6), from_str("1").unwrap(), 1);
        assert_eq!(
            om_broadcast(&mut net, &inst, &nodes(4), &mut AllHonest),
            Err(BroadcastError::SourceNotParticipant(NodeId(6)))
        );
    }

    #[test]
    fn ideal_cost_examples() {
        let one = Ratio::from_integer(1);
        assert_eq!(ideal_broadcast_cost(4, 1, one), 16);
        assert_eq!(ideal_broadcast_cost(4, 16, one), 256);
        assert_eq!(ideal_broadcast_cost(7, 1, one), 49);
        assert_eq!(ideal_broadcast_cost(4, 1, Ratio::new(1, 3)), 6);
    }
}
