//! Byzantine strategies for the nodes an adversary controls.
//!
//! A strategy assigns a [`Role`] to each controlled node. The protocol
//! consults it at every point where a controlled node acts: forwarding a
//! payload, sending a keyed digest, raising its flag, relaying inside a
//! reliable broadcast and publishing its transcript. Fault-free nodes never
//! call into the strategy. The strategy only ever sees what its own nodes
//! receive plus the honest digests addressed to them in the current round.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, Bits};
use crate::broadcast::{RelayContext, RelayPolicy};
use crate::diagnosis::{DiagnosisGraph, Transcript};
use crate::field::{FieldElement, KeyedDigest, Payload};
use crate::node::NodeId;
use crate::rng::{self, LABEL_ADVERSARY};
use crate::simnet::RoundMessage;

/// Names accepted by [`AdversaryStrategy::from_name`].
pub const CATALOGUE: [&str; 8] = [
    "honest",
    "equivocating_source",
    "digest_liar",
    "false_flagger",
    "tree_corruptor",
    "transcript_liar",
    "colluders",
    "fuzz",
];

pub const DEFAULT_FUZZ_DEVIATION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Role {
    /// Follows the protocol.
    Honest,
    /// Source that splits its children into two groups and sends each a different payload.
    EquivocatingSource,
    /// Source that sends a different payload only to its highest-numbered
    /// uncontrolled child, collecting one accusation per generation.
    TargetedSource,
    /// Sends a corrupted digest to one trusting neighbor per generation and denies it.
    DigestLiar,
    /// Always reports an inconsistency.
    FalseFlagger,
    /// Corrupts payloads it forwards on the spanning tree once one exists.
    TreeCorruptor,
    /// Corrupts a digest, then claims in its transcript that the victim sent it a bad one.
    TranscriptLiar,
    /// Deviates at random with the given probability at every decision point.
    Fuzz { deviation: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversaryError {
    #[error("adversary controls {count} nodes but t={t}")]
    TooManyControlled { count: usize, t: usize },
    #[error("node {node} does not exist in a network of {n}")]
    UnknownNode { node: NodeId, n: usize },
    #[error("strategy {0} must control the source")]
    SourceRequired(String),
    #[error("strategy {name} needs n >= {required}, got {n}")]
    TooFewNodes { name: String, required: usize, n: usize },
    #[error("strategy {name} needs at least {required} controlled nodes")]
    TooFewControlled { name: String, required: usize },
    #[error("fuzz deviation must lie in [0, 1], got {0}")]
    InvalidDeviation(f64),
    #[error("unknown adversary strategy {0:?}")]
    UnknownStrategy(String),
}

/// What the adversary learns at the start of a generation.
#[derive(Clone, Copy, Debug)]
pub struct GenerationView<'a> {
    pub generation: u64,
    pub graph: &'a DiagnosisGraph,
    /// Payload dissemination edges `(sender, receiver)` for this generation.
    pub dissemination: &'a [(NodeId, NodeId)],
    pub k: u32,
}

#[derive(Clone, Debug)]
pub struct AdversaryStrategy {
    name: String,
    roles: BTreeMap<NodeId, Role>,
    rng: ChaCha8Rng,
    k: u32,
    f_edges_exist: bool,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    victims: BTreeMap<NodeId, NodeId>,
    /// Children of the source that receive the true payload.
    first_group: BTreeSet<NodeId>,
    delta: Option<Bits>,
}

impl AdversaryStrategy {
    fn build(
        name: &str,
        roles: BTreeMap<NodeId, Role>,
        n: usize,
        t: usize,
    ) -> Result<Self, AdversaryError> {
        if roles.len() > t {
            return Err(AdversaryError::TooManyControlled { count: roles.len(), t });
        }
        if let Some(&node) = roles.keys().find(|v| v.index() >= n) {
            return Err(AdversaryError::UnknownNode { node, n });
        }
        Ok(AdversaryStrategy {
            name: name.to_string(),
            roles,
            rng: ChaCha8Rng::seed_from_u64(0),
            k: 1,
            f_edges_exist: false,
            children: BTreeMap::new(),
            victims: BTreeMap::new(),
            first_group: BTreeSet::new(),
            delta: None,
        })
    }

    fn uniform(name: &str, role: Role, controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::build(name, controlled.iter().map(|&v| (v, role)).collect(), n, t)
    }

    /// No faulty nodes at all.
    pub fn none() -> Self {
        Self::build("honest", BTreeMap::new(), usize::MAX, 0).expect("empty strategy")
    }

    pub fn make_honest(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::uniform("honest", Role::Honest, controlled, n, t)
    }

    /// The source equivocates; any other controlled node stays honest.
    pub fn make_equivocating_source(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        if !controlled.contains(&NodeId::SOURCE) {
            return Err(AdversaryError::SourceRequired("equivocating_source".into()));
        }
        let roles = controlled
            .iter()
            .map(|&v| (v, if v.is_source() { Role::EquivocatingSource } else { Role::Honest }))
            .collect();
        Self::build("equivocating_source", roles, n, t)
    }

    pub fn make_digest_liar(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::uniform("digest_liar", Role::DigestLiar, controlled, n, t)
    }

    pub fn make_false_flagger(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::uniform("false_flagger", Role::FalseFlagger, controlled, n, t)
    }

    pub fn make_tree_corruptor(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::uniform("tree_corruptor", Role::TreeCorruptor, controlled, n, t)
    }

    pub fn make_transcript_liar(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::uniform("transcript_liar", Role::TranscriptLiar, controlled, n, t)
    }

    /// Coordinated mix for `n >= 7`. With the source controlled, the source
    /// equivocates against one child at a time and the others corrupt tree
    /// traffic; otherwise the lowest controlled node lies about digests and
    /// the rest lie in transcripts.
    pub fn make_colluders(controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        let name = "colluders";
        if n < 7 {
            return Err(AdversaryError::TooFewNodes { name: name.into(), required: 7, n });
        }
        let sorted: BTreeSet<NodeId> = controlled.iter().copied().collect();
        if sorted.len() < 2 {
            return Err(AdversaryError::TooFewControlled { name: name.into(), required: 2 });
        }
        let with_source = sorted.contains(&NodeId::SOURCE);
        let roles = sorted
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let role = match (with_source, i) {
                    (true, 0) => Role::TargetedSource,
                    (true, _) => Role::TreeCorruptor,
                    (false, 0) => Role::DigestLiar,
                    (false, _) => Role::TranscriptLiar,
                };
                (v, role)
            })
            .collect();
        Self::build(name, roles, n, t)
    }

    pub fn make_fuzz(controlled: &[NodeId], deviation: f64, n: usize, t: usize) -> Result<Self, AdversaryError> {
        if !(0.0..=1.0).contains(&deviation) {
            return Err(AdversaryError::InvalidDeviation(deviation));
        }
        Self::uniform("fuzz", Role::Fuzz { deviation }, controlled, n, t)
    }

    /// Arbitrary per-node roles.
    pub fn with_roles(name: &str, roles: BTreeMap<NodeId, Role>, n: usize, t: usize) -> Result<Self, AdversaryError> {
        Self::build(name, roles, n, t)
    }

    pub fn from_name(name: &str, controlled: &[NodeId], n: usize, t: usize) -> Result<Self, AdversaryError> {
        match name {
            "honest" => Self::make_honest(controlled, n, t),
            "equivocating_source" => Self::make_equivocating_source(controlled, n, t),
            "digest_liar" => Self::make_digest_liar(controlled, n, t),
            "false_flagger" => Self::make_false_flagger(controlled, n, t),
            "tree_corruptor" => Self::make_tree_corruptor(controlled, n, t),
            "transcript_liar" => Self::make_transcript_liar(controlled, n, t),
            "colluders" => Self::make_colluders(controlled, n, t),
            "fuzz" => Self::make_fuzz(controlled, DEFAULT_FUZZ_DEVIATION, n, t),
            other => Err(AdversaryError::UnknownStrategy(other.to_string())),
        }
    }

    /// Controlled set used when none is given explicitly.
    pub fn default_controlled(name: &str, t: usize) -> Vec<NodeId> {
        match name {
            "honest" => Vec::new(),
            "equivocating_source" => vec![NodeId::SOURCE],
            "colluders" | "fuzz" => (1..=t).map(NodeId::from).collect(),
            _ => vec![NodeId(1)],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn controlled(&self) -> BTreeSet<NodeId> {
        self.roles.keys().copied().collect()
    }

    pub fn roles(&self) -> &BTreeMap<NodeId, Role> {
        &self.roles
    }

    pub fn role(&self, node: NodeId) -> Option<Role> {
        self.roles.get(&node).copied()
    }

    /// Reseeds the strategy for a new session and clears per-generation state.
    pub fn reset(&mut self, session_seed: u64) {
        self.rng = rng::substream(session_seed, LABEL_ADVERSARY, 0);
        self.f_edges_exist = false;
        self.children.clear();
        self.victims.clear();
        self.first_group.clear();
        self.delta = None;
    }

    fn nonzero_bits(&mut self, len: usize) -> Bits {
        loop {
            let b = bits::random_bits(len, &mut self.rng);
            if b.any() {
                return b;
            }
        }
    }

    fn nonzero_element(&mut self) -> FieldElement {
        let k = self.k;
        loop {
            let e = FieldElement::random(k, &mut self.rng).expect("valid width");
            if !e.is_zero() {
                return e;
            }
        }
    }

    fn deviates(&mut self, node: NodeId) -> bool {
        match self.role(node) {
            Some(Role::Fuzz { deviation }) => self.rng.gen_bool(deviation),
            _ => false,
        }
    }

    fn random_or_missing(&mut self, len: usize) -> Option<Bits> {
        if self.rng.gen_bool(0.1) {
            None
        } else {
            Some(bits::random_bits(len, &mut self.rng))
        }
    }

    fn corrupt(&mut self, kd: KeyedDigest) -> KeyedDigest {
        KeyedDigest {
            key: kd.key,
            digest: kd.digest ^ self.nonzero_element(),
        }
    }

    fn lies_on_digests(&self, node: NodeId) -> bool {
        match self.role(node) {
            Some(Role::DigestLiar | Role::TranscriptLiar) => true,
            Some(Role::TreeCorruptor) => self.f_edges_exist && self.children.get(&node).map_or(true, Vec::is_empty),
            _ => false,
        }
    }

    /// Called once per generation before any payload is sent.
    pub fn on_generation(&mut self, view: &GenerationView<'_>) {
        self.k = view.k;
        self.f_edges_exist = view.graph.has_f_edges();
        self.children.clear();
        for &(p, c) in view.dissemination {
            self.children.entry(p).or_default().push(c);
        }
        for list in self.children.values_mut() {
            list.sort();
        }
        self.victims.clear();
        let controlled = self.controlled();
        for &v in &controlled {
            if let Some(&victim) = view.graph.g_neighbors(v).iter().find(|u| !controlled.contains(u)) {
                self.victims.insert(v, victim);
            }
        }
        self.first_group.clear();
        self.delta = None;
        let kids = self.children.get(&NodeId::SOURCE).cloned().unwrap_or_default();
        match self.role(NodeId::SOURCE) {
            Some(Role::EquivocatingSource) => {
                self.first_group = kids.iter().take(kids.len().div_ceil(2)).copied().collect();
            }
            Some(Role::TargetedSource) => {
                let target = kids.iter().rev().find(|c| !controlled.contains(c));
                self.first_group = kids.iter().filter(|&c| Some(c) != target).copied().collect();
            }
            _ => {}
        }
    }

    fn equivocation_payload(&mut self, recipient: NodeId, x: &Payload) -> Payload {
        if self.first_group.contains(&recipient) || !self.children.get(&NodeId::SOURCE).is_some_and(|c| c.contains(&recipient)) {
            return x.clone();
        }
        let len = x.len();
        if self.delta.as_ref().map_or(true, |d| d.len() != len) {
            self.delta = Some(self.nonzero_bits(len));
        }
        let delta = Payload::new(self.delta.clone().expect("delta drawn"));
        x ^ &delta
    }

    /// Payload a controlled node sends to `recipient` during dissemination.
    /// `held` is the payload the node actually holds.
    pub fn data(&mut self, sender: NodeId, recipient: NodeId, held: &Payload) -> Option<Bits> {
        match self.role(sender) {
            Some(Role::EquivocatingSource | Role::TargetedSource) => Some(self.equivocation_payload(recipient, held).into_bits()),
            Some(Role::TreeCorruptor) if self.f_edges_exist => {
                let delta = Payload::new(self.nonzero_bits(held.len()));
                Some((held ^ &delta).into_bits())
            }
            Some(Role::Fuzz { .. }) if self.deviates(sender) => self.random_or_missing(held.len()),
            _ => Some(held.bits().clone()),
        }
    }

    /// Digest a controlled node sends to `recipient`. `honest` is the digest
    /// of the node's held payload under the key it drew; `rushing` holds the
    /// honest digests of this round addressed to controlled nodes.
    pub fn digest(
        &mut self,
        sender: NodeId,
        recipient: NodeId,
        held: &Payload,
        honest: KeyedDigest,
        _rushing: &[RoundMessage],
    ) -> Option<Bits> {
        let kd = match self.role(sender) {
            Some(Role::EquivocatingSource | Role::TargetedSource) => {
                let sent = self.equivocation_payload(recipient, held);
                KeyedDigest::compute(&sent, honest.key).expect("aligned payload")
            }
            Some(_) if self.lies_on_digests(sender) && self.victims.get(&sender) == Some(&recipient) => {
                self.corrupt(honest)
            }
            Some(Role::Fuzz { .. }) if self.deviates(sender) => {
                return self.random_or_missing(KeyedDigest::wire_bits(self.k));
            }
            _ => honest,
        };
        Some(kd.encode())
    }

    /// Flag a controlled node reports; `honest` is what checking its received
    /// digests against its held payload yields.
    pub fn flag(&mut self, node: NodeId, honest: bool) -> bool {
        match self.role(node) {
            Some(Role::EquivocatingSource | Role::TargetedSource) => false,
            Some(Role::FalseFlagger) => true,
            Some(Role::TranscriptLiar) if self.victims.contains_key(&node) => true,
            Some(Role::Fuzz { .. }) if self.deviates(node) => self.rng.gen(),
            _ => honest,
        }
    }

    /// Transcript a controlled node publishes. `actual` records what it
    /// really held, sent and received, and the flag it reported.
    pub fn transcript(&mut self, actual: Transcript) -> Transcript {
        let node = actual.node_id;
        let mut tr = actual;
        match self.role(node) {
            Some(Role::EquivocatingSource | Role::TargetedSource) => {
                let x = tr.claimed_payload.clone();
                for kd in tr.claimed_sent_digests.values_mut().chain(tr.claimed_received_digests.values_mut()) {
                    *kd = KeyedDigest::compute(&x, kd.key).expect("aligned payload");
                }
            }
            Some(role) if self.lies_on_digests(node) => {
                if let Some(&victim) = self.victims.get(&node) {
                    if let Some(kd) = tr.claimed_sent_digests.get_mut(&victim) {
                        *kd = KeyedDigest::compute(&tr.claimed_payload, kd.key).expect("aligned payload");
                    }
                    if role == Role::TranscriptLiar {
                        if let Some(kd) = tr.claimed_received_digests.get(&victim).copied() {
                            let bad = self.corrupt(kd);
                            tr.claimed_received_digests.insert(victim, bad);
                        }
                    }
                }
            }
            Some(Role::Fuzz { .. }) if self.deviates(node) => self.mutate_transcript(&mut tr),
            _ => {}
        }
        tr
    }

    fn mutate_transcript(&mut self, tr: &mut Transcript) {
        let k = self.k;
        match self.rng.gen_range(0..4) {
            0 if !tr.claimed_payload.is_empty() => {
                let mut b = tr.claimed_payload.bits().clone();
                let i = self.rng.gen_range(0..b.len());
                let flipped = !b[i];
                b.set(i, flipped);
                tr.claimed_payload = Payload::new(b);
            }
            1 if !tr.claimed_sent_digests.is_empty() => {
                let i = self.rng.gen_range(0..tr.claimed_sent_digests.len());
                let key = *tr.claimed_sent_digests.keys().nth(i).expect("in range");
                let forged = KeyedDigest {
                    key: FieldElement::random(k, &mut self.rng).expect("valid width"),
                    digest: FieldElement::random(k, &mut self.rng).expect("valid width"),
                };
                tr.claimed_sent_digests.insert(key, forged);
            }
            2 if !tr.claimed_received_digests.is_empty() => {
                let i = self.rng.gen_range(0..tr.claimed_received_digests.len());
                let key = *tr.claimed_received_digests.keys().nth(i).expect("in range");
                let kd = tr.claimed_received_digests[&key];
                let bad = self.corrupt(kd);
                tr.claimed_received_digests.insert(key, bad);
            }
            _ => {
                let len = tr.claimed_payload.len();
                tr.claimed_payload = Payload::random(len, &mut self.rng);
            }
        }
    }
}

impl RelayPolicy for AdversaryStrategy {
    fn is_faulty(&self, node: NodeId) -> bool {
        self.roles.contains_key(&node)
    }

    fn relay(&mut self, ctx: &RelayContext<'_>, honest: &Bits) -> Option<Bits> {
        if self.deviates(ctx.sender) {
            self.random_or_missing(honest.len())
        } else {
            Some(honest.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnosis::dissemination_edges;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn constructors_validate() {
        assert!(matches!(
            AdversaryStrategy::make_digest_liar(&ids(&[1, 2]), 4, 1),
            Err(AdversaryError::TooManyControlled { count: 2, t: 1 })
        ));
        assert!(matches!(
            AdversaryStrategy::make_digest_liar(&ids(&[9]), 4, 1),
            Err(AdversaryError::UnknownNode { .. })
        ));
        assert!(matches!(
            AdversaryStrategy::make_equivocating_source(&ids(&[1]), 4, 1),
            Err(AdversaryError::SourceRequired(_))
        ));
        assert!(matches!(
            AdversaryStrategy::make_colluders(&ids(&[1, 2]), 4, 1),
            Err(AdversaryError::TooFewNodes { .. })
        ));
        assert!(matches!(
            AdversaryStrategy::make_fuzz(&ids(&[1]), 1.5, 4, 1),
            Err(AdversaryError::InvalidDeviation(_))
        ));
        assert!(matches!(
            AdversaryStrategy::from_name("nope", &[], 4, 1),
            Err(AdversaryError::UnknownStrategy(_))
        ));
        for name in CATALOGUE {
            let n = 7;
            let controlled = AdversaryStrategy::default_controlled(name, 2);
            let s = AdversaryStrategy::from_name(name, &controlled, n, 2).unwrap();
            assert_eq!(s.name(), name);
        }
    }

    #[test]
    fn colluder_roles() {
        let s = AdversaryStrategy::make_colluders(&ids(&[0, 3]), 7, 2).unwrap();
        assert_eq!(s.role(NodeId(0)), Some(Role::TargetedSource));
        assert_eq!(s.role(NodeId(3)), Some(Role::TreeCorruptor));
        let s = AdversaryStrategy::make_colluders(&ids(&[2, 5]), 7, 2).unwrap();
        assert_eq!(s.role(NodeId(2)), Some(Role::DigestLiar));
        assert_eq!(s.role(NodeId(5)), Some(Role::TranscriptLiar));
    }

    #[test]
    fn equivocation_splits_children() {
        let mut s = AdversaryStrategy::make_equivocating_source(&ids(&[0]), 4, 1).unwrap();
        s.reset(7);
        let g = DiagnosisGraph::new(4, 1);
        let edges = dissemination_edges(&g).unwrap();
        s.on_generation(&GenerationView {
            generation: 0,
            graph: &g,
            dissemination: &edges,
            k: 4,
        });
        let x = Payload::from_blocks(&[1, 2], 4).unwrap();
        let to1 = s.data(NodeId(0), NodeId(1), &x).unwrap();
        let to2 = s.data(NodeId(0), NodeId(2), &x).unwrap();
        let to3 = s.data(NodeId(0), NodeId(3), &x).unwrap();
        assert_eq!(&to1, x.bits());
        assert_eq!(&to2, x.bits());
        assert_ne!(&to3, x.bits());
        assert!(!s.flag(NodeId(0), true));
    }

    #[test]
    fn reset_makes_choices_reproducible() {
        let mut a = AdversaryStrategy::make_fuzz(&ids(&[1]), 1.0, 4, 1).unwrap();
        let mut b = a.clone();
        a.reset(42);
        b.reset(42);
        let p = Payload::zeros(8);
        for r in 0..5 {
            assert_eq!(a.data(NodeId(1), NodeId(r % 3 + 2), &p), b.data(NodeId(1), NodeId(r % 3 + 2), &p));
        }
    }
}
