//! The generation state machine.
//!
//! Each generation agrees on `D` bits:
//!
//! 1. **Dissemination.** The source sends the payload to every active peer
//!    directly while the diagnosis graph has no `f`-edge, and along the
//!    `g`-edge spanning tree afterwards, one round per tree level.
//! 2. **Hash exchange.** Every active node draws a fresh key for each
//!    trusting neighbor and sends it `(K, H(m_i, K))`. Keys are drawn only
//!    after every payload of the generation has been delivered.
//! 3. **Notification.** Every node flags a mismatch between a received
//!    digest and its own payload; the flags are agreed by reliable broadcast.
//!
//! If every agreed flag is clear, each peer decides the payload it holds.
//! Otherwise the extended step runs: every active node broadcasts its
//! transcript, the dispute rules update the diagnosis graph, and the peers
//! decide the payload the source's agreed transcript claims. When the source
//! is isolated the session ends and every remaining generation takes the
//! default value.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::{AdversaryStrategy, GenerationView};
use crate::bits::{self, Bits};
use crate::broadcast::{ideal_broadcast_cost, om_broadcast, BroadcastError, BroadcastInstance, BroadcastPurpose, InstanceId};
use crate::diagnosis::{
    analyze_dispute, build_spanning_tree, dissemination_edges, update_isolation, DiagnosisError, DiagnosisGraph,
    DisputeVerdict, Transcript,
};
use crate::field::{self, FieldElement, FieldError, KeyedDigest, Payload};
use crate::node::{all_nodes, NodeId};
use crate::rng::{self, LABEL_INPUT, LABEL_KEYS};
use crate::simnet::{
    complexity_report, rushing_view, ComplexityReport, GraphDelta, Network, RoundMessage, RoundTrace, RunMetrics,
    SimError, StepTag,
};

pub use crate::config::{ConfigError, ProtocolConfig};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Broadcast(#[from] BroadcastError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("input has {got} bits, expected l={expected}")]
    InputLength { got: usize, expected: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenerationOutcome {
    /// No flag was raised; each fault-free peer decided the payload it holds.
    Decided { decisions: BTreeMap<NodeId, Payload> },
    /// A flag was raised and the extended step ran. `decisions` is `None`
    /// when the step isolated the source.
    DisputeEscalated {
        verdict: DisputeVerdict,
        newly_isolated: BTreeSet<NodeId>,
        decisions: Option<BTreeMap<NodeId, Payload>>,
    },
    /// The source was already isolated; nothing was sent.
    SourceFaulty,
}

impl GenerationOutcome {
    pub fn decisions(&self) -> Option<&BTreeMap<NodeId, Payload>> {
        match self {
            GenerationOutcome::Decided { decisions } => Some(decisions),
            GenerationOutcome::DisputeEscalated { decisions, .. } => decisions.as_ref(),
            GenerationOutcome::SourceFaulty => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionOutcome {
    Completed,
    /// The source was isolated during `generation`; it and every later
    /// generation were decided as the default value.
    DefaultTerminated { generation: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionResult {
    pub outcome: SessionOutcome,
    /// The source's `l`-bit input.
    pub input: Bits,
    /// The `l`-bit output of every fault-free peer.
    pub outputs: BTreeMap<NodeId, Bits>,
    pub metrics: RunMetrics,
    /// Nodes the adversary controlled.
    pub faulty: BTreeSet<NodeId>,
    pub final_graph: DiagnosisGraph,
    /// All fault-free peers output the same string.
    pub agreement: bool,
    /// With a fault-free source, every fault-free peer output the input.
    pub validity: bool,
    pub trace: Option<Vec<RoundTrace>>,
}

impl SessionResult {
    pub fn correct(&self) -> bool {
        self.agreement && self.validity
    }

    /// Every isolated node and at least one endpoint of every `f`-edge is faulty.
    pub fn diagnosis_sound(&self) -> bool {
        self.final_graph.isolated().is_subset(&self.faulty)
            && self
                .final_graph
                .f_edges()
                .iter()
                .all(|(a, b)| self.faulty.contains(a) || self.faulty.contains(b))
    }

    pub fn complexity(&self, config: &ProtocolConfig) -> Result<ComplexityReport, ConfigError> {
        complexity_report(&self.metrics, config)
    }
}

/// One broadcast session: the diagnosis graph, the network and every
/// node's key stream persist across generations.
pub struct Session<'a> {
    config: ProtocolConfig,
    adversary: &'a mut AdversaryStrategy,
    faulty: BTreeSet<NodeId>,
    graph: DiagnosisGraph,
    net: Network,
    key_streams: Vec<ChaCha8Rng>,
    generation: u64,
}

impl<'a> Session<'a> {
    pub fn new(config: ProtocolConfig, adversary: &'a mut AdversaryStrategy, trace: bool) -> Result<Self, ProtocolError> {
        config.validate()?;
        adversary.reset(config.seed);
        let faulty = adversary.controlled();
        let key_streams = (0..config.n as u64)
            .map(|i| rng::substream(config.seed, LABEL_KEYS, i))
            .collect();
        Ok(Session {
            graph: DiagnosisGraph::new(config.n, config.t),
            net: Network::new(config.n, trace),
            faulty,
            key_streams,
            generation: 0,
            adversary,
            config,
        })
    }

    pub fn graph(&self) -> &DiagnosisGraph {
        &self.graph
    }

    pub fn metrics(&self) -> &RunMetrics {
        self.net.metrics()
    }

    fn is_faulty(&self, v: NodeId) -> bool {
        self.faulty.contains(&v)
    }

    fn fault_free_active(&self) -> Vec<NodeId> {
        self.graph
            .active_nodes()
            .into_iter()
            .filter(|v| !self.is_faulty(*v))
            .collect()
    }

    /// Fault budget for broadcasts among the active nodes: isolated nodes
    /// are faulty, so at most `t - |isolated|` active nodes are.
    fn broadcast_t(&self) -> usize {
        self.config.t.saturating_sub(self.graph.isolated().len())
    }

    /// Runs one OM instance per entry of `values` and returns, for each
    /// commander, what the lowest fault-free active node resolved.
    fn broadcast_all(
        &mut self,
        purpose: BroadcastPurpose,
        values: Vec<(NodeId, Bits)>,
    ) -> Result<BTreeMap<NodeId, Bits>, ProtocolError> {
        let active = self.graph.active_nodes();
        let observer = self.fault_free_active().into_iter().find(|v| !v.is_source());
        let t_eff = self.broadcast_t();
        let mut agreed = BTreeMap::new();
        for (v, bits) in values {
            let instance = BroadcastInstance::new(
                InstanceId {
                    generation: self.generation,
                    purpose,
                    source: v,
                },
                bits,
                t_eff,
            );
            let outputs = om_broadcast(&mut self.net, &instance, &active, &mut *self.adversary)?;
            let seen = match observer {
                Some(o) => outputs[&o].clone(),
                None => outputs[&v].clone(),
            };
            debug_assert!(
                self.fault_free_active().iter().all(|f| outputs[f] == seen),
                "reliable broadcast disagreement"
            );
            agreed.insert(v, seen);
        }
        Ok(agreed)
    }

    /// Runs one generation with `payload` as the source's data.
    pub fn run_generation(&mut self, payload: &Payload) -> Result<GenerationOutcome, ProtocolError> {
        let d = self.config.d_bits as usize;
        let k = self.config.k;
        let n = self.config.n;
        self.net.set_generation(self.generation);
        if !self.graph.is_active(NodeId::SOURCE) {
            return Ok(GenerationOutcome::SourceFaulty);
        }
        self.net.metrics_mut().generations_run += 1;

        // Phase A: dissemination.
        let dissemination = dissemination_edges(&self.graph)?;
        self.adversary.on_generation(&GenerationView {
            generation: self.generation,
            graph: &self.graph,
            dissemination: &dissemination,
            k,
        });
        let levels = if self.graph.has_f_edges() {
            build_spanning_tree(&self.graph)?.levels()
        } else {
            vec![dissemination]
        };
        let mut held: BTreeMap<NodeId, Payload> = [(NodeId::SOURCE, payload.clone())].into();
        for level in levels {
            let mut honest = Vec::new();
            let mut forged = Vec::new();
            for (p, c) in level {
                let m = &held[&p];
                if self.is_faulty(p) {
                    let bits = bits::fit_to_length(self.adversary.data(p, c, m), d);
                    forged.push(RoundMessage {
                        sender: p,
                        recipient: c,
                        step_tag: StepTag::Data,
                        bits,
                    });
                } else {
                    honest.push(RoundMessage {
                        sender: p,
                        recipient: c,
                        step_tag: StepTag::Data,
                        bits: m.bits().clone(),
                    });
                }
            }
            honest.extend(forged);
            for (c, msgs) in self.net.step(honest)?.into_map() {
                for m in msgs {
                    held.insert(c, Payload::new(m.bits));
                }
            }
        }
        let fault_free = self.fault_free_active();
        let misbehaving = fault_free
            .windows(2)
            .any(|w| held.get(&w[0]) != held.get(&w[1]));
        if misbehaving {
            self.net.metrics_mut().misbehaving_generations += 1;
        }

        // Phase B: keyed digests between trusting neighbors.
        let active = self.graph.active_nodes();
        let neighbors: BTreeMap<NodeId, Vec<NodeId>> =
            active.iter().map(|&v| (v, self.graph.g_neighbors(v))).collect();
        let mut honest = Vec::new();
        let mut planned = Vec::new();
        for &i in &active {
            for &j in &neighbors[&i] {
                let key = FieldElement::random(k, &mut self.key_streams[i.index()])?;
                let kd = KeyedDigest::compute(&held[&i], key)?;
                if self.is_faulty(i) {
                    planned.push((i, j, kd));
                } else {
                    honest.push(RoundMessage {
                        sender: i,
                        recipient: j,
                        step_tag: StepTag::HashExchange,
                        bits: kd.encode(),
                    });
                }
            }
        }
        let rushing: Vec<RoundMessage> = rushing_view(&honest, &self.faulty).cloned().collect();
        for (i, j, kd) in planned {
            let bits = self.adversary.digest(i, j, &held[&i], kd, &rushing);
            honest.push(RoundMessage {
                sender: i,
                recipient: j,
                step_tag: StepTag::HashExchange,
                bits: bits::fit_to_length(bits, KeyedDigest::wire_bits(k)),
            });
        }
        let mut sent: BTreeMap<(NodeId, NodeId), KeyedDigest> = BTreeMap::new();
        for m in &honest {
            sent.insert((m.sender, m.recipient), KeyedDigest::decode(&m.bits, 0, k)?);
        }
        let digest_count = honest.len() as u64;
        self.net.step(honest)?;
        {
            let metrics = self.net.metrics_mut();
            metrics.digest_messages += digest_count;
            metrics.bits_hash_model += digest_count * (u64::from(k) + self.config.blocks_per_generation());
        }

        // Phase C: flags and their agreement.
        let mut flags = Vec::new();
        for &i in &active {
            let honest_flag = neighbors[&i].iter().any(|&j| !sent[&(j, i)].verifies(&held[&i]));
            let flag = if self.is_faulty(i) {
                self.adversary.flag(i, honest_flag)
            } else {
                honest_flag
            };
            let mut b = Bits::new();
            b.push(flag);
            flags.push((i, b));
        }
        let b_cost = ideal_broadcast_cost(n, 1, self.config.c);
        self.net.metrics_mut().bits_notification_model += b_cost * active.len() as u64;
        let agreed_flags: BTreeMap<NodeId, bool> = self
            .broadcast_all(BroadcastPurpose::Notification, flags)?
            .into_iter()
            .map(|(v, b)| (v, b[0]))
            .collect();

        if !agreed_flags.values().any(|&f| f) {
            let decisions: BTreeMap<NodeId, Payload> = fault_free
                .iter()
                .filter(|v| !v.is_source())
                .map(|&v| (v, held[&v].clone()))
                .collect();
            if misbehaving {
                self.net.metrics_mut().deception_events += 1;
            }
            self.count_disagreement(&decisions);
            self.generation += 1;
            return Ok(GenerationOutcome::Decided { decisions });
        }

        // Extended step.
        {
            let metrics = self.net.metrics_mut();
            metrics.extended_steps += 1;
            metrics.bits_extended_model += n as u64 * ideal_broadcast_cost(n, self.config.d_bits, self.config.c);
        }
        let mut wires = Vec::new();
        for &v in &active {
            let nb = &neighbors[&v];
            let actual = Transcript {
                node_id: v,
                claimed_payload: held[&v].clone(),
                claimed_sent_digests: nb.iter().map(|&j| (j, sent[&(v, j)])).collect(),
                claimed_received_digests: nb.iter().map(|&j| (j, sent[&(j, v)])).collect(),
                claimed_flag: agreed_flags[&v],
            };
            let claimed = if self.is_faulty(v) {
                self.adversary.transcript(actual)
            } else {
                actual
            };
            let wire = bits::fit_to_length(Some(claimed.encode(nb, k)), Transcript::wire_len(d, k, nb.len()));
            wires.push((v, wire));
        }
        let agreed_wires = self.broadcast_all(BroadcastPurpose::Transcript, wires)?;
        let mut transcripts = BTreeMap::new();
        for (v, wire) in &agreed_wires {
            let tr = Transcript::decode(*v, wire, &neighbors[v], d, k, agreed_flags[v])?;
            transcripts.insert(*v, tr);
        }
        let verdict = analyze_dispute(&self.graph, &transcripts)?;
        self.graph.apply(&verdict);
        let mut newly_isolated = update_isolation(&mut self.graph);
        newly_isolated.extend(verdict.self_contradictory_nodes.iter().copied());
        for &v in &newly_isolated {
            self.net.isolate(v);
        }
        self.net.record_graph_delta(GraphDelta {
            new_f_edges: verdict.new_f_edges.iter().copied().collect(),
            self_contradictory: verdict.self_contradictory_nodes.iter().copied().collect(),
            newly_isolated: newly_isolated.iter().copied().collect(),
        });

        let decisions = if self.graph.is_active(NodeId::SOURCE) {
            let agreed = transcripts[&NodeId::SOURCE].claimed_payload.clone();
            let decisions: BTreeMap<NodeId, Payload> = self
                .fault_free_active()
                .into_iter()
                .filter(|v| !v.is_source())
                .map(|v| (v, agreed.clone()))
                .collect();
            self.count_disagreement(&decisions);
            Some(decisions)
        } else {
            None
        };
        self.generation += 1;
        Ok(GenerationOutcome::DisputeEscalated {
            verdict,
            newly_isolated,
            decisions,
        })
    }

    fn count_disagreement(&mut self, decisions: &BTreeMap<NodeId, Payload>) {
        let mut values = decisions.values();
        if let Some(first) = values.next() {
            if values.any(|p| p != first) {
                self.net.metrics_mut().disagreement_events += 1;
            }
        }
    }

    /// Runs every generation over `input` and assembles the outputs.
    pub fn run(mut self, input: &Bits) -> Result<SessionResult, ProtocolError> {
        let cfg = self.config.clone();
        if input.len() as u64 != cfg.l {
            return Err(ProtocolError::InputLength {
                got: input.len(),
                expected: cfg.l,
            });
        }
        let d = cfg.d_bits as usize;
        let mut padded = input.clone();
        padded.resize(cfg.padded_len() as usize, false);
        self.net.metrics_mut().padded_bits = cfg.padded_bits();

        let peers: Vec<NodeId> = all_nodes(cfg.n)
            .filter(|v| !v.is_source() && !self.is_faulty(*v))
            .collect();
        let mut outputs: BTreeMap<NodeId, Bits> = peers.iter().map(|&v| (v, Bits::new())).collect();
        let mut outcome = SessionOutcome::Completed;
        for g in 0..cfg.generations() {
            let start = g as usize * d;
            let chunk = Payload::new(padded[start..start + d].to_bitvec());
            let result = self.run_generation(&chunk)?;
            match result.decisions() {
                Some(decisions) => {
                    for (v, out) in outputs.iter_mut() {
                        let decided = decisions.get(v).cloned().unwrap_or_else(|| cfg.default_payload());
                        out.extend_from_bitslice(decided.bits());
                    }
                }
                None => {
                    outcome = SessionOutcome::DefaultTerminated { generation: g };
                    break;
                }
            }
        }
        if let SessionOutcome::DefaultTerminated { generation } = outcome {
            let default = cfg.default_payload();
            for out in outputs.values_mut() {
                for _ in generation..cfg.generations() {
                    out.extend_from_bitslice(default.bits());
                }
            }
        }
        for out in outputs.values_mut() {
            out.truncate(cfg.l as usize);
        }

        let mut distinct = outputs.values();
        let agreement = match distinct.next() {
            Some(first) => distinct.all(|o| o == first),
            None => true,
        };
        let validity = self.is_faulty(NodeId::SOURCE) || outputs.values().all(|o| o == input);
        let trace = self.net.take_trace();
        Ok(SessionResult {
            outcome,
            input: input.clone(),
            outputs,
            metrics: self.net.metrics().clone(),
            faulty: self.faulty,
            final_graph: self.graph,
            agreement,
            validity,
            trace,
        })
    }
}

/// The source input of a session: `l` bits from the session's input stream.
pub fn session_input(config: &ProtocolConfig) -> Bits {
    let mut rng = rng::substream(config.seed, LABEL_INPUT, 0);
    bits::random_bits(config.l as usize, &mut rng)
}

pub fn run_session(config: &ProtocolConfig, adversary: &mut AdversaryStrategy) -> Result<SessionResult, ProtocolError> {
    run_session_with_input(config, adversary, &session_input(config), false)
}

pub fn run_session_traced(
    config: &ProtocolConfig,
    adversary: &mut AdversaryStrategy,
) -> Result<SessionResult, ProtocolError> {
    run_session_with_input(config, adversary, &session_input(config), true)
}

pub fn run_session_with_input(
    config: &ProtocolConfig,
    adversary: &mut AdversaryStrategy,
    input: &Bits,
    trace: bool,
) -> Result<SessionResult, ProtocolError> {
    Session::new(config.clone(), adversary, trace)?.run(input)
}

/// Field width and generation size for message length `l`: `k = round(log2 l)`
/// and `D` the smallest multiple of `k` not below `l^(1-beta)`.
pub fn parameter_schedule(l: u64, beta: f64) -> Result<(u32, u64), ConfigError> {
    let err = |reason: &str| ConfigError::Schedule {
        l,
        beta,
        reason: reason.to_string(),
    };
    if l < 16 {
        return Err(err("l must be at least 16"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(err("beta must lie strictly between 0 and 1"));
    }
    let k = (l as f64).log2().round() as u32;
    if field::check_width(k).is_err() {
        return Err(err("field width out of range"));
    }
    let target = ((l as f64).powf(1.0 - beta) - 1e-9).ceil().max(1.0) as u64;
    let d = target.div_ceil(u64::from(k)) * u64::from(k);
    if d > l {
        return Err(err("generation longer than the message"));
    }
    Ok((k, d))
}

/// A configuration using [`parameter_schedule`], padding the final generation.
pub fn scheduled_config(n: usize, t: usize, l: u64, beta: f64) -> Result<ProtocolConfig, ConfigError> {
    let (k, d) = parameter_schedule(l, beta)?;
    let mut config = ProtocolConfig::new(n, t, l, d, k);
    config.pad_final_generation = true;
    config.validate()?;
    Ok(config)
}
