//! Multi-valued Byzantine broadcast with keyed-hash consistency checks,
//! fault diagnosis and a synchronous network simulator.
//!
//! The source (node 0) agrees an `l`-bit message with `n - 1` peers, `D`
//! bits per generation. Peers cross-check what they received with keyed
//! polynomial hashes and reliably broadcast a one-bit flag. A raised flag
//! triggers a dispute step that updates a diagnosis graph and eventually
//! isolates every misbehaving node.

pub mod adversary;
pub mod bits;
pub mod broadcast;
pub mod config;
pub mod diagnosis;
pub mod field;
pub mod harness;
pub mod node;
pub mod protocol;
pub mod rng;
pub mod simnet;

pub use adversary::{AdversaryError, AdversaryStrategy, Role};
pub use bits::Bits;
pub use broadcast::{ideal_broadcast_cost, om_broadcast, BroadcastInstance, BroadcastPurpose, RelayPolicy};
pub use config::{ConfigError, ProtocolConfig};
pub use diagnosis::{
    analyze_dispute, build_spanning_tree, check_two_hop_lemma, update_isolation, DiagnosisGraph, DisputeVerdict,
    EdgeLabel, SpanningTree, Transcript,
};
pub use field::{collision_bound, gf_mul, hash, FieldElement, FieldError, KeyedDigest, Payload};
pub use harness::{emit_report, run_experiment, AggregateReport, ExperimentSpec, HarnessError, OutputFormat, ReportRow};
pub use node::NodeId;
pub use protocol::{
    parameter_schedule, run_session, run_session_with_input, scheduled_config, GenerationOutcome, ProtocolError,
    Session, SessionOutcome, SessionResult,
};
pub use simnet::{complexity_report, security_bound, ComplexityReport, Network, RunMetrics, StepTag};
