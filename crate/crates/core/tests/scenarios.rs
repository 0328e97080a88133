use std::collections::BTreeMap;

use mvbb_core::adversary::Role;
use mvbb_core::protocol::{run_session, run_session_traced};
use mvbb_core::{AdversaryStrategy, NodeId, ProtocolConfig, SessionOutcome, SessionResult};

fn ids(v: &[u32]) -> Vec<NodeId> {
    v.iter().map(|&i| NodeId(i)).collect()
}

fn run(config: &ProtocolConfig, name: &str, controlled: &[u32]) -> SessionResult {
    let mut adv = AdversaryStrategy::from_name(name, &ids(controlled), config.n, config.t).unwrap();
    run_session(config, &mut adv).unwrap()
}

fn assert_safe(r: &SessionResult, config: &ProtocolConfig) {
    assert!(r.diagnosis_sound(), "unsound graph {:?} for faulty {:?}", r.final_graph, r.faulty);
    assert!(r.metrics.extended_steps <= config.extended_step_budget());
    assert!(r.agreement || r.metrics.deception_events > 0);
    assert!(r.complexity(config).unwrap().within_bound());
}

#[test]
fn honest_run_four_generations() {
    let config = ProtocolConfig::new(4, 1, 64, 16, 4).with_seed(1);
    let r = run(&config, "honest", &[1]);
    assert_eq!(r.outcome, SessionOutcome::Completed);
    assert_eq!(r.metrics.generations_run, 4);
    assert_eq!(r.metrics.extended_steps, 0);
    assert!(r.final_graph.f_edges().is_empty());
    assert!(r.outputs.values().all(|o| o == &r.input));
}

#[test]
fn equivocating_source_is_isolated_within_budget() {
    for seed in 0..50 {
        let config = ProtocolConfig::new(4, 1, 64, 16, 8).with_seed(seed);
        let r = run(&config, "equivocating_source", &[0]);
        assert_safe(&r, &config);
        if r.metrics.deception_events == 0 {
            assert!(matches!(r.outcome, SessionOutcome::DefaultTerminated { .. }), "seed {seed}");
            assert!(r.final_graph.is_isolated(NodeId(0)));
            assert!(r.metrics.extended_steps <= 2);
            assert!(r.agreement);
        }
    }
}

#[test]
fn equivocation_default_output_after_prefix() {
    let mut config = ProtocolConfig::new(4, 1, 64, 16, 8).with_seed(5);
    config.default_value = Some(mvbb_core::Payload::new(mvbb_core::bits::from_str("1010101010101010").unwrap()));
    let r = run(&config, "equivocating_source", &[0]);
    let SessionOutcome::DefaultTerminated { generation } = r.outcome else {
        panic!("expected termination, got {:?}", r.outcome);
    };
    let out = r.outputs.values().next().unwrap();
    for g in generation as usize..4 {
        assert_eq!(mvbb_core::bits::to_string(&out[g * 16..(g + 1) * 16]), "1010101010101010");
    }
    assert!(r.agreement);
}

#[test]
fn false_flagger_isolated_after_one_extended_step() {
    let config = ProtocolConfig::new(4, 1, 64, 16, 4).with_seed(2);
    let r = run(&config, "false_flagger", &[3]);
    assert_eq!(r.metrics.extended_steps, 1);
    assert_eq!(r.final_graph.isolated().iter().copied().collect::<Vec<_>>(), ids(&[3]));
    assert!(r.final_graph.f_edges().is_empty());
    assert_eq!(r.outcome, SessionOutcome::Completed);
    assert!(r.correct());
}

#[test]
fn digest_liar_uses_full_budget() {
    let config = ProtocolConfig::new(4, 1, 128, 16, 8).with_seed(3);
    let r = run(&config, "digest_liar", &[2]);
    assert_eq!(r.metrics.extended_steps, 2);
    assert!(r.final_graph.is_isolated(NodeId(2)));
    assert!(r.correct());
    assert_safe(&r, &config);
}

#[test]
fn transcript_liar_only_accuses_itself() {
    for n in [4usize, 7] {
        let t = (n - 1) / 3;
        let config = ProtocolConfig::new(n, t, 128, 16, 8).with_seed(4);
        let r = run(&config, "transcript_liar", &[1]);
        assert!(r.final_graph.f_edges().iter().all(|&(a, b)| a == NodeId(1) || b == NodeId(1)));
        assert!(r.final_graph.is_isolated(NodeId(1)));
        assert!(r.correct());
        assert_safe(&r, &config);
    }
}

#[test]
fn tree_corruptor_under_faulty_source_is_caught() {
    for seed in 0..10 {
        let config = ProtocolConfig::new(7, 2, 16 * 12, 16, 8).with_seed(seed);
        let r = run(&config, "colluders", &[0, 1]);
        assert_safe(&r, &config);
        assert!(r.agreement, "seed {seed}");
    }
}

#[test]
fn tree_corruptor_forwarding_is_marked_on_its_tree_edge() {
    // The source equivocates against its highest child, which then hangs
    // below node 1 in the tree; node 1 corrupts what it forwards.
    let config = ProtocolConfig::new(7, 2, 16 * 12, 16, 8).with_seed(9);
    let roles: BTreeMap<NodeId, Role> = [(NodeId(0), Role::TargetedSource), (NodeId(1), Role::TreeCorruptor)].into();
    let mut adv = AdversaryStrategy::with_roles("custom", roles, 7, 2).unwrap();
    let r = run_session_traced(&config, &mut adv).unwrap();
    assert_safe(&r, &config);
    assert!(r.agreement);
    let deltas: Vec<_> = r.trace.unwrap().into_iter().filter_map(|t| t.graph_delta).collect();
    let marked: Vec<(NodeId, NodeId)> = deltas.iter().flat_map(|d| d.new_f_edges.clone()).collect();
    assert!(marked.contains(&(NodeId(0), NodeId(6))));
    assert!(marked.contains(&(NodeId(1), NodeId(6))), "tree edge of the corruptor not marked: {marked:?}");
    assert!(r.final_graph.is_isolated(NodeId(0)));
}

#[test]
fn honest_controlled_nodes_never_trigger_disputes() {
    for seed in 0..20 {
        let config = ProtocolConfig::new(7, 2, 64, 16, 4).with_seed(seed);
        let r = run(&config, "honest", &[0, 3]);
        assert_eq!(r.metrics.extended_steps, 0);
        assert!(r.correct());
    }
}

#[test]
fn fuzzers_stay_within_budget() {
    for seed in 0..40 {
        for (n, t, controlled) in [(4usize, 1usize, vec![0u32]), (4, 1, vec![2]), (7, 2, vec![0, 4]), (7, 2, vec![1, 6])] {
            let config = ProtocolConfig::new(n, t, 64, 16, 8).with_seed(seed);
            let r = run(&config, "fuzz", &controlled);
            assert_safe(&r, &config);
        }
    }
}
