use std::collections::BTreeSet;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mvbb_core::bits;
use mvbb_core::broadcast::{AllHonest, InstanceId};
use mvbb_core::{
    gf_mul, hash, om_broadcast, run_session, AdversaryStrategy, BroadcastInstance, BroadcastPurpose, FieldElement,
    Network, NodeId, Payload, ProtocolConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [8u32, 16, 32] {
        let a = FieldElement::random(k, &mut rng).unwrap();
        let b = FieldElement::random(k, &mut rng).unwrap();
        c.bench_with_input(BenchmarkId::new("gf_mul", k), &k, |bench, _| {
            bench.iter(|| gf_mul(black_box(a), black_box(b)).unwrap())
        });
    }
    for (d, k) in [(256usize, 16u32), (4096, 16), (522, 18)] {
        let m = Payload::random(d, &mut rng);
        let key = FieldElement::random(k, &mut rng).unwrap();
        c.bench_with_input(BenchmarkId::new("hash", format!("D{d}_k{k}")), &d, |bench, _| {
            bench.iter(|| hash(black_box(&m), black_box(key)).unwrap())
        });
    }
}

fn broadcast(c: &mut Criterion) {
    for (n, t) in [(4usize, 1usize), (7, 2)] {
        let members: BTreeSet<NodeId> = (0..n).map(NodeId::from).collect();
        let instance = BroadcastInstance::new(
            InstanceId {
                generation: 0,
                purpose: BroadcastPurpose::Notification,
                source: NodeId(0),
            },
            bits::zeros(1),
            t,
        );
        c.bench_with_input(BenchmarkId::new("om_broadcast", format!("n{n}_t{t}")), &n, |bench, _| {
            bench.iter(|| {
                let mut net = Network::new(n, false);
                om_broadcast(&mut net, &instance, &members, &mut AllHonest).unwrap()
            })
        });
    }
}

fn session(c: &mut Criterion) {
    let mut group = c.benchmark_group("session");
    group.sample_size(20);
    for (name, adversary, controlled) in [
        ("honest", "honest", vec![]),
        ("equivocating_source", "equivocating_source", vec![NodeId(0)]),
    ] {
        let config = ProtocolConfig::new(4, 1, 4096, 64, 8);
        let adv = AdversaryStrategy::from_name(adversary, &controlled, 4, 1).unwrap();
        group.bench_function(name, |bench| {
            bench.iter(|| run_session(&config, &mut adv.clone()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, field, broadcast, session);
criterion_main!(benches);
