use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use wpt_charge::channel::{build_channel, ChannelModel};
use wpt_charge::engine::Simulation;
use wpt_charge::policy::{PowerAllocation, VoteSheet};
use wpt_charge::rng::SeedKey;
use wpt_charge::{BatteryState, RankedVotes, Scheme, WeightingMatrix};
use wpt_charge_bench::default_setup;

fn channel(c: &mut Criterion) {
    let setup = default_setup(Scheme::SinglUniv, 3.0);
    let scenario = &setup.scenario;
    let alloc = PowerAllocation::uniform(scenario);
    let mut group = c.benchmark_group("channel");
    for (name, model) in [
        ("dense", ChannelModel::Dense),
        ("order_statistics", ChannelModel::OrderStatistics),
    ] {
        let mut ch = build_channel(scenario, model);
        let mut votes = Vec::new();
        let mut block = 0u64;
        group.bench_function(name, |b| {
            b.iter(|| {
                block += 1;
                ch.begin_block(SeedKey::new(block).rng());
                let mut total = 0.0;
                for k in 0..scenario.num_wds() {
                    ch.strongest(k, 3, &mut votes);
                    total += ch.received(k, &alloc);
                }
                black_box(total)
            })
        });
    }
    group.finish();
}

fn allocation(c: &mut Criterion) {
    let setup = default_setup(Scheme::SinglUniv, 3.0);
    let scenario = &setup.scenario;
    let w = WeightingMatrix::example();
    let sheet = VoteSheet::from_entries(
        (0..scenario.num_wds())
            .map(|k| {
                (
                    BatteryState::new(1 + k % 4),
                    RankedVotes(vec![k, (k * 7) % 90, (k * 13) % 90]),
                )
            })
            .collect(),
    );
    let mut group = c.benchmark_group("allocate");
    for scheme in [Scheme::SinglUniv, Scheme::PropoPrio] {
        let policy = scheme.policy();
        let mut out = PowerAllocation::uniform(scenario);
        let mut rng = SeedKey::new(1).rng();
        group.bench_function(scheme.name(), |b| {
            b.iter(|| policy.allocate(black_box(&sheet), &w, scenario, &mut rng, &mut out))
        });
    }
    group.finish();
}

fn blocks(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_block");
    for scheme in [Scheme::SinglUniv, Scheme::PropoUniv, Scheme::EqlPower] {
        let setup = default_setup(scheme, 3.0);
        group.bench_function(scheme.name(), |b| {
            b.iter_batched_ref(
                || Simulation::new(&setup, 7).unwrap(),
                |sim| {
                    for _ in 0..100 {
                        sim.step_block();
                    }
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, channel, allocation, blocks);
criterion_main!(benches);
