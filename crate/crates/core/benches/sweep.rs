use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mecsim::config::SweepSection;
use mecsim::engine::{sweep, Simulation};
use mecsim::par::Execution;
use mecsim::{PolicyKind, Scenario, SimulationOptions};

fn base(num_ues: usize, horizon: u64) -> Scenario {
    let mut s = Scenario::default();
    s.network.num_ues = num_ues;
    s.network.horizon_slots = horizon;
    s
}

fn sweep_execution(c: &mut Criterion) {
    let scenario = base(10, 500);
    let grid = SweepSection {
        seeds: (1..=8).collect(),
        tradeoffs: vec![0.0, 1e8],
        ..Default::default()
    };
    let mut group = c.benchmark_group("sweep_16_points");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |b| b.iter(|| sweep(black_box(&scenario), &grid, exec).unwrap()));
    }
    group.finish();
}

fn slot_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("slot_step");
    for ues in [30, 80] {
        let scenario = base(ues, 1_000_000);
        group.bench_with_input(BenchmarkId::from_parameter(ues), &scenario, |b, s| {
            let mut sim = Simulation::new(s.build().unwrap(), SimulationOptions::new(PolicyKind::Proposed, 1_000_000));
            b.iter(|| sim.step());
        });
    }
    group.finish();
}

criterion_group!(benches, sweep_execution, slot_step);
criterion_main!(benches);
