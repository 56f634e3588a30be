use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rics_v2x::agents::oracle::exhaustive_oracle;
use rics_v2x::agents::{evaluate, RandomPolicy};
use rics_v2x::env::{self, EnvConfig};
use rics_v2x::exec::{self, ExecMode};
use rics_v2x::scenario::TopologyConfig;

fn tiny() -> EnvConfig {
    EnvConfig {
        topology: TopologyConfig {
            avs_per_cell: 2,
            v2v_per_cell: 2,
            rics_elements: 8,
            ..Default::default()
        },
        steps_per_episode: 20,
        ..Default::default()
    }
}

fn oracle(c: &mut Criterion) {
    let cfg = tiny();
    let (state, rng) = env::reset(&cfg, 7).unwrap();
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| exhaustive_oracle(&cfg, black_box(&state), &rng, 11, mode).unwrap())
        });
    }
    g.finish();
}

fn seeds(c: &mut Criterion) {
    let cfg = tiny();
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("evaluate_seeds");
    g.sample_size(10);
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| {
                exec::map(mode, &seeds, |&s| {
                    let mut p = RandomPolicy::new(s);
                    evaluate(&mut p, &cfg, 2, s).unwrap().sum_safety
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, oracle, seeds);
criterion_main!(benches);
