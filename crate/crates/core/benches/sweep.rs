//! Sweep throughput: the rayon-backed cell driver against the sequential
//! fallback, over matrices small enough for CI yet wide enough to saturate
//! a few cores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aisnap::engine::{IntervalDist, Schedule, ScheduleKind};
use aisnap::protocols::ProtocolKind;
use aisnap::runner::{run_cells, run_cells_seq, NormConfig, RunConfig, ThresholdPolicy};
use aisnap::simnet::{ChannelPolicy, LatencyDist};
use aisnap::workloads::{SparsityPattern, SyntheticConfig, WorkloadConfig};

fn matrix(cells: u64) -> Vec<RunConfig> {
    (0..cells)
        .map(|seed| RunConfig {
            workload: WorkloadConfig::Synthetic(SyntheticConfig {
                n: 6,
                block_dim: 2,
                alpha: 0.8,
                seed: 11,
                pattern: SparsityPattern::Dense,
                offset_scale: 1.0,
            }),
            protocol: ProtocolKind::Nfais2,
            policy: ChannelPolicy::Arbitrary { max_hold: 32 },
            control_priority: false,
            schedule: Schedule {
                kind: ScheduleKind::RandomSubset { prob: 0.8, max_skip: 4 },
                interval: IntervalDist::Uniform { lo: 1, hi: 3 },
            },
            latency: LatencyDist::Uniform { lo: 1, hi: 4 },
            eps_prime: 1e-6,
            norm: NormConfig::Max,
            threshold: ThresholdPolicy::Auto,
            seed,
            max_updates_per_process: 50_000,
            max_events: 5_000_000,
            record_values: false,
            cls_initiators: vec![],
            allow_incompatible: false,
        })
        .collect()
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for cells in [8u64, 32] {
        let cfgs = matrix(cells);
        group.bench_with_input(BenchmarkId::new("parallel", cells), &cfgs, |b, cfgs| {
            b.iter(|| run_cells(cfgs))
        });
        group.bench_with_input(BenchmarkId::new("sequential", cells), &cfgs, |b, cfgs| {
            b.iter(|| run_cells_seq(cfgs))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
