// Sequential vs data-parallel execution of the hot loops.
//
//   cargo bench -p eventdehaze
//   cargo bench -p eventdehaze --no-default-features   # parallel compiled out
//
// Both modes produce identical results; only wall time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eventdehaze::diffusion::{sample_chains, GaussianOracle, NoiseSchedule, SamplerKind};
use eventdehaze::pipeline::{build_toy_dataset, evaluate, train_toy, DatasetConfig, EvalConfig, InitMode, TrainConfig};
use eventdehaze::sim::{render_trajectory, simulate_events_with, MotionSample, MotionTrajectory, SimConfig};
use eventdehaze::{ExecMode, Image};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn samplers(c: &mut Criterion) {
    let oracle = GaussianOracle::new(2.0, 0.25, NoiseSchedule::linear_default()).unwrap();
    let sched = NoiseSchedule::linear_default();
    let mut group = c.benchmark_group("sample_chains_1k");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("ddim15", name), |b| {
            b.iter(|| {
                sample_chains(
                    &oracle,
                    SamplerKind::Ddim { steps: 15, eta: 0.0 },
                    &sched,
                    &[4],
                    1000,
                    7,
                    mode,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn simulator(c: &mut Criterion) {
    let img = Image::from_fn(64, 64, 1, |_, y, x| {
        let v = ((x / 8 + y / 8) % 2) as f32 * 0.6 + 0.2;
        v + 0.002 * x as f32
    })
    .unwrap();
    let traj = MotionTrajectory::new(vec![
        MotionSample::identity(0),
        MotionSample {
            t: 20_000,
            dx: 4.0,
            dy: 1.5,
            rot: 0.05,
            scale: 1.02,
        },
    ])
    .unwrap()
    .densify(24)
    .unwrap();
    let frames = render_trajectory(&img, &traj).unwrap();
    let cfg = SimConfig::default();
    let mut group = c.benchmark_group("simulate_64x64");
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| simulate_events_with(black_box(&frames), &cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let cfg = DatasetConfig {
        n: 16,
        ..DatasetConfig::default()
    };
    let mut group = c.benchmark_group("toy_pipeline");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("dataset16", name), |b| {
            b.iter(|| build_toy_dataset(black_box(&cfg), mode).unwrap())
        });
    }
    let data = build_toy_dataset(&cfg, ExecMode::Sequential).unwrap();
    let train = TrainConfig {
        iterations: 2,
        ..TrainConfig::default()
    };
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("train_2it", name), |b| {
            b.iter(|| train_toy(&train, &data[..8], mode).unwrap())
        });
    }
    let model = train_toy(&train, &data[..8], ExecMode::Sequential).unwrap().model;
    let sched = train.schedule().unwrap();
    let eval = EvalConfig {
        sampler: SamplerKind::Ddim { steps: 5, eta: 0.0 },
        init: InitMode::Scheduled,
        seed: 1,
    };
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("evaluate8_ddim5", name), |b| {
            b.iter(|| evaluate(&model, &data[8..], &eval, &sched, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, samplers, simulator, pipeline);
criterion_main!(benches);
