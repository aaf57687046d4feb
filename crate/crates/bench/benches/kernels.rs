use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use vcfp_core::fpsolver::{assemble, BandLu, ImplicitStepper};
use vcfp_core::particle::{simulate_ensemble, InitialSampler, Stepper, StreamNoise};
use vcfp_core::{DensityField, GridSpec, ModelParams, ParticleState, SimConfig};

fn particle(c: &mut Criterion) {
    let p = ModelParams::default();
    let stepper = Stepper::new(&p, 0.01);
    let mut g = c.benchmark_group("particle");
    g.throughput(Throughput::Elements(1_000));
    g.bench_function("1000_steps", |b| {
        b.iter(|| {
            let mut noise = StreamNoise::new(1, 0);
            let mut s = ParticleState::at(0.3, 1.0);
            let (mut max_g, mut interval) = (1.0, 1.0);
            for k in 0..1_000 {
                stepper.advance(&mut s, k as f64 * 0.01, &mut noise, 0, &mut max_g, &mut interval, None).unwrap();
            }
            black_box(s)
        })
    });
    let init = InitialSampler::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 2.0 };
    let cfg = SimConfig::new(0.01, 1.0, 10_000, 1, vec![1.0]);
    g.throughput(Throughput::Elements(1_000_000));
    g.sample_size(10);
    g.bench_function("ensemble_1e4x100", |b| b.iter(|| simulate_ensemble(&p, &cfg, &init).unwrap()));
    g.finish();
}

fn fpsolver(c: &mut Criterion) {
    let p = ModelParams::default();
    let mut g = c.benchmark_group("fpsolver");
    g.sample_size(10);
    for n in [40usize, 200] {
        let grid = GridSpec::new(&p, n, n, 8.0).unwrap();
        g.bench_function(format!("assemble_{n}"), |b| b.iter(|| assemble(&p, &grid).unwrap()));
        let op = assemble(&p, &grid).unwrap();
        g.bench_function(format!("factor_{n}"), |b| b.iter(|| BandLu::shifted(&op.matrix, 0.01).unwrap()));
        let stepper = ImplicitStepper::new(&op, 0.01).unwrap();
        let start = DensityField::uniform_box(grid, 0.0, 1.0, 0.0, 2.0).unwrap();
        g.bench_function(format!("implicit_step_{n}"), |b| {
            b.iter_batched_ref(|| start.clone(), |f| stepper.step(f), BatchSize::LargeInput)
        });
        g.bench_function(format!("steady_state_{n}"), |b| b.iter(|| op.steady_state(1e-10, 200).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, particle, fpsolver);
criterion_main!(benches);
