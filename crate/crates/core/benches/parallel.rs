use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pulsectl_core::chain::{ChainConfig, PumpChain};
use pulsectl_core::domain_rand::{CurriculumConfig, CurriculumState};
use pulsectl_core::frog::{FrogConfig, FrogSynth};
use pulsectl_core::{DispersionCoeffs, Exec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PATHS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn frog(c: &mut Criterion) {
    let chain = PumpChain::new(ChainConfig::default()).unwrap();
    let synth = FrogSynth::new(chain.grid(), FrogConfig::default()).unwrap();
    let psi = chain.cancelling_psi() + DispersionCoeffs::new(2e4, 1e5, 0.0);
    let field = chain.propagate(psi, chain.dynamics(2.0).unwrap()).unwrap();
    let mut g = c.benchmark_group("frog_trace");
    for (name, exec) in PATHS {
        g.bench_function(name, |b| b.iter(|| synth.trace_with(black_box(&field), exec).unwrap()));
    }
    g.finish();
}

fn batch_propagate(c: &mut Criterion) {
    let chain = PumpChain::new(ChainConfig::default()).unwrap();
    let mut g = c.benchmark_group("batch_intensity_ratio");
    for n in [16usize, 64] {
        let settings: Vec<_> = (0..n)
            .map(|k| {
                let psi = chain.cancelling_psi() + DispersionCoeffs::new(-5e4 + 1e5 * k as f64 / n as f64, 0.0, 0.0);
                (psi, chain.dynamics(2.0).unwrap())
            })
            .collect();
        for (name, exec) in PATHS {
            g.bench_with_input(BenchmarkId::new(name, n), &settings, |b, s| {
                b.iter(|| chain.intensity_ratios(black_box(s), exec).unwrap())
            });
        }
    }
    g.finish();
}

fn curriculum_update(c: &mut Criterion) {
    let mut base = CurriculumState::new(CurriculumConfig::default()).unwrap();
    let d = base.distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..base.config.min_episodes {
        let b = d.sample(&mut rng);
        base.record_episode(b, 1.0).unwrap();
    }
    let mut g = c.benchmark_group("curriculum_update");
    g.sample_size(10);
    for (name, exec) in PATHS {
        g.bench_function(name, |b| {
            b.iter_batched(|| base.clone(), |mut s| s.update_with(exec), criterion::BatchSize::LargeInput)
        });
    }
    g.finish();
}

criterion_group!(benches, frog, batch_propagate, curriculum_update);
criterion_main!(benches);
