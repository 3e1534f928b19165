use proptest::prelude::*;
use pulsectl_core::domain_rand::{kl, CurriculumConfig, CurriculumState, DrDistribution, UpdateStatus};
use pulsectl_core::env::{EnvConfig, LaserEnv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector_env(latent: DrDistribution) -> LaserEnv {
    let cfg = EnvConfig { observe_traces: false, latent, ..EnvConfig::default() };
    LaserEnv::new(cfg).unwrap()
}

#[test]
fn random_actions_respect_safety_contract() {
    let mut env = vector_env(DrDistribution::Uniform { lo: 0.0, hi: 4.0 });
    let bounds = *env.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut steps = 0;
    let mut episode = 0u64;
    while steps < 2000 {
        env.reset(episode, None).unwrap();
        episode += 1;
        let mut psi = env.episode().unwrap().psi;
        let b = env.episode().unwrap().dynamics.b_integral;
        let mut len = 0;
        loop {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let r = env.step(&a).unwrap();
            len += 1;
            steps += 1;
            for i in 0..3 {
                assert!((r.info.psi[i] - psi[i]).abs() <= bounds.max_step(i));
            }
            assert!(bounds.contains(&r.info.psi));
            assert!((0.0..=1.0).contains(&r.reward));
            assert_eq!(r.info.latent_b, b);
            psi = r.info.psi;
            if r.done {
                break;
            }
        }
        assert_eq!(len, 20);
    }
}

#[test]
fn initial_states_lie_within_bounds() {
    let mut env = vector_env(DrDistribution::Fixed { value: 0.0 });
    let bounds = *env.bounds();
    for seed in 0..2000 {
        env.reset(seed, None).unwrap();
        assert!(bounds.contains(&env.episode().unwrap().psi));
    }
}

#[test]
fn trajectories_are_reproducible() {
    let mut a =
        LaserEnv::new(EnvConfig { latent: DrDistribution::Uniform { lo: 1.0, hi: 3.0 }, ..EnvConfig::default() })
            .unwrap();
    let mut b = a.clone();
    let oa = a.reset(42, None).unwrap();
    let ob = b.reset(42, None).unwrap();
    assert_eq!(oa, ob);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let act: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
    }
}

#[test]
fn observation_never_carries_the_latent() {
    let mut env = LaserEnv::new(EnvConfig::default()).unwrap();
    let low = env.reset(3, Some(env.chain().dynamics(0.5).unwrap())).unwrap();
    let high = env.reset(3, Some(env.chain().dynamics(3.5).unwrap())).unwrap();
    assert_eq!(low.psi_norm, high.psi_norm);
    assert_eq!(low.prev_action, high.prev_action);
    assert_eq!(low.vector().len(), 6);
    assert_eq!(low.traces.len(), 5);
    assert_ne!(low.traces, high.traces);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bounded_moves_stay_in_box(cur in -1.0..1.0f64, act in -3.0..3.0f64, i in 0usize..3) {
        let env = vector_env(DrDistribution::Fixed { value: 0.0 });
        let b = *env.bounds();
        let current = b.denormalize(i, cur);
        let next = b.apply(i, current, act);
        prop_assert!((next - current).abs() <= b.max_step(i));
        prop_assert!(next >= b.min[i] && next <= b.max[i]);
    }

    #[test]
    fn samples_stay_in_support(a in 0.5..100.0f64, b in 0.5..100.0f64, seed in any::<u64>()) {
        let d = DrDistribution::Beta { a, b, lo: 1.0, hi: 3.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x = d.sample(&mut rng);
            prop_assert!((1.0..=3.5).contains(&x));
        }
    }
}

#[test]
fn uniform_sample_mean() {
    let d = DrDistribution::Uniform { lo: 1.5, hi: 2.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
    assert!((mean - 2.0).abs() < 0.01);
}

#[test]
fn beta_one_one_is_uniform_by_ks() {
    let d = DrDistribution::Beta { a: 1.0, b: 1.0, lo: 1.0, hi: 3.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let cdf = (x - 1.0) / 2.5;
        ks = ks.max((cdf - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - cdf).abs());
    }
    assert!(ks < 0.01, "KS = {ks}");
}

fn synthetic_round(state: &mut CurriculumState, rng: &mut ChaCha8Rng, ratio: impl Fn(f64) -> f64) {
    let d = state.distribution();
    for _ in 0..state.config.min_episodes {
        let b = d.sample(rng);
        state.record_episode(b, ratio(b)).unwrap();
    }
}

#[test]
fn curriculum_kl_bounded_and_entropy_monotone_under_success() {
    let mut state = CurriculumState::new(CurriculumConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let before = state.distribution();
        synthetic_round(&mut state, &mut rng, |_| 1.0);
        let out = state.update();
        assert_eq!(out.status, UpdateStatus::Accepted);
        let after = state.distribution();
        assert!(kl(&after, &before).unwrap() <= 0.1 + 1e-12);
        assert!(after.entropy() >= before.entropy() - 1e-12);
    }
    let target = 2.5f64.ln();
    assert!((state.entropy() - target).abs() <= 0.01 * target, "entropy {}", state.entropy());
}

#[test]
fn unconstrained_curriculum_reaches_uniform() {
    let cfg = CurriculumConfig { ignore_success: true, ..CurriculumConfig::default() };
    let mut state = CurriculumState::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..40 {
        synthetic_round(&mut state, &mut rng, |_| 0.0);
        state.update();
    }
    assert!((state.a - 1.0).abs() < 1e-12 && (state.b - 1.0).abs() < 1e-12, "({}, {})", state.a, state.b);
}
