use pulsectl_agents::bo::{bo_run, expected_improvement, BoConfig};
use pulsectl_agents::gp::{GpHyper, GpSurrogate};
use pulsectl_agents::grid::grid_search_1d;
use pulsectl_core::env::EnvConfig;
use pulsectl_core::{DispersionCoeffs, Exec, PumpChain};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain_and_box() -> (PumpChain, [f64; 3], [f64; 3], f64) {
    let cfg = EnvConfig::default();
    let b = cfg.bounds().unwrap();
    (PumpChain::new(cfg.chain.clone()).unwrap(), b.min, b.max, cfg.alpha)
}

#[test]
fn ei_vanishes_at_observed_points_without_noise() {
    let x: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.8, 0.3], vec![0.3, 0.6]];
    let y = vec![0.2, 1.0, -0.4, 0.7];
    let gp = GpSurrogate::fit(x.clone(), y.clone(), GpHyper::isotropic(2, 0.4, 1.0, 0.0)).unwrap();
    let best = 1.0;
    for p in &x {
        let (m, v) = gp.predict(p);
        assert_eq!(v, 0.0);
        assert_eq!(expected_improvement(m, v.sqrt(), best, 0.0), 0.0, "at {p:?}");
    }
}

#[test]
fn bo_finds_quadratic_optimum() {
    let opt = 0.3721;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = bo_run(|p| Ok(-(p[0] - opt).powi(2)), 1, 30, None, &BoConfig::default(), &mut rng).unwrap();
    assert_eq!(h.queries.len(), 30);
    let (x, _) = h.best().unwrap();
    assert!((x[0] - opt).abs() < 1e-2, "best {x:?}");
}

#[test]
fn grid_uses_three_sweeps_of_resolution() {
    let r = grid_search_1d(|p| -p.iter().sum::<f64>().powi(2), &[0.0; 3], &[1.0; 3], 50, &[0.5; 3], Exec::Parallel)
        .unwrap();
    assert_eq!(r.evaluations.len(), 150);
}

#[test]
fn grid_solves_separable_objective() {
    let target = [0.231, -0.77, 0.402];
    let f = |p: &[f64]| -p.iter().zip(&target).map(|(a, b)| 3.0 * (a - b).powi(2)).sum::<f64>();
    let res = 41;
    let r = grid_search_1d(f, &[-1.0; 3], &[1.0; 3], res, &[0.9, 0.9, -0.9], Exec::Sequential).unwrap();
    let cell = 2.0 / (res - 1) as f64;
    for i in 0..3 {
        assert!((r.best[i] - target[i]).abs() <= 0.5 * cell + 1e-12, "{:?}", r.best);
    }
}

#[test]
fn grid_recovers_cancelling_stretcher_without_nonlinearity() {
    let (chain, lo, hi, _) = chain_and_box();
    let dynamics = chain.dynamics(0.0).unwrap();
    let centre: Vec<f64> = (0..3).map(|i| 0.5 * (lo[i] + hi[i])).collect();
    let start: Vec<f64> = (0..3).map(|i| centre[i] + 0.3 * (hi[i] - centre[i])).collect();
    let res = 51;
    let objective = |p: &[f64]| chain.intensity_ratio(DispersionCoeffs::new(p[0], p[1], p[2]), dynamics).unwrap();
    let r = grid_search_1d(objective, &lo, &hi, res, &start, Exec::Parallel).unwrap();
    let target = chain.cancelling_psi().to_array();
    for i in 0..3 {
        let cell = (hi[i] - lo[i]) / (res - 1) as f64;
        assert!((r.best[i] - target[i]).abs() <= cell * (1.0 + 1e-9), "coefficient {i}: {:?} vs {target:?}", r.best);
    }
    assert!(r.value > 0.99, "{}", r.value);
}

#[test]
fn bo_queries_jump_beyond_safety_step() {
    let (chain, lo, hi, alpha) = chain_and_box();
    let dynamics = chain.dynamics(2.0).unwrap();
    let to_psi = |u: &[f64]| {
        DispersionCoeffs::new(
            lo[0] + u[0] * (hi[0] - lo[0]),
            lo[1] + u[1] * (hi[1] - lo[1]),
            lo[2] + u[2] * (hi[2] - lo[2]),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = bo_run(
        |u| Ok(chain.intensity_ratio(to_psi(u), dynamics)?),
        3,
        100,
        Some(vec![0.5; 3]),
        &BoConfig::default(),
        &mut rng,
    )
    .map_err(|e| e.to_string())
    .unwrap();
    // In unit-box coordinates the per-step bound alpha * c_i is just alpha.
    let worst = h.step_sizes().iter().flatten().copied().fold(0.0, f64::max);
    assert!(worst > alpha, "largest BO step {worst} within alpha {alpha}");
}
