use std::time::Instant;

use ndarray::Array2;
use proptest::prelude::*;
use qmri_core::relaxometry::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn t1_times() -> RelaxTimes {
    RelaxTimes::default_for(RelaxKind::T1)
}

fn t2_times() -> RelaxTimes {
    RelaxTimes::default_for(RelaxKind::T2)
}

#[test]
fn t2_round_trip() {
    let times = t2_times();
    let s: Vec<f64> = times.times().iter().map(|&t| signal_t2(1.2, 45.0, t).unwrap()).collect();
    let fit = fit_voxel(&s, &times).unwrap();
    assert!(!fit.degenerate && fit.converged);
    assert!(rel(fit.params[0], 1.2) < 1e-6);
    assert!(rel(fit.params[1], 45.0) < 1e-6);
    assert!(fit.residual < 1e-9);
}

#[test]
fn t1_round_trip() {
    let times = t1_times();
    let s: Vec<f64> = times.times().iter().map(|&t| signal_t1(1.0, 1.9, 700.0, t).unwrap()).collect();
    let fit = fit_voxel(&s, &times).unwrap();
    assert!(rel(fit.params[0], 1.0) < 1e-5, "{:?}", fit.params);
    assert!(rel(fit.params[1], 1.9) < 1e-5);
    assert!(rel(fit.params[2], 700.0) < 1e-5);
    assert!(rel(fit.t1().unwrap(), 630.0) < 1e-4);
}

#[test]
fn zero_signal_is_degenerate() {
    for times in [t1_times(), t2_times()] {
        let fit = fit_voxel(&vec![0.0; times.len()], &times).unwrap();
        assert!(fit.degenerate);
        assert!(fit.params.iter().all(|&p| p == 0.0));
    }
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(fit_voxel(&[1.0, 2.0], &t2_times()).is_err());
}

#[test]
fn derive_t1_matches_voxel_loop_and_is_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Array2::from_shape_fn((6, 7), |_| rng.random_range(0.1..3.0));
    let b = Array2::from_shape_fn((6, 7), |_| rng.random_range(0.1..3.0));
    let ts = Array2::from_shape_fn((6, 7), |_| rng.random_range(200.0..2000.0));
    let (t1, flags) = derive_t1(&a, &b, &ts).unwrap();
    let (t1c, _) = derive_t1(&a, &b, &(&ts * 2.5)).unwrap();
    for i in 0..6 {
        for j in 0..7 {
            let want = (b[[i, j]] / a[[i, j]] - 1.0) * ts[[i, j]];
            assert_eq!(t1[[i, j]], want);
            assert!((t1c[[i, j]] - 2.5 * want).abs() <= 1e-12 * want.abs().max(1.0));
            assert!(!flags[[i, j]]);
        }
    }
    assert!(derive_t1(&a, &b, &Array2::zeros((2, 2))).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn t1_fit_inverts_the_model(a in 0.1f64..3.0, ratio in 1.05f64..3.0, ts in 200f64..2000.0) {
        let b = (a * ratio).min(3.0).max(a * 1.05);
        let times = t1_times();
        let s: Vec<f64> = times.times().iter().map(|&t| signal_t1(a, b, ts, t).unwrap()).collect();
        let fit = fit_voxel(&s, &times).unwrap();
        prop_assert!(rel(fit.params[0], a) < 1e-5, "{:?} vs {a} {b} {ts}", fit.params);
        prop_assert!(rel(fit.params[1], b) < 1e-5);
        prop_assert!(rel(fit.params[2], ts) < 1e-5);
    }

    #[test]
    fn t2_fit_inverts_the_model(a in 0.1f64..3.0, t2 in 20f64..200.0) {
        let times = t2_times();
        let s: Vec<f64> = times.times().iter().map(|&t| signal_t2(a, t2, t).unwrap()).collect();
        let fit = fit_voxel(&s, &times).unwrap();
        prop_assert!(rel(fit.params[0], a) < 1e-5);
        prop_assert!(rel(fit.params[1], t2) < 1e-5);
    }

    #[test]
    fn lm_never_accepts_an_uphill_step(a in 0.1f64..3.0, t2 in 20f64..200.0, noise in 0.0f64..0.1) {
        use qmri_core::relaxometry::lm::{minimize, LmModel};
        struct Decay;
        impl LmModel for Decay {
            fn n_params(&self) -> usize { 2 }
            fn eval(&self, p: &[f64; 3], t: f64, g: &mut [f64; 3]) -> f64 {
                let e = (-t / p[1].exp()).exp();
                g[0] = e;
                g[1] = p[0] * e * t / p[1].exp();
                p[0] * e
            }
        }
        let t = [0.0, 20.0, 35.0, 55.0, 90.0];
        let y: Vec<f64> = t.iter().enumerate().map(|(i, &t)| a * (-t / t2).exp() + noise * (i as f64 - 2.0)).collect();
        let mut trace = Vec::new();
        minimize(&Decay, [1.0, 100f64.ln(), 0.0], &t, &y, &LmOptions::default(), Some(&mut trace));
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

fn t1_phantom(n: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<bool>) {
    let c = n as f64 / 2.0;
    let mask = Array2::from_shape_fn((n, n), |(i, j)| {
        ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt() < 0.45 * n as f64
    });
    let a = Array2::from_shape_fn((n, n), |(i, _)| 0.6 + 0.02 * (i % 20) as f64);
    let b = Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] * (1.6 + 0.01 * (j % 30) as f64));
    let ts = Array2::from_shape_fn((n, n), |(i, j)| 500.0 + 10.0 * ((i + 2 * j) % 100) as f64);
    (a, b, ts, mask)
}

#[test]
fn t1_map_round_trip_64() {
    let (a, b, ts, mask) = t1_phantom(64);
    let truth = ParameterMap::t1(a.clone(), b.clone(), ts.clone()).unwrap();
    let times = t1_times();
    let stack = truth.render(times.times());
    let start = Instant::now();
    let fit = fit_map(&stack, &times, &mask).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "{elapsed:?}");
    let ParameterMap::T1 { a: fa, b: fb, t1_star: fts, t1: ft1 } = &fit.map else { panic!() };
    let ParameterMap::T1 { t1: t1_true, .. } = &truth else { panic!() };
    for ((i, j), &m) in mask.indexed_iter() {
        if !m {
            assert!(fit.flagged[[i, j]]);
            continue;
        }
        assert!(rel(fa[[i, j]], a[[i, j]]) < 1e-4);
        assert!(rel(fb[[i, j]], b[[i, j]]) < 1e-4);
        assert!(rel(fts[[i, j]], ts[[i, j]]) < 1e-4);
        assert!(rel(ft1[[i, j]], t1_true[[i, j]]) < 1e-4);
    }
}

#[test]
fn empty_mask_gives_empty_flagged_maps() {
    let times = t2_times();
    let stack = vec![Array2::from_elem((4, 4), 1.0); 3];
    let fit = fit_map(&stack, &times, &Array2::from_elem((4, 4), false)).unwrap();
    assert!(fit.flagged.iter().all(|&f| f));
    assert!(fit.map.primary().iter().all(|&v| v == 0.0));
    assert!(fit_map(&stack[..2], &times, &Array2::from_elem((4, 4), true)).is_err());
}

#[test]
fn noisy_t2_map_median_error_is_small() {
    let n = 32;
    let times = t2_times();
    let a = Array2::from_elem((n, n), 1.0);
    let t2 = Array2::from_elem((n, n), 45.0);
    let truth = ParameterMap::t2(a, t2.clone()).unwrap();
    let clean = truth.render(times.times());
    let energy: f64 = clean.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>()).sum();
    let count = (clean.len() * n * n) as f64;
    let sigma = (energy / count).sqrt() / 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, sigma).unwrap();
    let noisy: Vec<Array2<f64>> = clean.iter().map(|s| s.mapv(|v| v + normal.sample(&mut rng))).collect();
    let fit = fit_map(&noisy, &times, &Array2::from_elem((n, n), true)).unwrap();
    let mut errs: Vec<f64> = fit.map.primary().iter().zip(t2.iter()).map(|(f, t)| rel(*f, *t)).collect();
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    assert!(median < 0.05, "median relative T2 error {median}");
}

#[test]
fn fit_map_is_deterministic() {
    let (a, b, ts, mask) = t1_phantom(12);
    let times = t1_times();
    let stack = ParameterMap::t1(a, b, ts).unwrap().render(times.times());
    let noisy: Vec<Array2<f64>> =
        stack.iter().enumerate().map(|(k, s)| s.mapv(|v| v * (1.0 + 0.01 * k as f64))).collect();
    let f1 = fit_map(&noisy, &times, &mask).unwrap();
    let f2 = fit_map(&noisy, &times, &mask).unwrap();
    assert_eq!(f1, f2);
}
