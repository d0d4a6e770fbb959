use ndarray::Array2;
use qmri_core::io::RegularizerKind;
use qmri_core::mri_ops::{Direction, MultiCoil, SamplingMask, SensitivityMaps, C64};
use qmri_core::relaxometry::{RelaxKind, RelaxTimes};
use qmri_nn::{grad_check, grad_check_params, Graph, ParamStore, Tensor, Var};
use qmri_recon::losses::{loss_recon, loss_relax, loss_total, ssim, Guidance, LossWeights};
use qmri_recon::mapping::{MappingConfig, MappingNet};
use qmri_recon::ops;
use qmri_recon::varnet::{Prepared, RefinerConfig, VarNet, VarNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.2..1.0))
}

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> qmri_nn::Result<Var> {
    let w = g.constant(random(g.shape(y), seed));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn lift<T>(r: qmri_recon::Result<T>) -> qmri_nn::Result<T> {
    r.map_err(|e| qmri_nn::NnError::InvalidArgument(e.to_string()))
}

#[test]
fn fft_gradient_is_the_inverse_transform() {
    let x = random(&[2, 2, 4, 6], 1);
    for dir in [Direction::Forward, Direction::Inverse] {
        let r = grad_check(
            |g, x| {
                let y = lift(ops::fft(g, x, dir))?;
                weighted_sum(g, y, 2)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(r.passes(REL, FLOOR), "{dir:?}: {}", r.max_rel);
    }
}

#[test]
fn expand_and_reduce_gradients() {
    let x = random(&[3, 2, 4, 4], 3);
    let s = random(&[2, 2, 4, 4], 4);
    let y = random(&[6, 2, 4, 4], 5);
    let rx = grad_check(
        |g, x| {
            let s = g.constant(s.clone());
            let e = lift(ops::expand(g, x, s))?;
            weighted_sum(g, e, 6)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(rx.passes(REL, FLOOR));
    let rs = grad_check(
        |g, s| {
            let x = g.constant(x.clone());
            let e = lift(ops::expand(g, x, s))?;
            weighted_sum(g, e, 6)
        },
        &s,
        1e-6,
    )
    .unwrap();
    assert!(rs.passes(REL, FLOOR));
    let ry = grad_check(
        |g, y| {
            let s = g.constant(s.clone());
            let r = lift(ops::reduce(g, y, s))?;
            weighted_sum(g, r, 7)
        },
        &y,
        1e-6,
    )
    .unwrap();
    assert!(ry.passes(REL, FLOOR));
    let rs = grad_check(
        |g, s| {
            let y = g.constant(y.clone());
            let r = lift(ops::reduce(g, y, s))?;
            weighted_sum(g, r, 7)
        },
        &s,
        1e-6,
    )
    .unwrap();
    assert!(rs.passes(REL, FLOOR));
}

#[test]
fn mask_cabs_and_normalization_gradients() {
    let lines = [true, false, true, true, false];
    let x = random(&[2, 2, 3, 5], 8);
    let r = grad_check(
        |g, x| {
            let m = lift(ops::mask_lines(g, x, &lines))?;
            let a = lift(ops::cabs(g, m))?;
            weighted_sum(g, a, 9)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "{}", r.max_rel);

    let s = random(&[3, 2, 3, 5], 10);
    let mut support = vec![true; 15];
    support[4] = false;
    let r = grad_check(
        |g, s| {
            let n = lift(ops::normalize_rss(g, s, &support))?;
            weighted_sum(g, n, 11)
        },
        &s,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "{}", r.max_rel);
}

#[test]
fn data_consistency_gradient_in_iterate_and_step() {
    let lines = [true, true, false, true];
    let yhat = random(&[2, 2, 3, 4], 12);
    let y = random(&[2, 2, 3, 4], 13);
    let alpha = Tensor::scalar(0.7);
    let r = grad_check(
        |g, v| {
            let a = g.constant(alpha.clone());
            let o = lift(ops::data_consistency(g, v, &y, a, &lines))?;
            weighted_sum(g, o, 14)
        },
        &yhat,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR));
    let r = grad_check(
        |g, a| {
            let v = g.constant(yhat.clone());
            let o = lift(ops::data_consistency(g, v, &y, a, &lines))?;
            let sq = g.square(o);
            weighted_sum(g, sq, 15)
        },
        &alpha,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "{}", r.max_rel);
}

fn image(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |(i, j)| 0.5 + 0.3 * ((i + 2 * j) as f64 * 0.4).sin() + rng.random_range(0.0..0.2))
}

#[test]
fn ssim_node_matches_metrics_and_differentiates() {
    let reference = image(14, 13, 16);
    let est = image(14, 13, 17);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 14, 13], est.iter().copied().collect()).unwrap());
    let s = ssim(&mut g, x, &reference).unwrap();
    let oracle = qmri_core::metrics::ssim(&est, &reference).unwrap();
    assert!((g.value(s).item() - oracle).abs() < 1e-12);

    let xt = Tensor::new(vec![1, 1, 14, 13], est.iter().copied().collect()).unwrap();
    let r = grad_check(|g, x| lift(ssim(g, x, &reference)), &xt, 1e-6).unwrap();
    assert!(r.passes(REL, FLOOR), "{}", r.max_rel);
}

#[test]
fn recon_loss_gradient() {
    let target = vec![image(12, 12, 18), image(12, 12, 19)];
    let xt = Tensor::new(vec![1, 2, 12, 12], image(12, 24, 20).iter().copied().collect()).unwrap();
    let r = grad_check(|g, x| lift(loss_recon(g, x, &target, 0.2, 0.8)), &xt, 1e-6).unwrap();
    assert!(r.passes(REL, FLOOR), "{}", r.max_rel);
}

fn t2_times() -> RelaxTimes {
    RelaxTimes::default_for(RelaxKind::T2)
}

fn mapping(times: &RelaxTimes, seed: u64) -> (MappingNet, ParamStore) {
    let net = MappingNet::new(MappingConfig::new(times, 3, 1)).unwrap();
    let params = net.init(seed);
    (net, params)
}

#[test]
fn relax_loss_gradient_on_small_stack() {
    for kind in [RelaxKind::T2, RelaxKind::T1] {
        let times = RelaxTimes::default_for(kind);
        let (net, params) = mapping(&times, 21);
        let x = positive(&[1, times.len(), 8, 8], 22);
        let r = grad_check(
            |g, x| {
                let m = params.bind(g, false);
                lift(loss_relax(g, x, &times, &net, &m))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(r.passes(REL, FLOOR), "{kind}: {}", r.max_rel);
    }
}

#[test]
fn total_loss_gradient_in_the_estimate() {
    let times = t2_times();
    let (net, params) = mapping(&times, 23);
    let target: Vec<Array2<f64>> = (0..3).map(|t| image(12, 12, 24 + t)).collect();
    let x = positive(&[1, 3, 12, 12], 27);
    let w = LossWeights::default();
    let r = grad_check(
        |g, x| {
            let m = params.bind(g, false);
            let gd = Guidance { net: &net, params: &m, times: &times, input_scale: 1.3 };
            lift(loss_total(g, x, &target, &w, Some(&gd)))
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "{}", r.max_rel);
}

/// 16×16, two coils, three baselines, two unrolled layers.
fn toy_problem(seed: u64) -> (Vec<MultiCoil>, SamplingMask, SensitivityMaps, Vec<Array2<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, nc) = (16, 2);
    let sens = ndarray::Array3::from_shape_fn((nc, n, n), |(c, i, j)| {
        C64::from_polar(1.0 + 0.3 * c as f64 + 0.02 * (i + j) as f64, 0.1 * (i as f64 - j as f64 * c as f64))
    });
    let sens = SensitivityMaps::new(sens).unwrap().normalized(1e-12);
    let mask = qmri_core::phantom::make_mask(n, 3, 4, seed).unwrap();
    let y: Vec<MultiCoil> = (0..3)
        .map(|_| {
            MultiCoil::new(ndarray::Array3::from_shape_fn((nc, n, n), |_| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }))
            .unwrap()
        })
        .collect();
    let target = (0..3).map(|t| image(n, n, seed + 100 + t)).collect();
    (y, mask, sens, target)
}

/// Random output layers, so every weight influences the loss.
fn wake(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().cloned().collect();
    for n in names {
        let t = store.get_mut(&n).unwrap();
        if n.contains(".out.") || n.ends_with(".b") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
}

#[test]
fn end_to_end_parameter_gradient() {
    let (y, mask, sens, target) = toy_problem(31);
    let times = t2_times();
    let (mnet, mparams) = mapping(&times, 32);
    for reg in [RegularizerKind::UNet, RegularizerKind::ConvGru] {
        let cfg = VarNetConfig {
            unrolled_layers: 2,
            regularizer: reg,
            alpha_init: 0.8,
            shared_weights: false,
            base_filters: 3,
            pooling_levels: 1,
            refiner: Some(RefinerConfig { base_filters: 2, pooling_levels: 1 }),
        };
        let net = VarNet::new(cfg, 3).unwrap();
        let mut params = net.init(33);
        wake(&mut params, 34);
        let prep = Prepared::new(&y, &mask, &sens).unwrap();
        let scaled: Vec<Array2<f64>> = target.iter().map(|t| t / prep.scale).collect();
        let w = LossWeights::default();
        let coords: Vec<(String, usize)> =
            params.iter().flat_map(|(k, v)| (0..v.len()).step_by(11).map(move |i| (k.clone(), i))).collect();
        let r = grad_check_params(
            |g, p| {
                let fwd = lift(net.forward(g, p, &prep))?;
                let m = mparams.bind(g, false);
                let gd = Guidance { net: &mnet, params: &m, times: &times, input_scale: 1.0 };
                lift(loss_total(g, fwd.magnitude, &scaled, &w, Some(&gd)))
            },
            &params,
            &coords,
            1e-6,
        )
        .unwrap();
        let bad = r
            .analytic
            .iter()
            .zip(&r.numeric)
            .filter(|(a, n)| (*a - *n).abs() > 1e-6 && (*a - *n).abs() > 1e-3 * a.abs().max(n.abs()))
            .count();
        assert!(r.passes(1e-3, 1e-6), "{reg}: {bad} of {} coordinates off, max rel {}", r.checked, r.max_rel);
        // every kind of weight is exercised
        for prefix in ["alpha", "refiner", if reg == RegularizerKind::UNet { "reg" } else { "gru" }] {
            let hit = coords.iter().zip(&r.analytic).any(|((n, _), a)| n.starts_with(prefix) && a.abs() > 0.0);
            assert!(hit, "{reg}: no gradient reaches {prefix}");
        }
    }
}

#[test]
fn identical_inputs_are_stationary_for_recon_and_consistency_terms() {
    let times = t2_times();
    let (net, params) = mapping(&times, 41);
    let target: Vec<Array2<f64>> = (0..3).map(|t| image(12, 12, 42 + t)).collect();
    let x = Tensor::new(vec![1, 3, 12, 12], target.iter().flat_map(|a| a.iter().copied()).collect()).unwrap();
    // L1 has a kink at 0, so compare one-sided: the γ2 (SSIM) and γ4 terms
    // contribute zero gradient; check SSIM analytically and γ4 by symmetry.
    let w = LossWeights { gamma1: 0.0, gamma2: 1.0, gamma3: 0.0, gamma4: 0.0 };
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let l = loss_total(&mut g, v, &target, &w, None).unwrap();
    assert!(g.value(l).item().abs() < 1e-12);
    g.backward(l).unwrap();
    let grad = g.grad(v).unwrap();
    assert!(grad.data().iter().all(|d| d.abs() < 1e-10), "SSIM term not stationary");

    let w = LossWeights { gamma1: 0.0, gamma2: 0.0, gamma3: 0.0, gamma4: 1.0 };
    let mut g = Graph::new();
    let v = g.leaf(x);
    let m = params.bind(&mut g, false);
    let gd = Guidance { net: &net, params: &m, times: &times, input_scale: 1.0 };
    let l = loss_total(&mut g, v, &target, &w, Some(&gd)).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}
