use qmri_nn::{grad_check, grad_check_params, Activation, ConvGru, Graph, NetworkConfig, ParamStore, Tensor, UNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Pushes values away from 0 so ReLU kinks are not straddled by the stencil.
fn away_from_zero(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v);
        }
    }
    t
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, y: qmri_nn::Var, seed: u64) -> qmri_nn::Result<qmri_nn::Var> {
    let w = g.constant(random(g.shape(y), seed));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn conv2d_input_gradient() {
    let w = random(&[3, 2, 3, 3], 1);
    let b = random(&[3], 2);
    let x = random(&[1, 2, 6, 6], 3);
    let r = grad_check(
        |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            let y = g.conv2d(x, w, Some(b))?;
            weighted_sum(g, y, 4)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(r.max_abs < 1e-5, "max abs deviation {}", r.max_abs);
    assert!(r.passes(REL, FLOOR));
}

#[test]
fn conv2d_weight_and_bias_gradient() {
    let x = random(&[2, 2, 5, 4], 5);
    let w = random(&[3, 2, 3, 3], 6);
    let b = random(&[3], 7);
    let rw = grad_check(
        |g, w| {
            let x = g.constant(x.clone());
            let b = g.constant(b.clone());
            let y = g.conv2d(x, w, Some(b))?;
            weighted_sum(g, y, 8)
        },
        &w,
        1e-4,
    )
    .unwrap();
    assert!(rw.passes(REL, FLOOR), "weight grad max rel {}", rw.max_rel);
    let rb = grad_check(
        |g, b| {
            let x = g.constant(x.clone());
            let w = g.constant(w.clone());
            let y = g.conv2d(x, w, Some(b))?;
            weighted_sum(g, y, 8)
        },
        &b,
        1e-4,
    )
    .unwrap();
    assert!(rb.passes(REL, FLOOR), "bias grad max rel {}", rb.max_rel);
}

#[test]
fn activations_gradient() {
    let x = away_from_zero(random(&[3, 4], 9));
    for kind in [Activation::Relu, Activation::Softplus, Activation::Sigmoid, Activation::Tanh] {
        let r = grad_check(
            |g, x| {
                let y = g.activation(x, kind);
                weighted_sum(g, y, 10)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_abs < 1e-5, "{kind:?}: {}", r.max_abs);
        assert!(r.passes(REL, FLOOR), "{kind:?}");
    }
}

#[test]
fn elementwise_gradient() {
    let a = random(&[2, 3], 11);
    let b = away_from_zero(random(&[2, 3], 12));
    let r = grad_check(
        |g, a| {
            let b = g.constant(b.clone());
            let q = g.div(a, b)?;
            let e = g.exp(q);
            let d = g.sub(e, a)?;
            let m = g.abs(d);
            let s = g.sqrt(m);
            let r = g.recip(b);
            let t = g.add(s, r)?;
            weighted_sum(g, t, 13)
        },
        &a,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "max rel {}", r.max_rel);

    let r = grad_check(
        |g, b| {
            let a = g.constant(a.clone());
            let q = g.div(a, b)?;
            let s = g.sum(b);
            let q = g.mul_scalar(q, s)?;
            Ok(g.mean(q))
        },
        &b,
        1e-6,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "max rel {}", r.max_rel);
}

#[test]
fn pool_upsample_filter_gradient() {
    let x = random(&[1, 2, 12, 12], 14);
    let kernel: Vec<f64> = (0..25).map(|i| 0.01 * (i as f64 + 1.0)).collect();
    let r = grad_check(
        |g, x| {
            let p = g.pool2(x)?;
            let u = g.upsample2(p)?;
            let f = g.filter_valid(u, &kernel, 5, 5)?;
            let sq = g.square(f);
            weighted_sum(g, sq, 15)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR), "max rel {}", r.max_rel);
}

#[test]
fn concat_slice_reshape_gradient() {
    let x = random(&[2, 3, 2, 2], 16);
    let r = grad_check(
        |g, x| {
            let a = g.slice_channels(x, 1, 2)?;
            let c = g.concat_channels(&[a, x])?;
            let c = g.reshape(c, &[2, 5, 4, 1])?;
            let t = g.tanh(c);
            weighted_sum(g, t, 17)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.passes(REL, FLOOR));
}

/// Closed-form parameter count for the U-Net layout: two 3×3 convs per
/// encoder level, two per decoder level fed by the concatenated skip, and a
/// final 1×1 projection.
fn unet_closed_form(cin: usize, cout: usize, f: usize, levels: usize) -> usize {
    let conv = |i: usize, o: usize, k: usize| k * k * i * o + o;
    let fl = |l: usize| f * (1 << l);
    let mut n = 0;
    for l in 0..=levels {
        let i = if l == 0 { cin } else { fl(l - 1) };
        n += conv(i, fl(l), 3) + conv(fl(l), fl(l), 3);
    }
    for l in 0..levels {
        n += conv(fl(l + 1) + fl(l), fl(l), 3) + conv(fl(l), fl(l), 3);
    }
    n + conv(fl(0), cout, 1)
}

#[test]
fn unet_parameter_count_matches_closed_form() {
    for &(cin, cout, f, levels) in &[(6, 3, 16, 1), (2, 2, 4, 1), (18, 18, 8, 2), (1, 1, 256, 1)] {
        let net = UNet::new(NetworkConfig::unet(cin, cout, f, levels), "u").unwrap();
        let mut store = ParamStore::new();
        net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), false);
        assert_eq!(store.numel(), unet_closed_form(cin, cout, f, levels), "{cin} {cout} {f} {levels}");
    }
}

#[test]
fn unet_output_shape_and_determinism() {
    let net = UNet::new(NetworkConfig::unet(3, 5, 4, 2), "u").unwrap();
    let mut store = ParamStore::new();
    net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3), false);
    let x = random(&[2, 3, 8, 12], 18);
    let run = || {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = net.forward(&mut g, &p, xv).unwrap();
        g.value(y).clone()
    };
    let a = run();
    assert_eq!(a.shape(), &[2, 5, 8, 12]);
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn unet_end_to_end_parameter_gradient() {
    let net = UNet::new(NetworkConfig::unet(2, 2, 2, 1), "u").unwrap();
    let mut store = ParamStore::new();
    net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(21), false);
    // nonzero biases so that every layer is exercised away from the ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let names: Vec<String> = store.names().cloned().collect();
    for n in &names {
        if n.ends_with(".b") {
            for v in store.get_mut(n).unwrap().data_mut() {
                *v = rng.random_range(0.05..0.2);
            }
        }
    }
    let x = random(&[1, 2, 8, 8], 23);
    let coords: Vec<(String, usize)> =
        store.iter().flat_map(|(k, v)| (0..v.len()).map(move |i| (k.clone(), i))).collect();
    let r = grad_check_params(
        |g, p| {
            let xv = g.constant(x.clone());
            let y = net.forward(g, p, xv)?;
            weighted_sum(g, y, 24)
        },
        &store,
        &coords,
        1e-5,
    )
    .unwrap();
    assert_eq!(r.checked, store.numel());
    assert!(r.passes(1e-4, 1e-6), "max abs {} max rel {}", r.max_abs, r.max_rel);
}

#[test]
fn conv_gru_three_step_gradient() {
    let cell = ConvGru::new(NetworkConfig::conv_gru(2, 2, 3), "g").unwrap();
    let mut store = ParamStore::new();
    cell.init(&mut store, &mut ChaCha8Rng::seed_from_u64(31), false);
    let x = random(&[1, 2, 5, 5], 32);
    let coords: Vec<(String, usize)> =
        store.iter().flat_map(|(k, v)| (0..v.len()).step_by(3).map(move |i| (k.clone(), i))).collect();
    let unrolled = |g: &mut Graph, p: &qmri_nn::Bound, x: qmri_nn::Var| -> qmri_nn::Result<qmri_nn::Var> {
        let mut h = g.constant(Tensor::zeros(vec![1, 3, 5, 5]));
        let mut acc = None;
        for _ in 0..3 {
            let (out, h2) = cell.step(g, p, x, h)?;
            h = h2;
            let s = weighted_sum(g, out, 33)?;
            acc = Some(match acc {
                None => s,
                Some(a) => g.add(a, s)?,
            });
        }
        let hs = weighted_sum(g, h, 34)?;
        g.add(acc.unwrap(), hs)
    };
    let r = grad_check_params(
        |g, p| {
            let xv = g.constant(x.clone());
            unrolled(g, p, xv)
        },
        &store,
        &coords,
        1e-5,
    )
    .unwrap();
    assert!(r.passes(1e-4, 1e-6), "max rel {}", r.max_rel);

    // and w.r.t. the input
    let rx = grad_check(
        |g, x| {
            let p2 = store.bind(g, false);
            unrolled(g, &p2, x)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rx.passes(1e-4, 1e-6), "max rel {}", rx.max_rel);
}

#[test]
fn conv_gru_preserves_hidden_shape() {
    let cell = ConvGru::new(NetworkConfig::conv_gru(4, 4, 6), "g").unwrap();
    let mut store = ParamStore::new();
    cell.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1), true);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(random(&[1, 4, 6, 6], 2));
    let mut h = g.constant(Tensor::zeros(vec![1, 6, 6, 6]));
    for _ in 0..4 {
        let (out, h2) = cell.step(&mut g, &p, x, h).unwrap();
        assert_eq!(g.shape(h2), &[1, 6, 6, 6]);
        assert_eq!(g.shape(out), &[1, 4, 6, 6]);
        h = h2;
    }
    let bad = g.constant(Tensor::zeros(vec![1, 5, 6, 6]));
    assert!(cell.step(&mut g, &p, x, bad).is_err());
}
