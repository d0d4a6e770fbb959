use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex32;
use qmri_core::io::*;
use qmri_core::relaxometry::RelaxKind;
use qmri_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_container() -> Container {
    let mut c = Container::new();
    c.insert("a", NamedArray::f32(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, -0.0, 1e-40]).unwrap()).unwrap();
    let z = vec![Complex32::new(-0.0, 1.0), Complex32::new(f32::from_bits(1), -3.5)];
    c.insert("z", NamedArray::new(vec![2], ArrayData::C64(z)).unwrap()).unwrap();
    c
}

#[test]
fn f32_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.qmrd");
    let c = sample_container();
    write_container(&p, &c).unwrap();
    let back = read_container(&p).unwrap();
    let (ArrayData::F32(a), ArrayData::F32(b)) = (&c.get("a").unwrap().data, &back.get("a").unwrap().data) else {
        panic!()
    };
    assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(std::fs::read(&p).unwrap(), c.to_bytes());
    assert_eq!(back.get("a").unwrap().dims, vec![2, 3]);
}

#[test]
fn complex_round_trip_keeps_negative_zero_and_subnormals() {
    let c = sample_container();
    let back = Container::from_bytes(&c.to_bytes()).unwrap();
    let (ArrayData::C64(a), ArrayData::C64(b)) = (&c.get("z").unwrap().data, &back.get("z").unwrap().data) else {
        panic!()
    };
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.re.to_bits(), y.re.to_bits());
        assert_eq!(x.im.to_bits(), y.im.to_bits());
    }
    assert_eq!(back.to_bytes(), c.to_bytes());
}

#[test]
fn empty_container_is_header_only() {
    let b = Container::new().to_bytes();
    assert_eq!(b.len(), HEADER_LEN);
    assert_eq!(b, [b'Q', b'M', b'R', b'D', 1, 0, 0, 0]);
    assert!(Container::from_bytes(&b).unwrap().is_empty());
}

#[test]
fn corrupt_files_give_distinct_errors() {
    let good = sample_container().to_bytes();
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(Container::from_bytes(&bad), Err(Error::BadMagic(_))));
    let mut ver = good.clone();
    ver[4] = 2;
    assert!(matches!(Container::from_bytes(&ver), Err(Error::VersionMismatch(2))));
    assert!(matches!(Container::from_bytes(&good[..good.len() - 3]), Err(Error::LengthMismatch(_))));
    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(Container::from_bytes(&extra), Err(Error::LengthMismatch(_))));
    assert!(matches!(Container::from_bytes(&good[..3]), Err(Error::LengthMismatch(_))));
}

#[test]
fn missing_file_is_an_io_error_with_path() {
    let e = read_container("/nonexistent/dir/f.qmrd").unwrap_err();
    assert!(e.is_io());
    assert!(e.to_string().contains("/nonexistent/dir/f.qmrd"));
}

#[test]
fn duplicate_names_and_bad_lengths_are_rejected() {
    let mut c = sample_container();
    assert!(c.insert("a", NamedArray::scalar(1.0)).is_err());
    assert!(NamedArray::f32(vec![2, 2], vec![1.0]).is_err());
}

#[test]
fn conversions_round_trip() {
    let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.5);
    assert_eq!(NamedArray::from_real(&a).to_real2().unwrap(), a);
    let z = ArrayD::from_shape_fn(IxDyn(&[2, 2, 3]), |d| qmri_core::mri_ops::C64::new(d[0] as f64, -(d[2] as f64)));
    assert_eq!(NamedArray::from_complex(&z).to_complex().unwrap(), z);
    assert!(NamedArray::from_real(&a).to_complex().is_err());
    let stack = NamedArray::from_real_stack(&[a.clone(), a.clone() * 2.0]).unwrap();
    assert_eq!(stack.to_real_stack().unwrap()[1], a * 2.0);
}

#[test]
fn fuzzed_containers_never_panic() {
    let base = sample_container().to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut parsed = 0;
    for _ in 0..10_000 {
        let mut b = base.clone();
        for _ in 0..rng.random_range(1..6) {
            match rng.random_range(0..3) {
                0 => {
                    let i = rng.random_range(0..b.len());
                    b[i] ^= 1 << rng.random_range(0..8);
                }
                1 => {
                    let n = rng.random_range(0..b.len());
                    b.truncate(n);
                }
                _ => {
                    let i = rng.random_range(0..=b.len());
                    b.insert(i, rng.random());
                }
            }
            if b.is_empty() {
                break;
            }
        }
        if let Ok(c) = Container::from_bytes(&b) {
            parsed += 1;
            assert_eq!(Container::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
    assert!(parsed < 10_000);
}

#[test]
fn config_defaults_and_round_trip() {
    let d = RunConfig::default();
    assert_eq!((d.gamma1, d.gamma2, d.gamma3, d.gamma4), (0.2, 0.8, 0.01, 0.1));
    assert_eq!((d.map_lr, d.map_epochs, d.recon_lr, d.recon_epochs), (1e-4, 200, 1e-3, 400));
    assert_eq!(d.unrolled_layers, 10);
    let text = "# toy\nkind = T2\nnx = 32\nny = 32\nn_coils = 4\nacs_width = 6\ntimes = 0, 35, 55\nsnr = inf\nregularizer = convgru\n";
    let c = RunConfig::parse(text).unwrap();
    assert_eq!(c.kind, RelaxKind::T2);
    assert_eq!(c.regularizer, RegularizerKind::ConvGru);
    assert_eq!(c.times, vec![0.0, 35.0, 55.0]);
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    let full = RunConfig::default().to_text();
    let text_keys: Vec<&str> = full.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(text_keys, KEYS);
}

#[test]
fn config_rejects_bad_input() {
    for bad in [
        "colour = blue",
        "gamma1 = -0.1",
        "map_lr = 0",
        "recon_epochs = 0",
        "nx = 16\nny = 16\nacs_width = 16",
        "kind = T3",
        "kind = T2\nkind = T1",
        "no equals sign",
        "times = 10, 10, 20",
        "aug_probability = 2",
    ] {
        assert!(RunConfig::parse(bad).is_err(), "{bad}");
    }
    let e = RunConfig::parse("nx = 8\ncolour = 1").unwrap_err();
    assert!(matches!(e, Error::Config { line: 2, .. }));
}

#[test]
fn metrics_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    let rows = vec![
        MetricRow { dataset: "test".into(), acceleration: 4, slice: 0, psnr_db: 31.25, nmse: 0.0125, ssim: 0.9 },
        MetricRow { dataset: "test".into(), acceleration: 4, slice: 1, psnr_db: f64::INFINITY, nmse: 0.0, ssim: 1.0 },
    ];
    write_metrics_csv(&p, &rows).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with(METRIC_HEADER));
    assert!(!text.contains('\r'));
    assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
}

#[test]
fn pgm_windowing() {
    let img = Array2::from_shape_fn((10, 20), |(i, j)| (i * 20 + j) as f64);
    let b = pgm_bytes(&img);
    let header = b"P5\n20 10\n255\n";
    assert_eq!(&b[..header.len()], header);
    let px = &b[header.len()..];
    assert_eq!(px.len(), 200);
    assert_eq!(px[0], 0);
    // p99 of 0..199 is 197 (nearest rank)
    assert_eq!(px[197], 255);
    assert_eq!(px[199], 255);
    assert_eq!(px[100], (100.0f64 / 197.0 * 255.0).round() as u8);
    assert!(pgm_bytes(&Array2::zeros((2, 2))).ends_with(&[0, 0, 0, 0]));
}
