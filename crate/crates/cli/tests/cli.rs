use std::path::Path;

use qmri_cli::data::SliceFile;
use qmri_core::io::{parse_metrics_csv, read_container, RunConfig};

const CONFIG: &str = "\
kind = T2
nx = 16
ny = 16
n_coils = 2
acceleration = 4
acs_width = 4
seed = 3
n_train = 1
n_test = 2
unrolled_layers = 1
reg_base_filters = 2
refiner_base_filters = 2
map_base_filters = 4
map_pooling_levels = 1
map_epochs = 1
recon_epochs = 1
gamma3 = 0
gamma4 = 0
aug_probability = 1
";

fn qmri(args: &[&str]) -> i32 {
    qmri_cli::run(std::iter::once("qmri").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
    let code = qmri(&["simulate", "--config", s(&dir.path().join("run.cfg")), "--out", s(&dir.path().join("data"))]);
    assert_eq!(code, 0);
    dir
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(qmri(&["--help"]), 0);
    assert_eq!(qmri(&["--version"]), 0);
    assert_eq!(qmri(&[]), 1);
    assert_eq!(qmri(&["frobnicate"]), 1);
    assert_eq!(qmri(&["recon", "--input", "x", "--out", "y"]), 1);
    assert_eq!(qmri(&["fit", "--input", "x", "--out", "y", "--method", "spline"]), 1);
    assert_eq!(qmri(&["simulate", "--config", "/nonexistent/run.cfg", "--out", "/tmp/never"]), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "nx = 8\nunknown_key = 1\n").unwrap();
    assert_eq!(qmri(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]), 1);
    std::fs::write(&cfg, "gamma2 = -1\n").unwrap();
    assert_eq!(qmri(&["mask", "--config", s(&cfg), "--out", s(&dir.path().join("m.qmrd"))]), 1);
}

#[test]
fn simulate_writes_readable_slices() {
    let dir = simulated();
    let data = dir.path().join("data");
    for (split, n) in [("train", 1), ("test", 2)] {
        let files = qmri_cli::data::slice_files(&data.join(split)).unwrap();
        assert_eq!(files.len(), n);
        for f in &files {
            let slice = SliceFile::read(f).unwrap();
            assert_eq!(slice.kspace.len(), 3);
            assert_eq!(slice.mask.acceleration(), 4);
            assert!(qmri_cli::data::phantom_path(f).exists());
        }
    }
    let text = std::fs::read_to_string(data.join("config.txt")).unwrap();
    let (written, given) = (RunConfig::parse(&text).unwrap(), RunConfig::parse(CONFIG).unwrap());
    assert_eq!(written.to_text(), given.to_text());
    assert_eq!(written.relax_times().unwrap(), given.relax_times().unwrap());
}

#[test]
fn evaluating_the_targets_against_themselves_is_perfect() {
    let dir = simulated();
    let test = dir.path().join("data/test");
    let out = dir.path().join("m.csv");
    assert_eq!(qmri(&["eval", "--recon", s(&test), "--data", s(&test), "--out", s(&out)]), 0);
    let rows = parse_metrics_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!((r.dataset.as_str(), r.acceleration, r.slice), ("test", 4, i));
        assert_eq!(r.psnr_db, f64::INFINITY);
        assert_eq!(r.nmse, 0.0);
        assert!((r.ssim - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_filled_recon_fit_and_report() {
    let dir = simulated();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    assert_eq!(qmri(&["recon", "--input", &p("data/test"), "--zero-filled", "--out", &p("zf")]), 0);
    let c = read_container(p("zf/slice_001.qmrd")).unwrap();
    assert_eq!(c.require("magnitude").unwrap().dims, vec![3, 16, 16]);

    assert_eq!(qmri(&["eval", "--recon", &p("zf"), "--data", &p("data/test"), "--out", &p("zf.csv")]), 0);
    let rows = parse_metrics_csv(&std::fs::read_to_string(p("zf.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.psnr_db.is_finite() && r.nmse > 0.0 && r.ssim < 1.0));

    // least squares on the fully sampled targets recovers the phantom T2 closely
    assert_eq!(qmri(&["fit", "--input", &p("data/test"), "--method", "lm", "--out", &p("lm")]), 0);
    let args = ["eval", "--recon", &p("data/test"), "--data", &p("data/test"), "--maps", &p("lm")];
    assert_eq!(qmri(&[&args[..], &["--out", &p("maps.csv")]].concat()), 0);
    let rows = parse_metrics_csv(&std::fs::read_to_string(p("maps.csv")).unwrap()).unwrap();
    let maps: Vec<_> = rows.iter().filter(|r| r.dataset == "test_T2").collect();
    assert_eq!(maps.len(), 2);
    assert!(maps.iter().all(|r| r.nmse < 1e-6), "{maps:?}");

    assert_eq!(qmri(&["report", "--input", &p("lm/slice_000.qmrd"), "--out", &p("pgm")]), 0);
    for name in ["A.pgm", "T2.pgm", "flagged.pgm"] {
        let bytes = std::fs::read(Path::new(&p("pgm")).join(name)).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"), "{name}");
    }
    assert_eq!(qmri(&["fit", "--input", &p("zf"), "--method", "network", "--out", &p("n")]), 1);
}

#[test]
fn recon_training_without_guidance_needs_no_mapping_model() {
    let dir = simulated();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let cfg = dir.path().join("run.cfg");
    let train = ["train-recon", "--config", s(&cfg), "--data", &p("data"), "--out", &p("r.qmrd")];
    assert_eq!(qmri(&[&train[..], &["--log", &p("log.csv")]].concat()), 0);
    let log = std::fs::read_to_string(p("log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,val_psnr_db\n0,"));
    assert_eq!(qmri(&["recon", "--input", &p("data/test"), "--model", &p("r.qmrd"), "--out", &p("rec")]), 0);

    std::fs::write(&cfg, CONFIG.replace("gamma4 = 0", "gamma4 = 0.1")).unwrap();
    assert_eq!(qmri(&train), 1);
}

#[test]
fn mask_respects_the_seed() {
    let dir = simulated();
    let cfg = dir.path().join("run.cfg");
    let out = |n: &str| dir.path().join(n);
    assert_eq!(qmri(&["mask", "--config", s(&cfg), "--out", s(&out("a.qmrd"))]), 0);
    assert_eq!(qmri(&["mask", "--config", s(&cfg), "--out", s(&out("b.qmrd")), "--seed", "3"]), 0);
    assert_eq!(qmri(&["mask", "--config", s(&cfg), "--out", s(&out("c.qmrd")), "--seed", "4"]), 0);
    let read = |n: &str| std::fs::read(out(n)).unwrap();
    assert_eq!(read("a.qmrd"), read("b.qmrd"));
    let lines = read_container(out("c.qmrd")).unwrap().require("mask").unwrap().to_vec().unwrap();
    assert_eq!(lines.len(), 16);
    assert!(lines[6..10].iter().all(|&v| v == 1.0));
}
