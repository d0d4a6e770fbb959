use qmri_recon::benchmark::{run_benchmark, BenchmarkConfig};

fn main() {
    let cfg = BenchmarkConfig::toy();
    let report = run_benchmark(&cfg).expect("benchmark");
    let m = &report.mapping;
    println!(
        "mapping: loss {:.4} -> {:.4}, T2 median rel err {:?}, {:.1}s",
        m.losses[0],
        m.losses[m.losses.len() - 1],
        m.t2_median_rel_error,
        m.elapsed.as_secs_f64()
    );
    for r in &report.runs {
        println!(
            "R={:2} guided={:5}: zero-filled {:.2} dB, trained {:.2} dB, map NMSE {:.4e}, first/last loss {:.4}/{:.4}, {:.1}s",
            r.acceleration,
            r.weights.uses_mapping(),
            r.zero_filled_psnr,
            r.trained_psnr,
            r.map_nmse,
            r.logs[0].loss,
            r.logs[r.logs.len() - 1].loss,
            r.elapsed.as_secs_f64()
        );
    }
    println!("total {:.1}s", report.elapsed.as_secs_f64());
}
