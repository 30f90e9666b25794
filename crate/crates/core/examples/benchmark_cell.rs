//! One benchmark cell: DIP against a median filter and raw thresholding.
//!
//! ```text
//! cargo run --release --example benchmark_cell -- [emittance_factor] [noise_std]
//! ```

use beamdip::cli::{run_cell, BenchmarkCell, Command, RunConfig};

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cell = BenchmarkCell {
        emittance_factor: args.first().copied().unwrap_or(1.0),
        peak_factor: 1.0,
        grid: 64,
        noise_std: args.get(1).copied().unwrap_or(0.05),
    };
    let cfg = RunConfig::new(Command::Benchmark);
    let row = run_cell(cell, &cfg);
    if let Some(e) = &row.error {
        eprintln!("cell failed: {e}");
        std::process::exit(1);
    }
    let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
    println!("{} iterations, best {}", f(row.iterations.map(|i| i as f64)), f(row.best_iter.map(|i| i as f64)));
    println!("PSNR gain: median {} dB, DIP {} dB", f(row.gain_median()), f(row.gain_dip()));
    println!("emittance error: raw {}, median {}, DIP {}", f(row.err_raw()), f(row.err_median()), f(row.err_dip()));
}
