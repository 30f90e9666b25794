//! Denoise a synthetic beam and compare against the clean ground truth.
//!
//! ```text
//! cargo run --release --example denoise_synthetic -- [size] [iters] [seed]
//! ```

use std::time::Instant;

use beamdip::dipnet::{train, TrainConfig};
use beamdip::emittance::{compute_stats, core_stats};
use beamdip::image_io::normalize;
use beamdip::losses_metrics::psnr;
use beamdip::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};

fn main() -> beamdip::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let size = args.first().copied().unwrap_or(128);
    let iters = args.get(1).copied().unwrap_or(600);
    let seed = args.get(2).copied().unwrap_or(1) as u64;

    let spec = BeamSpec::new(1.0, -0.5, 2.0)?.with_grid(size, size, 6.0);
    let (clean, truth) = generate_beam(&spec)?;
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(0.05, seed))?;
    let input = normalize(&noisy);

    let cfg = TrainConfig {
        max_iters: iters,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&input, &cfg, Some(&clean))?;
    let secs = start.elapsed().as_secs_f64();
    let ran = out.loss_trace.len();

    let gt = input.normalize_like(&clean);
    let noisy_psnr = psnr(input.values.view(), gt.view())?;
    let restored_psnr = psnr(out.restored.values.view(), gt.view())?;
    let restored = input.to_physical(out.restored.values.view());

    let log_path = std::env::temp_dir().join("denoise_synthetic_log.csv");
    out.log.write_csv(&log_path)?;
    println!("training log: {}", log_path.display());
    println!("{size}x{size}: {ran} iterations in {secs:.1} s ({:.1} ms/iter)", 1e3 * secs / ran as f64);
    println!(
        "stop: {:?} at {}, best iteration {}, variance peak {:?}",
        out.report.trigger, out.report.stop_iter, out.report.best_iter, out.report.emv_peak_iter
    );
    if let Some(peak) = out.log.psnr_peak() {
        println!("PSNR peak {:.2} dB at iteration {}", peak.psnr.unwrap_or(f64::NAN), peak.iteration);
    }
    println!("PSNR noisy {noisy_psnr:.2} dB, restored {restored_psnr:.2} dB");
    println!(
        "emittance: truth {:.4}, noisy {:.4}, restored {:.4}, restored core {:.4}",
        truth.stats.emittance_rms,
        compute_stats(&noisy, None).map_or(f64::NAN, |s| s.emittance_rms),
        compute_stats(&restored, None).map_or(f64::NAN, |s| s.emittance_rms),
        core_stats(&restored, 0.01).map_or(f64::NAN, |s| s.emittance_rms),
    );
    Ok(())
}
