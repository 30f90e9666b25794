//! Moments, Twiss parameters, contours and the radial profile of a synthetic beam.
//!
//! ```text
//! cargo run --release --example emittance_twiss
//! ```

use beamdip::emittance::{compute_stats, core_stats, ellipse_area, nsigma_contour, radial_profile, twiss, RadialFrame};
use beamdip::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};

fn main() -> beamdip::Result<()> {
    let spec = BeamSpec::new(1.5, -0.8, 3.0)?.with_grid(128, 128, 6.0);
    let (clean, truth) = generate_beam(&spec)?;
    let stats = compute_stats(&clean, None)?;
    let t = twiss(&stats)?;
    println!("emittance {:.4} (generated with {:.4})", stats.emittance_rms, spec.emittance);
    println!("alpha {:.4} beta {:.4} gamma {:.4}, det {:.2e}", t.alpha, t.beta, t.gamma, t.determinant() - 1.0);
    for n in 1..=3 {
        let pts = nsigma_contour(&t, stats.emittance_rms, n as f64, 8, (stats.mean_x, stats.mean_xp))?;
        println!("{n}-sigma ellipse area {:.3}, first point {:?}", ellipse_area(stats.emittance_rms, n as f64), pts[0]);
    }

    // Background noise inflates plain moments; the connected core does not care.
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(0.02, 3))?;
    let all = compute_stats(&noisy, None).map_or(f64::NAN, |s| s.emittance_rms);
    let core = core_stats(&noisy, 0.05)?.emittance_rms;
    println!("noisy grid: all pixels {all:.4}, connected core {core:.4}");

    let frame = RadialFrame::from_stats(&stats)?;
    let profile = radial_profile(&clean, &frame, 8, 4.0)?;
    for i in 0..profile.bins() {
        let r = profile.bin_center(i);
        println!(
            "r {r:.2}: mean {:.4} analytic {:.4} ({} px)",
            profile.mean[i].unwrap_or(f64::NAN),
            truth.analytic_profile(r),
            profile.counts[i]
        );
    }
    Ok(())
}
