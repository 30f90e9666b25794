//! Drives the stopping automaton by hand, then lets it stop a real run.
//!
//! ```text
//! cargo run --release --example early_stopping
//! ```

use beamdip::dipnet::{train, TrainConfig};
use beamdip::image_io::normalize;
use beamdip::stopping::{Decision, EsConfig, StopState, StopTrigger};
use beamdip::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};

fn main() -> beamdip::Result<()> {
    // Variance peaks at evaluation 20 and the validation loss bottoms out at 30.
    let mut state = StopState::new(EsConfig {
        patience: 10,
        ..EsConfig::default()
    });
    for e in 1..=200usize {
        let variance = 1.0 / (1.0 + ((e as f64 - 20.0) / 5.0).powi(2));
        let pvl = 1.0 + ((e as f64 - 30.0) / 10.0).powi(2) * 0.01;
        if let Decision::Stop(t) = state.patience_step(variance, pvl, e * 10, 2000).decision {
            println!("stopped by {t:?} at iteration {}", e * 10);
            break;
        }
    }
    let r = state.report(StopTrigger::Hybrid);
    println!("best {} variance peak {:?} gap {:?}", r.best_iter, r.emv_peak_iter, r.relative_gap);

    let spec = BeamSpec::new(1.0, -0.5, 2.0)?.with_grid(64, 64, 6.0);
    let (clean, _) = generate_beam(&spec)?;
    let noisy = normalize(&add_noise(&clean, &NoiseSpec::gaussian(0.05, 2))?);
    let out = train(&noisy, &TrainConfig::default(), Some(&clean))?;
    println!(
        "training: {:?} at {}, best snapshot {}, PSNR peak at {:?}",
        out.report.trigger,
        out.report.stop_iter,
        out.report.best_iter,
        out.log.psnr_peak().map(|r| r.iteration)
    );
    Ok(())
}
