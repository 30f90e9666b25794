//! Corrupts a beam with each noise model and fits distribution families to
//! the background residuals.
//!
//! ```text
//! cargo run --release --example noise_models
//! ```

use beamdip::synth::{add_noise, fit_noise_distribution, generate_beam, BeamSpec, NoiseFamily, NoiseModel, NoiseSpec};

fn main() -> beamdip::Result<()> {
    let spec = BeamSpec::new(1.0, 0.0, 1.0)?.with_grid(96, 96, 6.0);
    let (clean, _) = generate_beam(&spec)?;
    let models = [
        NoiseModel::GaussianAdditive { mean: 0.0, std: 0.05 },
        NoiseModel::UniformAdditive { half_width: 0.08 },
        NoiseModel::Poisson { scale: 0.01 },
    ];
    let families = [NoiseFamily::Gaussian, NoiseFamily::Uniform, NoiseFamily::Poisson];
    for model in models {
        let noisy = add_noise(&clean, &NoiseSpec { model, seed: 7 })?;
        // Pixels where the clean beam is negligible carry only noise.
        let residual: Vec<f64> = noisy
            .intensities
            .iter()
            .zip(clean.intensities.iter())
            .filter(|(_, &c)| c < 1e-6)
            .map(|(n, c)| n - c)
            .collect();
        println!("{model:?}: {} background pixels", residual.len());
        for family in families {
            match fit_noise_distribution(&residual, family) {
                Ok(fit) => println!("  {family:?}: chi2 {:.1} over {} bins, {:?}", fit.chi_square, fit.bins, fit.distribution),
                Err(e) => println!("  {family:?}: {e}"),
            }
        }
    }
    Ok(())
}
