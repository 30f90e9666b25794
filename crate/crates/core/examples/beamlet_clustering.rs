//! Separates two beamlets with DBSCAN, HDBSCAN and a two-component mixture.
//!
//! ```text
//! cargo run --release --example beamlet_clustering
//! ```

use beamdip::clustering::{dbscan, gmm_fit, hdbscan, PointCloud};
use beamdip::image_io::ScanImage;
use beamdip::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};

fn main() -> beamdip::Result<()> {
    let a = BeamSpec::new(0.3, 0.0, 1.0)?.with_grid(80, 80, 10.0);
    let mut b = a;
    b.center = (1.8, 0.9);
    let (img_a, _) = generate_beam(&a)?;
    let (img_b, _) = generate_beam(&b)?;
    let sum = &img_a.intensities + &img_b.intensities;
    let img = add_noise(&ScanImage::new(img_a.axes, sum, "two beamlets")?, &NoiseSpec::gaussian(0.01, 1))?;

    let floor = 0.1 * img.max();
    let cloud = PointCloud::from_image(&img, floor);
    let pitch = img.axes.x_step.max(img.axes.xp_step);
    let db = dbscan(&cloud, 2.0 * pitch, 8)?;
    let hd = hdbscan(&cloud, 25)?;
    println!("{} points above {floor:.3}", cloud.len());
    println!("dbscan: {} clusters {:?}, {} noise", db.k, db.sizes(), db.noise_count());
    println!("hdbscan: {} clusters {:?}, {} noise", hd.k, hd.sizes(), hd.noise_count());

    let gmm = gmm_fit(&cloud, 2, 0)?;
    for (w, m) in gmm.weights.iter().zip(&gmm.means) {
        println!("gmm component: weight {w:.3}, mean ({:.3}, {:.3})", m[0], m[1]);
    }
    println!("log-likelihood over {} EM steps: {:.2} -> {:.2}", gmm.log_likelihood.len(), gmm.log_likelihood[0], gmm.log_likelihood.last().unwrap());
    Ok(())
}
