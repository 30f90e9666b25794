//! Writes a small mixed batch of scans and triages it.
//!
//! ```text
//! cargo run --release --example triage_batch
//! ```

use beamdip::cli::{run_triage, Command, RunConfig};
use beamdip::image_io::{save_scan, GridFormat};
use beamdip::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};

fn main() -> beamdip::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scans = dir.path().join("scans");
    std::fs::create_dir(&scans).expect("scan dir");
    let (clean, _) = generate_beam(&BeamSpec::new(1.0, 0.0, 1.0)?.with_grid(64, 64, 6.0))?;
    for i in 0..4 {
        let beam = add_noise(&clean, &NoiseSpec::gaussian(0.05, i))?;
        save_scan(&beam, scans.join(format!("beam_{i}.csv")), GridFormat::Csv)?;
        let empty = add_noise(&clean.with_intensities(clean.intensities.mapv(|_| 0.0)), &NoiseSpec::gaussian(0.05, 10 + i))?;
        save_scan(&empty, scans.join(format!("empty_{i}.dat")), GridFormat::Dat)?;
    }
    std::fs::write(scans.join("notes.txt"), "not a grid").expect("write");

    let mut cfg = RunConfig::new(Command::Triage);
    cfg.inputs = vec![scans];
    cfg.out = dir.path().join("out");
    let summary = run_triage(&cfg);
    print!("{}", std::fs::read_to_string(cfg.out.join("manifest.csv")).expect("manifest"));
    println!("{} files, {} failures", summary.items.len(), summary.failures());
    Ok(())
}
