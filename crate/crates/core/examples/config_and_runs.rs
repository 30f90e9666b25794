//! Builds a run configuration from text and drives the batch runners that
//! back the command line.
//!
//! ```text
//! cargo run --release --example config_and_runs
//! ```

use beamdip::cli::{run_denoise, run_synth, Command, RunConfig};

fn main() -> beamdip::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = RunConfig::new(Command::Denoise);
    cfg.apply_text(
        "# small and quick\n\
         beam.size = 64\n\
         train.max_iters = 150\n\
         export.profiles = true\n\
         export.contours = true\n\
         seed = 4\n",
    )?;
    cfg.out = dir.path().to_path_buf();
    cfg.validate()?;
    println!("config hash {}", cfg.hash());

    let synth = run_synth(&cfg);
    println!("synth wrote {:?}", synth.outputs);
    let summary = run_denoise(&cfg);
    for item in &summary.items {
        println!("{}: ok={} in {:.1} s", item.id, item.ok, item.wall_seconds);
        println!("  psnr {} -> {}", item.metrics["psnr_noisy"], item.metrics["psnr_restored"]);
        println!("  {} files, e.g. {:?}", item.outputs.len(), &item.outputs[..3]);
    }
    Ok(())
}
