use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{cell, text_cell, Csv, Timer};
use super::runners::{denoise_sample, Sample};
use crate::emittance::core_stats;
use crate::error::Result;
use crate::image_io::{median_filter, GridFormat};
use crate::losses_metrics::psnr;
use crate::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub emittance_factor: f64,
    pub peak_factor: f64,
    pub grid: usize,
    pub noise_std: f64,
}

impl BenchmarkCell {
    /// The configured beam scaled by this cell. The physical window stays
    /// that of the unscaled beam, so a larger emittance covers more pixels.
    pub fn spec(&self, cfg: &RunConfig) -> Result<BeamSpec> {
        let b = &cfg.beam;
        let spec = BeamSpec::new(b.emittance * self.emittance_factor, b.alpha, b.beta)?
            .with_grid(self.grid, self.grid, b.n_sigma / self.emittance_factor.sqrt())
            .with_peak(b.peak * self.peak_factor)
            .with_halo(b.halo_ratio, b.halo_scale);
        spec.validate()?;
        Ok(spec)
    }
}

/// Every combination of the sweep axes, noise varying fastest.
pub fn benchmark_cells(cfg: &RunConfig) -> Vec<BenchmarkCell> {
    let b = &cfg.benchmark;
    let mut cells = Vec::new();
    for &emittance_factor in &b.emittance_factors {
        for &peak_factor in &b.peak_factors {
            for &grid in &b.grids {
                for &noise_std in &b.noise_stds {
                    cells.push(BenchmarkCell {
                        emittance_factor,
                        peak_factor,
                        grid,
                        noise_std,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub cell: BenchmarkCell,
    pub error: Option<String>,
    pub iterations: Option<usize>,
    pub best_iter: Option<usize>,
    pub psnr_noisy: Option<f64>,
    pub psnr_median: Option<f64>,
    pub psnr_dip: Option<f64>,
    pub emittance_true: Option<f64>,
    /// Connected-core estimate on the noisy grid.
    pub emittance_raw: Option<f64>,
    pub emittance_median: Option<f64>,
    pub emittance_dip: Option<f64>,
    pub wall_seconds: f64,
}

impl BenchmarkRow {
    pub fn gain_dip(&self) -> Option<f64> {
        Some(self.psnr_dip? - self.psnr_noisy?)
    }

    pub fn gain_median(&self) -> Option<f64> {
        Some(self.psnr_median? - self.psnr_noisy?)
    }

    fn rel_err(&self, est: Option<f64>) -> Option<f64> {
        let t = self.emittance_true?;
        Some((est? - t).abs() / t)
    }

    pub fn err_raw(&self) -> Option<f64> {
        self.rel_err(self.emittance_raw)
    }

    pub fn err_median(&self) -> Option<f64> {
        self.rel_err(self.emittance_median)
    }

    pub fn err_dip(&self) -> Option<f64> {
        self.rel_err(self.emittance_dip)
    }
}

/// Runs one cell. Failures are recorded in the row.
pub fn run_cell(cell: BenchmarkCell, cfg: &RunConfig) -> BenchmarkRow {
    let timer = Timer::start();
    let mut row = BenchmarkRow {
        cell,
        error: None,
        iterations: None,
        best_iter: None,
        psnr_noisy: None,
        psnr_median: None,
        psnr_dip: None,
        emittance_true: None,
        emittance_raw: None,
        emittance_median: None,
        emittance_dip: None,
        wall_seconds: 0.0,
    };
    if let Err(e) = fill_cell(&mut row, cfg) {
        row.error = Some(e.to_string());
    }
    row.wall_seconds = timer.seconds();
    row
}

fn fill_cell(row: &mut BenchmarkRow, cfg: &RunConfig) -> Result<()> {
    let (clean, truth) = generate_beam(&row.cell.spec(cfg)?)?;
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(row.cell.noise_std, cfg.noise.seed))?;
    row.emittance_true = Some(truth.stats.emittance_rms);
    let fraction = cfg.analysis.core_fraction;
    row.emittance_raw = core_stats(&noisy, fraction).ok().map(|s| s.emittance_rms);
    let median = median_filter(&noisy, cfg.benchmark.median_size)?;
    row.emittance_median = core_stats(&median, fraction).ok().map(|s| s.emittance_rms);

    let mut local = cfg.clone();
    local.train.max_iters = cfg.benchmark.max_iters;
    local.export.snapshots = false;
    let sample = Sample {
        id: "cell".into(),
        noisy,
        truth: Some(truth),
        format: GridFormat::Csv,
    };
    let d = denoise_sample(&sample, &local)?;
    let gt = d.normalized.normalize_like(&clean);
    row.psnr_noisy = d.psnr_noisy;
    row.psnr_dip = d.psnr_restored;
    row.psnr_median = Some(psnr(d.normalized.normalize_like(&median).view(), gt.view())?);
    row.emittance_dip = Some(d.stats.emittance_rms);
    row.iterations = d.outcome.log.records.last().map(|r| r.iteration);
    row.best_iter = Some(d.outcome.report.best_iter);
    Ok(())
}

pub const BENCHMARK_COLUMNS: [&str; 21] = [
    "emittance_factor",
    "peak_factor",
    "grid",
    "noise_std",
    "iterations",
    "best_iter",
    "psnr_noisy",
    "psnr_median",
    "psnr_dip",
    "gain_median",
    "gain_dip",
    "emittance_true",
    "emittance_raw",
    "emittance_median",
    "emittance_dip",
    "err_raw",
    "err_median",
    "err_dip",
    "wall_seconds",
    "status",
    "error",
];

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut csv = Csv::new(&BENCHMARK_COLUMNS);
    let int = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let c = r.cell;
        csv.row(&[
            cell(Some(c.emittance_factor)),
            cell(Some(c.peak_factor)),
            c.grid.to_string(),
            cell(Some(c.noise_std)),
            int(r.iterations),
            int(r.best_iter),
            cell(r.psnr_noisy),
            cell(r.psnr_median),
            cell(r.psnr_dip),
            cell(r.gain_median()),
            cell(r.gain_dip()),
            cell(r.emittance_true),
            cell(r.emittance_raw),
            cell(r.emittance_median),
            cell(r.emittance_dip),
            cell(r.err_raw()),
            cell(r.err_median()),
            cell(r.err_dip()),
            cell(Some(r.wall_seconds)),
            if r.error.is_none() { "ok" } else { "error" }.into(),
            text_cell(r.error.as_deref().unwrap_or("")),
        ]);
    }
    csv.finish()
}
