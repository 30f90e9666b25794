//! Command-line surface: configuration, batch orchestration and file output.
//!
//! Every run writes `summary.json` into the output directory, even when some
//! images fail. Exit codes are 0 on success, 1 when any item failed and 2
//! for an invalid configuration.

mod align;
mod benchmark;
pub mod config;
mod report;
mod runners;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

pub use align::{align_sample, area_optimum, AlignReport, AreaOptimum};
pub use benchmark::{benchmark_cells, benchmark_csv, run_cell, BenchmarkCell, BenchmarkRow, BENCHMARK_COLUMNS};
pub use config::{AlignConfig, AnalysisConfig, BeamParams, BenchmarkConfig, Command, ExportFlags, RunConfig};
pub use report::{ItemSummary, RunSummary, SCHEMA_VERSION};
pub use runners::{denoise_sample, load_sample, synthetic_sample, Denoised, Sample};

use crate::error::{Error, Result};
use report::{OutDir, Timer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CommandArg {
    Denoise,
    Align,
    Benchmark,
    Triage,
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskModeArg {
    Random,
    Kfold,
}

/// Deep-image-prior denoising and emittance analysis of phase-space scans.
#[derive(Debug, Parser)]
#[command(name = "beamdip", version)]
pub struct Cli {
    #[arg(value_enum)]
    command: CommandArg,
    /// Flat `key=value` config file with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid files or directories; omit to use the configured synthetic beam.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds the network, its input field, the masks and synthetic noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Images processed concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    /// Iteration cap of every training run.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Train to the cap and keep the final output.
    #[arg(long)]
    no_es: bool,
    #[arg(long)]
    export_snapshots: bool,
    #[arg(long, value_enum)]
    mask_mode: Option<MaskModeArg>,
    #[arg(long)]
    kfold_k: Option<usize>,
    /// Any config key, e.g. `--set train.lr=0.005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let command = match self.command {
            CommandArg::Denoise => Command::Denoise,
            CommandArg::Align => Command::Align,
            CommandArg::Benchmark => Command::Benchmark,
            CommandArg::Triage => Command::Triage,
            CommandArg::Synth => Command::Synth,
        };
        let mut cfg = RunConfig::new(command);
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.command = command;
        if !self.input.is_empty() {
            cfg.inputs = self.input.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(n) = self.max_iters {
            cfg.train.max_iters = n;
            cfg.align.max_iters = n;
            cfg.benchmark.max_iters = n;
        }
        if self.no_es {
            cfg.train.es.enabled = false;
        }
        if self.export_snapshots {
            cfg.export.snapshots = true;
        }
        if let Some(m) = self.mask_mode {
            cfg.train.mask_mode = match m {
                MaskModeArg::Random => crate::dipnet::MaskMode::Random,
                MaskModeArg::Kfold => crate::dipnet::MaskMode::Kfold,
            };
        }
        if let Some(k) = self.kfold_k {
            cfg.train.kfold_k = k;
        }
        Ok(cfg)
    }
}

/// Runs the configured command. Item failures are recorded, not returned.
pub fn run(cfg: &RunConfig) -> RunSummary {
    let timer = Timer::start();
    let mut summary = RunSummary::new(cfg);
    let result = OutDir::create(&cfg.out).and_then(|mut out| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| match cfg.command {
            Command::Denoise => denoise(cfg, &mut summary),
            Command::Align => align(cfg, &mut summary),
            Command::Benchmark => bench(cfg, &mut out, &mut summary),
            Command::Triage => triage(cfg, &mut out, &mut summary),
            Command::Synth => synth(cfg, &mut out, &mut summary),
        })?;
        summary.outputs.extend(out.written);
        Ok(())
    });
    if let Err(e) = result {
        summary.error = Some(e.to_string());
    }
    summary.outputs.push("summary.json".into());
    summary.wall_seconds = timer.seconds();
    if let Err(e) = summary.write(&cfg.out.join("summary.json")) {
        summary.error.get_or_insert(e.to_string());
    }
    summary
}

fn with_command(cfg: &RunConfig, command: Command) -> RunSummary {
    let mut cfg = cfg.clone();
    cfg.command = command;
    run(&cfg)
}

pub fn run_denoise(cfg: &RunConfig) -> RunSummary {
    with_command(cfg, Command::Denoise)
}

pub fn run_align(cfg: &RunConfig) -> RunSummary {
    with_command(cfg, Command::Align)
}

pub fn run_benchmark(cfg: &RunConfig) -> RunSummary {
    with_command(cfg, Command::Benchmark)
}

pub fn run_triage(cfg: &RunConfig) -> RunSummary {
    with_command(cfg, Command::Triage)
}

pub fn run_synth(cfg: &RunConfig) -> RunSummary {
    with_command(cfg, Command::Synth)
}

fn denoise(cfg: &RunConfig, summary: &mut RunSummary) -> Result<()> {
    let sources = runners::sources(cfg)?;
    summary.items = sources
        .par_iter()
        .map(|(id, src)| runners::denoise_item(cfg, id, src))
        .collect();
    Ok(())
}

fn align(cfg: &RunConfig, summary: &mut RunSummary) -> Result<()> {
    let sources = runners::sources(cfg)?;
    summary.items = sources
        .par_iter()
        .map(|(id, src)| align::align_item(cfg, id, src))
        .collect();
    Ok(())
}

fn bench(cfg: &RunConfig, out: &mut OutDir, summary: &mut RunSummary) -> Result<()> {
    let rows: Vec<BenchmarkRow> = benchmark_cells(cfg)
        .into_par_iter()
        .map(|c| run_cell(c, cfg))
        .collect();
    out.write("benchmark.csv", benchmark_csv(&rows))?;
    summary.items = rows
        .iter()
        .map(|r| {
            let c = r.cell;
            ItemSummary {
                id: format!("e{}_p{}_g{}_n{}", c.emittance_factor, c.peak_factor, c.grid, c.noise_std),
                ok: r.error.is_none(),
                error: r.error.clone(),
                wall_seconds: r.wall_seconds,
                outputs: Vec::new(),
                metrics: serde_json::to_value(r).expect("row serializes"),
            }
        })
        .collect();
    Ok(())
}

fn triage(cfg: &RunConfig, out: &mut OutDir, summary: &mut RunSummary) -> Result<()> {
    let files = runners::list_inputs(cfg, true)?;
    let rows: Vec<_> = files
        .par_iter()
        .map(|f| {
            let (d, detail) = runners::triage_file(f, cfg);
            (f.clone(), d, detail)
        })
        .collect();
    out.write("manifest.csv", runners::triage_manifest(&rows))?;
    let mut copy_dir = None;
    for (path, decision, detail) in &rows {
        let mut item = ItemSummary {
            id: path.display().to_string(),
            ok: true,
            error: None,
            wall_seconds: 0.0,
            outputs: Vec::new(),
            metrics: json!({ "decision": decision, "detail": detail }),
        };
        if cfg.triage.copy_accepted && *decision == crate::image_io::TriageDecision::Accept {
            let dir = match &copy_dir {
                Some(d) => d,
                None => copy_dir.insert(out.sub("accepted")?),
            };
            let name = path.file_name().map(PathBuf::from).unwrap_or_default();
            let dest = dir.root.join(&name);
            match std::fs::copy(path, &dest) {
                Ok(_) => item.outputs.push(format!("accepted/{}", name.display())),
                Err(e) => {
                    item.ok = false;
                    item.error = Some(Error::io(&dest, e).to_string());
                }
            }
        }
        summary.items.push(item);
    }
    Ok(())
}

fn synth(cfg: &RunConfig, out: &mut OutDir, summary: &mut RunSummary) -> Result<()> {
    let timer = Timer::start();
    let before = out.written.len();
    let item = match runners::synth_item(cfg, out) {
        Ok(metrics) => ItemSummary {
            id: "synthetic".into(),
            ok: true,
            error: None,
            wall_seconds: timer.seconds(),
            outputs: out.written[before..].to_vec(),
            metrics,
        },
        Err(e) => ItemSummary::failed("synthetic", &e, timer.seconds()),
    };
    summary.items.push(item);
    Ok(())
}

/// Parses arguments, runs, reports and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let cfg = match cli.resolve().and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.out) {
        eprintln!("error: output directory {} is not writable: {e}", cfg.out.display());
        return EXIT_INVALID;
    }
    let summary = run(&cfg);
    for item in &summary.items {
        match &item.error {
            None => eprintln!("{} {}: ok ({:.1} s)", summary.command, item.id, item.wall_seconds),
            Some(e) => eprintln!("{} {}: FAILED: {e}", summary.command, item.id),
        }
    }
    if let Some(e) = &summary.error {
        eprintln!("{}: FAILED: {e}", summary.command);
    }
    eprintln!("summary: {}", cfg.out.join("summary.json").display());
    if summary.failures() == 0 {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}
