//! Flat `key=value` configuration with dotted keys.
//!
//! Resolution order is defaults, then the config file, then command-line
//! overrides; later assignments win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dipnet::{MaskMode, TrainConfig};
use crate::error::{Error, Result};
use crate::image_io::TriagePolicy;
use crate::stopping::{HybridRule, VarianceMode};
use crate::synth::{BeamSpec, NoiseModel, NoiseSpec};

/// Environment variable that relative input paths are resolved against.
pub const DATA_ROOT_ENV: &str = "BEAMDIP_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Denoise,
    Align,
    Benchmark,
    Triage,
    Synth,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Denoise => "denoise",
            Command::Align => "align",
            Command::Benchmark => "benchmark",
            Command::Triage => "triage",
            Command::Synth => "synth",
        }
    }
}

/// Parameters of the synthetic beam; the grid spans ±`n_sigma` RMS sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub emittance: f64,
    pub alpha: f64,
    pub beta: f64,
    pub peak: f64,
    pub halo_ratio: f64,
    pub halo_scale: f64,
    pub rows: usize,
    pub cols: usize,
    pub n_sigma: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams {
            emittance: 1.0,
            alpha: -0.5,
            beta: 2.0,
            peak: 1.0,
            halo_ratio: 0.0,
            halo_scale: 2.5,
            rows: 128,
            cols: 128,
            n_sigma: 6.0,
        }
    }
}

impl BeamParams {
    pub fn spec(&self) -> Result<BeamSpec> {
        let spec = BeamSpec::new(self.emittance, self.alpha, self.beta)?
            .with_grid(self.rows, self.cols, self.n_sigma)
            .with_peak(self.peak)
            .with_halo(self.halo_ratio, self.halo_scale);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportFlags {
    pub snapshots: bool,
    pub snapshot_every: usize,
    pub heatmaps: bool,
    pub profiles: bool,
    pub contours: bool,
    pub clusters: bool,
}

impl Default for ExportFlags {
    fn default() -> Self {
        ExportFlags {
            snapshots: false,
            snapshot_every: 100,
            heatmaps: true,
            profiles: false,
            contours: false,
            clusters: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Emittance is measured on the connected core above this fraction of
    /// the peak.
    pub core_fraction: f64,
    /// Contours are drawn at 1..=`contour_sigmas` σ.
    pub contour_sigmas: usize,
    pub contour_points: usize,
    pub profile_bins: usize,
    pub profile_r_max: f64,
    /// Pixels below this fraction of the peak are left out of the cloud.
    pub cluster_floor: f64,
    /// In pixel pitches.
    pub cluster_eps: f64,
    pub cluster_min_pts: usize,
    pub cluster_min_size: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            core_fraction: 0.01,
            contour_sigmas: 3,
            contour_points: 128,
            profile_bins: 40,
            profile_r_max: 8.0,
            cluster_floor: 0.05,
            cluster_eps: 2.0,
            cluster_min_pts: 8,
            cluster_min_size: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Iteration cap of the run without early stopping.
    pub max_iters: usize,
    /// Centered moving-average window over the beam-area trace, in
    /// evaluations.
    pub smooth_window: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            max_iters: 2000,
            smooth_window: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub emittance_factors: Vec<f64>,
    pub peak_factors: Vec<f64>,
    pub grids: Vec<usize>,
    pub noise_stds: Vec<f64>,
    /// Iteration cap per cell.
    pub max_iters: usize,
    pub median_size: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            emittance_factors: vec![0.5, 1.0, 2.0],
            peak_factors: vec![0.5, 1.0, 2.0],
            grids: vec![64, 128, 256],
            noise_stds: vec![0.02, 0.05, 0.1],
            max_iters: 2000,
            median_size: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriageConfig {
    pub policy: TriagePolicy,
    pub copy_accepted: bool,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig {
            policy: TriagePolicy::default(),
            copy_accepted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    /// Grid files or directories; empty means a synthetic beam.
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
    pub train: TrainConfig,
    pub beam: BeamParams,
    pub noise: NoiseSpec,
    pub export: ExportFlags,
    pub analysis: AnalysisConfig,
    pub align: AlignConfig,
    pub benchmark: BenchmarkConfig,
    pub triage: TriageConfig,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            inputs: Vec::new(),
            out: PathBuf::from("out"),
            jobs: 1,
            train: TrainConfig::default(),
            beam: BeamParams::default(),
            noise: NoiseSpec::gaussian(0.05, 0),
            export: ExportFlags::default(),
            analysis: AnalysisConfig::default(),
            align: AlignConfig::default(),
            benchmark: BenchmarkConfig::default(),
            triage: TriageConfig::default(),
        }
    }

    /// Applies every `key=value` line of `text`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Assigns one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "command" => self.command = parse_command(value)?,
            "input" => self.inputs = list(value).into_iter().map(PathBuf::from).collect(),
            "out" => self.out = PathBuf::from(value),
            "jobs" => self.jobs = num(key, value)?,
            "seed" => {
                let s = num(key, value)?;
                t.seed = s;
                t.net.seed = s;
                self.noise.seed = s;
            }

            "train.max_iters" => t.max_iters = num(key, value)?,
            "train.lr" => t.lr = num(key, value)?,
            "train.reg_noise_std" => t.reg_noise_std = num(key, value)?,
            "train.weight_floor" => t.weight_floor = num(key, value)?,
            "train.mask_mode" => t.mask_mode = parse_mask_mode(value)?,
            "train.mask_fraction" => t.mask_fraction = num(key, value)?,
            "train.kfold_k" => t.kfold_k = num(key, value)?,
            "train.metric_interval" => t.metric_interval = num(key, value)?,
            "train.area_fraction" => t.area_fraction = num(key, value)?,
            "train.eval_clean_input" => t.eval_clean_input = flag(key, value)?,
            "train.seed" => t.seed = num(key, value)?,

            "loss.w_mse" => t.loss_weights.w_mse = num(key, value)?,
            "loss.w_mae" => t.loss_weights.w_mae = num(key, value)?,
            "loss.w_tv" => t.loss_weights.w_tv = num(key, value)?,
            "loss.w_gd" => t.loss_weights.w_gd = num(key, value)?,

            "es.enabled" => t.es.enabled = flag(key, value)?,
            "es.mode" => {
                t.es.mode = match value.to_ascii_lowercase().as_str() {
                    "emv" => VarianceMode::Emv,
                    "wmv" => VarianceMode::Wmv,
                    _ => return Err(bad(key, value)),
                }
            }
            "es.window" => t.es.window = num(key, value)?,
            "es.patience" => t.es.patience = num(key, value)?,
            "es.min_rel_improvement" => t.es.min_rel_improvement = num(key, value)?,
            "es.rule" => {
                t.es.rule = match value.to_ascii_lowercase().as_str() {
                    "both" => HybridRule::Both,
                    "either" => HybridRule::Either,
                    _ => return Err(bad(key, value)),
                }
            }

            "net.scales" => t.net.scales = num(key, value)?,
            "net.down_filters" => t.net.down_filters = num(key, value)?,
            "net.up_filters" => t.net.up_filters = num(key, value)?,
            "net.skip_filters" => t.net.skip_filters = num(key, value)?,
            "net.activation_slope" => t.net.activation_slope = num(key, value)?,
            "net.seed" => t.net.seed = num(key, value)?,

            "beam.emittance" => self.beam.emittance = num(key, value)?,
            "beam.alpha" => self.beam.alpha = num(key, value)?,
            "beam.beta" => self.beam.beta = num(key, value)?,
            "beam.peak" => self.beam.peak = num(key, value)?,
            "beam.halo_ratio" => self.beam.halo_ratio = num(key, value)?,
            "beam.halo_scale" => self.beam.halo_scale = num(key, value)?,
            "beam.rows" => self.beam.rows = num(key, value)?,
            "beam.cols" => self.beam.cols = num(key, value)?,
            "beam.size" => {
                let n = num(key, value)?;
                self.beam.rows = n;
                self.beam.cols = n;
            }
            "beam.n_sigma" => self.beam.n_sigma = num(key, value)?,

            "noise.model" => self.noise.model = noise_model(value, self.noise.model)?,
            "noise.std" => match &mut self.noise.model {
                NoiseModel::GaussianAdditive { std, .. } | NoiseModel::Speckle { std } => *std = num(key, value)?,
                _ => return Err(inapplicable(key, &self.noise.model)),
            },
            "noise.mean" => match &mut self.noise.model {
                NoiseModel::GaussianAdditive { mean, .. } => *mean = num(key, value)?,
                _ => return Err(inapplicable(key, &self.noise.model)),
            },
            "noise.half_width" => match &mut self.noise.model {
                NoiseModel::UniformAdditive { half_width } => *half_width = num(key, value)?,
                _ => return Err(inapplicable(key, &self.noise.model)),
            },
            "noise.fraction" => match &mut self.noise.model {
                NoiseModel::SaltPepper { fraction } => *fraction = num(key, value)?,
                _ => return Err(inapplicable(key, &self.noise.model)),
            },
            "noise.scale" => match &mut self.noise.model {
                NoiseModel::Poisson { scale } => *scale = num(key, value)?,
                _ => return Err(inapplicable(key, &self.noise.model)),
            },
            "noise.seed" => self.noise.seed = num(key, value)?,

            "export.snapshots" => self.export.snapshots = flag(key, value)?,
            "export.snapshot_every" => self.export.snapshot_every = num(key, value)?,
            "export.heatmaps" => self.export.heatmaps = flag(key, value)?,
            "export.profiles" => self.export.profiles = flag(key, value)?,
            "export.contours" => self.export.contours = flag(key, value)?,
            "export.clusters" => self.export.clusters = flag(key, value)?,

            "analysis.core_fraction" => self.analysis.core_fraction = num(key, value)?,
            "analysis.contour_sigmas" => self.analysis.contour_sigmas = num(key, value)?,
            "analysis.contour_points" => self.analysis.contour_points = num(key, value)?,
            "analysis.profile_bins" => self.analysis.profile_bins = num(key, value)?,
            "analysis.profile_r_max" => self.analysis.profile_r_max = num(key, value)?,
            "analysis.cluster_floor" => self.analysis.cluster_floor = num(key, value)?,
            "analysis.cluster_eps" => self.analysis.cluster_eps = num(key, value)?,
            "analysis.cluster_min_pts" => self.analysis.cluster_min_pts = num(key, value)?,
            "analysis.cluster_min_size" => self.analysis.cluster_min_size = num(key, value)?,

            "align.max_iters" => self.align.max_iters = num(key, value)?,
            "align.smooth_window" => self.align.smooth_window = num(key, value)?,

            "benchmark.emittance_factors" => self.benchmark.emittance_factors = nums(key, value)?,
            "benchmark.peak_factors" => self.benchmark.peak_factors = nums(key, value)?,
            "benchmark.grids" => self.benchmark.grids = nums(key, value)?,
            "benchmark.noise_stds" => self.benchmark.noise_stds = nums(key, value)?,
            "benchmark.max_iters" => self.benchmark.max_iters = num(key, value)?,
            "benchmark.median_size" => self.benchmark.median_size = num(key, value)?,

            "triage.min_peak_to_median" => self.triage.policy.min_peak_to_median = num(key, value)?,
            "triage.max_centroid_offset" => self.triage.policy.max_centroid_offset = num(key, value)?,
            "triage.min_occupied" => self.triage.policy.min_occupied = num(key, value)?,
            "triage.occupied_fraction" => self.triage.policy.occupied_fraction = num(key, value)?,
            "triage.copy_accepted" => self.triage.copy_accepted = flag(key, value)?,

            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks everything that can be checked before touching any data.
    pub fn validate(&self) -> Result<()> {
        let invalid = |e: Error| match e {
            Error::InvalidConfig(_) => e,
            other => Error::InvalidConfig(other.to_string()),
        };
        self.train.validate().map_err(invalid)?;
        if self.jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be at least 1".into()));
        }
        if self.inputs.is_empty() {
            self.beam.spec().map_err(invalid)?;
            self.noise.validate().map_err(invalid)?;
        }
        if self.command == Command::Triage && self.inputs.is_empty() {
            return Err(Error::InvalidConfig("triage needs --input".into()));
        }
        for p in self.resolved_inputs() {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("input {} does not exist", p.display())));
            }
        }
        let a = &self.analysis;
        if !(0.0..1.0).contains(&a.core_fraction) || !(0.0..1.0).contains(&a.cluster_floor) {
            return Err(Error::InvalidConfig("analysis fractions must lie in [0, 1)".into()));
        }
        if a.contour_points < 8 || a.profile_bins < 4 || !(a.profile_r_max > 0.0) {
            return Err(Error::InvalidConfig(
                "need contour_points >= 8, profile_bins >= 4 and profile_r_max > 0".into(),
            ));
        }
        if !(a.cluster_eps > 0.0) || a.cluster_min_pts == 0 || a.cluster_min_size < 2 {
            return Err(Error::InvalidConfig(
                "need cluster eps > 0, min_pts >= 1 and min_size >= 2".into(),
            ));
        }
        if self.export.snapshot_every == 0 || self.align.max_iters == 0 || self.align.smooth_window == 0 {
            return Err(Error::InvalidConfig(
                "snapshot_every, align.max_iters and align.smooth_window must be at least 1".into(),
            ));
        }
        let b = &self.benchmark;
        if b.emittance_factors.is_empty() || b.peak_factors.is_empty() || b.grids.is_empty() || b.noise_stds.is_empty()
        {
            return Err(Error::InvalidConfig("benchmark sweep axes must be nonempty".into()));
        }
        if b.max_iters == 0 || b.median_size % 2 == 0 {
            return Err(Error::InvalidConfig("benchmark needs max_iters >= 1 and an odd median size".into()));
        }
        Ok(())
    }

    /// Inputs with relative paths resolved against `$BEAMDIP_DATA_ROOT`.
    pub fn resolved_inputs(&self) -> Vec<PathBuf> {
        let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        self.inputs
            .iter()
            .map(|p| match &root {
                Some(r) if p.is_relative() => r.join(p),
                _ => p.clone(),
            })
            .collect()
    }

    /// SHA-256 over everything that can change results. Output location
    /// and worker count are excluded.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.out = PathBuf::new();
        view.jobs = 0;
        let json = serde_json::to_string(&view).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::InvalidConfig(format!("invalid value {value:?} for {key}"))
}

fn inapplicable(key: &str, model: &NoiseModel) -> Error {
    Error::InvalidConfig(format!("{key} does not apply to noise model {model:?}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn nums<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    list(value).into_iter().map(|v| num(key, v)).collect()
}

fn list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

pub fn parse_command(value: &str) -> Result<Command> {
    Ok(match value.to_ascii_lowercase().as_str() {
        "denoise" => Command::Denoise,
        "align" => Command::Align,
        "benchmark" => Command::Benchmark,
        "triage" => Command::Triage,
        "synth" => Command::Synth,
        _ => return Err(bad("command", value)),
    })
}

pub fn parse_mask_mode(value: &str) -> Result<MaskMode> {
    match value.to_ascii_lowercase().as_str() {
        "random" => Ok(MaskMode::Random),
        "kfold" => Ok(MaskMode::Kfold),
        _ => Err(bad("train.mask_mode", value)),
    }
}

/// Switching models keeps the first parameter where it carries over.
fn noise_model(value: &str, current: NoiseModel) -> Result<NoiseModel> {
    let std = match current {
        NoiseModel::GaussianAdditive { std, .. } | NoiseModel::Speckle { std } => std,
        _ => 0.05,
    };
    Ok(match value.to_ascii_lowercase().as_str() {
        "gaussian" => NoiseModel::GaussianAdditive { mean: 0.0, std },
        "uniform" => NoiseModel::UniformAdditive { half_width: std * 3f64.sqrt() },
        "salt-pepper" => NoiseModel::SaltPepper { fraction: 0.01 },
        "speckle" => NoiseModel::Speckle { std },
        "poisson" => NoiseModel::Poisson { scale: 0.01 },
        _ => return Err(bad("noise.model", value)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_parsing() {
        let mut cfg = RunConfig::new(Command::Denoise);
        cfg.apply_text("# comment\ntrain.lr = 0.05\n\nseed=7\nes.enabled=false # inline\nbenchmark.grids=32, 64\n")
            .unwrap();
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!((cfg.train.seed, cfg.train.net.seed, cfg.noise.seed), (7, 7, 7));
        assert!(!cfg.train.es.enabled);
        assert_eq!(cfg.benchmark.grids, vec![32, 64]);
        cfg.set("train.lr", "0.01").unwrap();
        assert_eq!(cfg.train.lr, 0.01);
    }

    #[test]
    fn rejects_bad_keys_and_values() {
        let mut cfg = RunConfig::new(Command::Denoise);
        assert!(matches!(cfg.set("train.nope", "1"), Err(Error::InvalidConfig(_))));
        assert!(cfg.set("train.lr", "fast").is_err());
        assert!(cfg.set("es.enabled", "maybe").is_err());
        assert!(cfg.set("noise.fraction", "0.1").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
        cfg.set("train.mask_fraction", "0.7").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn noise_models() {
        let mut cfg = RunConfig::new(Command::Synth);
        cfg.set("noise.std", "0.1").unwrap();
        cfg.set("noise.model", "speckle").unwrap();
        assert_eq!(cfg.noise.model, NoiseModel::Speckle { std: 0.1 });
        cfg.set("noise.model", "salt-pepper").unwrap();
        cfg.set("noise.fraction", "0.2").unwrap();
        assert_eq!(cfg.noise.model, NoiseModel::SaltPepper { fraction: 0.2 });
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::new(Command::Denoise);
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        b.jobs = 4;
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.set("train.lr", "0.02").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn default_config_is_valid() {
        for c in [Command::Denoise, Command::Align, Command::Benchmark, Command::Synth] {
            RunConfig::new(c).validate().unwrap();
        }
        assert!(RunConfig::new(Command::Triage).validate().is_err());
    }
}
