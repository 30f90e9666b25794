use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{build_skip_net, perturb_input, sample_input_z, NetConfig, SkipNet};
use crate::autodiff::{Adam, Graph, Tensor};
use crate::emittance::beam_area_metric;
use crate::error::{Error, Result};
use crate::image_io::{NormalizedImage, ScanImage};
use crate::losses_metrics::{
    laplacian_variance, psnr, shannon_entropy, tenengrad, weight_map, LossBreakdown, LossContext, LossWeights,
};
use crate::stopping::{
    make_kfold_masks, make_random_mask, pseudo_val_loss, Decision, EsConfig, MaskSet, StopReport, StopState,
    StopTrigger, VarianceTracker,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Random,
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub lr: f64,
    pub reg_noise_std: f64,
    pub loss_weights: LossWeights,
    /// Background weight of the intensity-weighted MSE.
    pub weight_floor: f64,
    pub mask_mode: MaskMode,
    pub mask_fraction: f64,
    pub kfold_k: usize,
    pub es: EsConfig,
    pub metric_interval: usize,
    /// Threshold of the beam-area readout, as a fraction of the peak.
    pub area_fraction: f64,
    /// Keep the clamped output every this many iterations.
    pub snapshot_every: Option<usize>,
    /// Read evaluations and snapshots from an extra forward pass on the
    /// unperturbed input instead of the training output.
    pub eval_clean_input: bool,
    /// Seeds the input field, its perturbations and the masks.
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 2000,
            lr: 0.002,
            reg_noise_std: 0.03,
            loss_weights: LossWeights::default(),
            weight_floor: 0.1,
            mask_mode: MaskMode::Random,
            mask_fraction: 0.05,
            kfold_k: 8,
            es: EsConfig::default(),
            metric_interval: 10,
            area_fraction: 0.02,
            snapshot_every: None,
            eval_clean_input: true,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.reg_noise_std >= 0.0 && self.reg_noise_std.is_finite()) {
            return bad(format!("reg_noise_std {} must be nonnegative", self.reg_noise_std));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 0.5) {
            return bad(format!("mask fraction {} outside (0, 0.5)", self.mask_fraction));
        }
        if self.mask_mode == MaskMode::Kfold && self.kfold_k < 2 {
            return bad(format!("kfold_k {} must be at least 2", self.kfold_k));
        }
        if self.metric_interval == 0 {
            return bad("metric_interval must be at least 1".into());
        }
        if !(self.area_fraction >= 0.0 && self.area_fraction < 1.0) {
            return bad(format!("area fraction {} outside [0, 1)", self.area_fraction));
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot_every must be at least 1".into());
        }
        if self.es.window == 0 || self.es.patience == 0 {
            return bad("early-stopping window and patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.es.min_rel_improvement) {
            return bad("min_rel_improvement must lie in [0, 1)".into());
        }
        self.loss_weights.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !(0.0..1.0).contains(&self.weight_floor) {
            return bad(format!("weight floor {} outside [0, 1)", self.weight_floor));
        }
        self.net.validate().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// One evaluated iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub pseudo_val_loss: f64,
    pub variance: f64,
    pub entropy: f64,
    pub laplacian_var: f64,
    pub tenengrad: f64,
    pub beam_area: f64,
    /// Against the ground truth, when one was supplied.
    pub psnr: Option<f64>,
}

pub const TRAIN_LOG_SCHEMA: u32 = 1;

pub const TRAIN_LOG_COLUMNS: [&str; 14] = [
    "schema_version",
    "iteration",
    "MSE Loss",
    "MAE Loss",
    "TV Loss",
    "GDL Loss",
    "Total Loss",
    "Pseudo Validation Loss",
    "EMV Variance",
    "Entropy",
    "Laplacian Var",
    "Tenengrad",
    "Beam Area (Emittance)",
    "PSNR",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = TRAIN_LOG_COLUMNS.join(",");
        s.push('\n');
        for r in &self.records {
            let l = r.loss;
            let psnr = r.psnr.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{TRAIN_LOG_SCHEMA},{},{},{},{},{},{},{},{},{},{},{},{},{psnr}",
                r.iteration,
                l.mse,
                l.mae,
                l.tv,
                l.gdl,
                l.total,
                r.pseudo_val_loss,
                r.variance,
                r.entropy,
                r.laplacian_var,
                r.tenengrad,
                r.beam_area,
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.iteration).collect()
    }

    /// Record with the highest PSNR, if ground truth was supplied.
    pub fn psnr_peak(&self) -> Option<&TrainRecord> {
        self.records
            .iter()
            .filter(|r| r.psnr.is_some())
            .max_by(|a, b| a.psnr.unwrap().total_cmp(&b.psnr.unwrap()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-PVL snapshot with early stopping on; the final output otherwise.
    pub restored: NormalizedImage,
    pub log: TrainLog,
    pub report: StopReport,
    /// What the hybrid rule decided, even when it was not allowed to stop the
    /// run. `None` if it never fired.
    pub es_report: Option<StopReport>,
    /// Total training loss of every iteration (fold 0).
    pub loss_trace: Vec<f64>,
    /// `(iteration, clamped output)` every `snapshot_every` iterations.
    pub snapshots: Vec<(usize, Array2<f64>)>,
    /// Clamped output of the last iteration.
    pub final_output: Array2<f64>,
}

struct Fold {
    net: SkipNet,
    adam: Adam,
    loss: LossContext,
    mask: MaskSet,
}

fn to_grid(t: &Tensor, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), t.data().to_vec()).expect("output has the image shape")
}

/// Fits the skip network to `noisy` and returns the restored image.
///
/// Each iteration perturbs the input field, runs the network, and takes one
/// Adam step on the loss over training pixels. Evaluations (the first
/// iteration, every `metric_interval`-th and the last) compute the
/// pseudo-validation loss and readouts and drive the stopping automaton; the
/// output variance is tracked every iteration. In K-fold mode all folds train
/// in lockstep with separate networks and the validation loss is their mean.
pub fn train(noisy: &NormalizedImage, cfg: &TrainConfig, ground_truth: Option<&ScanImage>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if noisy.degenerate {
        return Err(Error::DegenerateInput);
    }
    let (rows, cols) = noisy.values.dim();
    let gt = match ground_truth {
        Some(img) if img.intensities.dim() != (rows, cols) => {
            return Err(Error::shape(format!(
                "ground truth {:?} does not match image {rows}x{cols}",
                img.intensities.dim()
            )))
        }
        Some(img) => Some(noisy.normalize_like(img)),
        None => None,
    };

    let masks = match cfg.mask_mode {
        MaskMode::Random => vec![make_random_mask(rows, cols, cfg.mask_fraction, cfg.seed)?],
        MaskMode::Kfold => make_kfold_masks(rows, cols, cfg.kfold_k, cfg.seed)?,
    };
    let weights = weight_map(noisy, cfg.weight_floor)?;
    let net = build_skip_net(&cfg.net)?;
    let mut folds = masks
        .into_iter()
        .map(|mask| {
            Ok(Fold {
                net: net.clone(),
                adam: Adam::new(cfg.lr),
                loss: LossContext::new(noisy.values.view(), weights.view(), &mask.train, cfg.loss_weights)?,
                mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let z = sample_input_z(rows, cols, cfg.seed);
    let mut tracker = VarianceTracker::new(cfg.es.mode, cfg.es.window)?;
    let mut state = StopState::new(cfg.es);
    let mut log = TrainLog::default();
    let mut best: Option<Array2<f64>> = None;
    let mut es_report = None;
    let mut loss_trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut outputs = vec![Tensor::zeros(&[1, rows, cols]); folds.len()];
    let mut last = None;

    for t in 1..=cfg.max_iters {
        let input = perturb_input(&z, cfg.reg_noise_std, cfg.seed, t as u64);
        let mut first: Option<LossBreakdown> = None;
        for (fold, out_slot) in folds.iter_mut().zip(outputs.iter_mut()) {
            let mut g = Graph::new();
            let params = fold.net.register(&mut g);
            let x = g.constant(input.clone());
            let out = fold.net.forward(&mut g, x, &params)?;
            let terms = fold.loss.build(&mut g, out)?;
            let b = terms.breakdown(&g);
            if !b.total.is_finite() {
                return Err(Error::DivergedTraining { iteration: t });
            }
            g.backward(terms.total)?;
            let grads: Vec<&[f64]> = params
                .iter()
                .map(|&p| g.grad(p).expect("parameters are tracked"))
                .collect();
            fold.adam.step(fold.net.params_mut(), &grads)?;
            *out_slot = g.value(out).clone();
            first.get_or_insert(b);
        }
        let breakdown = first.expect("at least one fold");
        loss_trace.push(breakdown.total);
        let variance = tracker.update(outputs[0].data());
        let raw = to_grid(&outputs[0], rows, cols);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedTraining { iteration: t });
        }
        let evaluate = t == 1 || t % cfg.metric_interval == 0 || t == cfg.max_iters;
        let snap = cfg.snapshot_every.is_some_and(|n| t % n == 0);
        let views = if cfg.eval_clean_input && (evaluate || snap) {
            let mut v = Vec::with_capacity(folds.len());
            for (i, fold) in folds.iter().enumerate() {
                if i == 0 || evaluate {
                    let grid = to_grid(&fold.net.predict(&z)?, rows, cols);
                    if grid.iter().any(|x| !x.is_finite()) {
                        return Err(Error::DivergedTraining { iteration: t });
                    }
                    v.push(grid);
                }
            }
            v
        } else {
            outputs.iter().map(|o| to_grid(o, rows, cols)).collect()
        };
        let clamped = views[0].mapv(|v| v.clamp(0.0, 1.0));
        if snap {
            snapshots.push((t, clamped.clone()));
        }

        if evaluate {
            let mut pvl = 0.0;
            for (fold, view) in folds.iter().zip(&views) {
                pvl += pseudo_val_loss(view.view(), noisy.values.view(), &fold.mask)?;
            }
            pvl /= folds.len() as f64;
            let step = state.patience_step(variance, pvl, t, cfg.max_iters);
            if step.snapshot {
                best = Some(clamped.clone());
            }
            log.records.push(TrainRecord {
                iteration: t,
                loss: breakdown,
                pseudo_val_loss: pvl,
                variance,
                entropy: shannon_entropy(clamped.view()),
                laplacian_var: laplacian_variance(clamped.view()),
                tenengrad: tenengrad(clamped.view()),
                beam_area: beam_area_metric(&noisy.to_physical(clamped.view()), cfg.area_fraction),
                psnr: gt.as_ref().map(|g| psnr(clamped.view(), g.view())).transpose()?,
            });
            if es_report.is_none() && state.hybrid_fires() {
                es_report = Some(state.report(StopTrigger::Hybrid));
            }
            if let Decision::Stop(trigger) = step.decision {
                last = Some((trigger, clamped));
                break;
            }
        }
    }

    let (trigger, final_output) = last.expect("the last iteration always evaluates");
    let report = state.report(trigger);
    let restored = if cfg.es.enabled {
        best.expect("the first evaluation always snapshots")
    } else {
        final_output.clone()
    };
    Ok(TrainOutcome {
        restored: noisy.with_values(restored),
        log,
        report,
        es_report,
        loss_trace,
        snapshots,
        final_output,
    })
}
