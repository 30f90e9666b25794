use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use super::report::{cell, Csv, ItemSummary, OutDir, Timer};
use super::runners::{resolve_sample, Sample, Source};
use crate::dipnet::{train, TrainOutcome};
use crate::error::Result;
use crate::image_io::{normalize, shift_nonnegative};
use crate::stopping::StopReport;

/// A later value must exceed the minimum by this relative margin to count
/// as a rise.
const RISE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaOptimum {
    /// Iteration of the smallest positive beam area, if the trace rises
    /// after it.
    pub iteration: Option<usize>,
    pub area: Option<f64>,
    /// No minimum followed by a rise: the trace only falls, or is flat.
    pub monotone: bool,
}

/// Centered moving average; windows shrink at the ends.
fn smooth(pts: &[(usize, f64)], window: usize) -> Vec<(usize, f64)> {
    let h = window / 2;
    (0..pts.len())
        .map(|i| {
            let seg = &pts[i.saturating_sub(h)..(i + h + 1).min(pts.len())];
            (pts[i].0, seg.iter().map(|p| p.1).sum::<f64>() / seg.len() as f64)
        })
        .collect()
}

/// Locates the beam-area minimum that precedes the rise caused by noise
/// fitting, after smoothing over `window` evaluations. Zero areas (a blank
/// output) are skipped.
pub fn area_optimum(trace: &[(usize, f64)], window: usize) -> AreaOptimum {
    let kept: Vec<(usize, f64)> = trace.iter().copied().filter(|&(_, a)| a > 0.0 && a.is_finite()).collect();
    let pts = smooth(&kept, window.max(1));
    let Some(min_idx) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
    else {
        return AreaOptimum {
            iteration: None,
            area: None,
            monotone: true,
        };
    };
    let (it, min) = pts[min_idx];
    let rises = pts[min_idx + 1..].iter().any(|&(_, a)| a > min * (1.0 + RISE_TOLERANCE));
    AreaOptimum {
        iteration: rises.then_some(it),
        area: rises.then_some(min),
        monotone: !rises,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    /// What early stopping decided.
    pub es: StopReport,
    pub area: AreaOptimum,
    /// `|es.best_iter − area.iteration| / area.iteration`.
    pub relative_gap: Option<f64>,
    /// Iteration cap of the run without early stopping.
    pub cap: usize,
    /// Highest PSNR iteration, when ground truth is known.
    pub psnr_peak_iter: Option<usize>,
}

/// Trains without early stopping up to `cap` and compares the early-stopping
/// decision with the beam-area optimum.
///
/// Training is deterministic and the stopping rule only reads the history
/// up to its firing point, so the decision recorded during the uncapped run
/// is the report a run with early stopping enabled would return. When the
/// rule never fires, the report at the cap is used.
pub fn align_sample(sample: &Sample, cfg: &RunConfig) -> Result<(AlignReport, TrainOutcome)> {
    let normalized = normalize(&shift_nonnegative(&sample.noisy));
    let mut tcfg = cfg.train.clone();
    tcfg.max_iters = cfg.align.max_iters;
    tcfg.es.enabled = false;
    let outcome = train(&normalized, &tcfg, sample.truth.as_ref().map(|t| &t.clean))?;
    let es = outcome.es_report.unwrap_or(outcome.report);
    let trace: Vec<(usize, f64)> = outcome.log.records.iter().map(|r| (r.iteration, r.beam_area)).collect();
    let area = area_optimum(&trace, cfg.align.smooth_window);
    let relative_gap = area
        .iteration
        .map(|a| (es.best_iter as f64 - a as f64).abs() / a.max(1) as f64);
    let report = AlignReport {
        es,
        area,
        relative_gap,
        cap: tcfg.max_iters,
        psnr_peak_iter: outcome.log.psnr_peak().map(|r| r.iteration),
    };
    Ok((report, outcome))
}

pub(crate) fn align_item(cfg: &RunConfig, id: &str, src: &Source) -> ItemSummary {
    let timer = Timer::start();
    let run = || -> Result<(Vec<String>, Value)> {
        let sample = resolve_sample(cfg, src)?;
        let (report, outcome) = align_sample(&sample, cfg)?;
        let mut out = OutDir::create(&cfg.out.join(id))?;
        let mut csv = Csv::new(&["iteration", "beam_area", "pseudo_val_loss", "variance", "psnr"]);
        for r in &outcome.log.records {
            csv.row(&[
                r.iteration.to_string(),
                cell(Some(r.beam_area)),
                cell(Some(r.pseudo_val_loss)),
                cell(Some(r.variance)),
                cell(r.psnr),
            ]);
        }
        out.write("beam_area_trace.csv", csv.finish())?;
        outcome.log.write_csv(&out.path("train_log.csv")?)?;
        let metrics = serde_json::to_value(&report).expect("report serializes");
        out.write("align_report.json", serde_json::to_string_pretty(&metrics).expect("serializes"))?;
        let outputs = out.written.iter().map(|f| format!("{id}/{f}")).collect();
        Ok((outputs, metrics))
    };
    match run() {
        Ok((outputs, metrics)) => ItemSummary {
            id: id.to_string(),
            ok: true,
            error: None,
            wall_seconds: timer.seconds(),
            outputs,
            metrics,
        },
        Err(e) => ItemSummary::failed(id, &e, timer.seconds()),
    }
}
