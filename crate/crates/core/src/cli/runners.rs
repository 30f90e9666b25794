use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::report::{cell, text_cell, Csv, ItemSummary, OutDir, Timer};
use crate::clustering::{dbscan, hdbscan, PointCloud};
use crate::dipnet::{train, TrainOutcome, TrainRecord};
use crate::emittance::{
    beam_area_metric, core_stats, nsigma_contour, radial_profile, twiss, PhaseSpaceStats, RadialFrame,
};
use crate::error::{Error, Result};
use crate::image_io::{
    extract_profile, load_scan, normalize, save_scan, shift_nonnegative, triage, write_pgm, GridFormat,
    NormalizedImage, ProfileAxis, ScanImage, TriageDecision,
};
use crate::losses_metrics::psnr;
use crate::synth::{add_noise, generate_beam, GroundTruth};

/// One image to process, with its ground truth when synthetic.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub noisy: ScanImage,
    pub truth: Option<GroundTruth>,
    pub format: GridFormat,
}

/// The configured synthetic beam with noise applied.
pub fn synthetic_sample(cfg: &RunConfig) -> Result<Sample> {
    let (clean, truth) = generate_beam(&cfg.beam.spec()?)?;
    let noisy = add_noise(&clean, &cfg.noise)?;
    Ok(Sample {
        id: "synthetic".into(),
        noisy,
        truth: Some(truth),
        format: GridFormat::Csv,
    })
}

pub fn load_sample(path: &Path) -> Result<Sample> {
    let format = GridFormat::from_path(path)
        .ok_or_else(|| Error::BadParams(format!("{}: unknown grid extension", path.display())))?;
    let mut noisy = load_scan(path, format)?;
    noisy.source_id = path.display().to_string();
    Ok(Sample {
        id: stem(path),
        noisy,
        truth: None,
        format,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Input files with directories expanded (sorted). Unless `any_file`, only
/// grid files are taken from directories.
pub(crate) fn list_inputs(cfg: &RunConfig, any_file: bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in cfg.resolved_inputs() {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(|e| Error::io(&p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && (any_file || GridFormat::from_path(f).is_some()))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p);
        }
    }
    Ok(files)
}

/// Unique output subdirectory names, in input order.
pub(crate) fn unique_ids(ids: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashMap::<String, usize>::new();
    ids.into_iter()
        .map(|id| {
            let n = seen.entry(id.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                id
            } else {
                format!("{id}_{n}")
            }
        })
        .collect()
}

/// What a denoising run produced, before anything is written.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub normalized: NormalizedImage,
    pub outcome: TrainOutcome,
    /// Restored grid in the input's units.
    pub restored: ScanImage,
    pub stats: PhaseSpaceStats,
    pub psnr_noisy: Option<f64>,
    pub psnr_restored: Option<f64>,
}

/// Trains on one sample with the configured settings.
pub fn denoise_sample(sample: &Sample, cfg: &RunConfig) -> Result<Denoised> {
    let normalized = normalize(&shift_nonnegative(&sample.noisy));
    let mut tcfg = cfg.train.clone();
    if cfg.export.snapshots && tcfg.snapshot_every.is_none() {
        tcfg.snapshot_every = Some(cfg.export.snapshot_every);
    }
    let truth = sample.truth.as_ref().map(|t| &t.clean);
    let outcome = train(&normalized, &tcfg, truth)?;
    let restored = normalized.to_physical(outcome.restored.values.view());
    let stats = core_stats(&restored, cfg.analysis.core_fraction)?;
    let (psnr_noisy, psnr_restored) = match truth {
        Some(clean) => {
            let gt = normalized.normalize_like(clean);
            (
                Some(psnr(normalized.values.view(), gt.view())?),
                Some(psnr(outcome.restored.values.view(), gt.view())?),
            )
        }
        None => (None, None),
    };
    Ok(Denoised {
        normalized,
        outcome,
        restored,
        stats,
        psnr_noisy,
        psnr_restored,
    })
}

fn denoise_metrics(sample: &Sample, d: &Denoised, cfg: &RunConfig) -> Value {
    let noisy_eps = core_stats(&sample.noisy, cfg.analysis.core_fraction)
        .map(|s| s.emittance_rms)
        .ok();
    json!({
        "iterations": d.outcome.log.records.last().map(|r| r.iteration),
        "stop": d.outcome.report,
        "es_decision": d.outcome.es_report,
        "stats": d.stats,
        "twiss": twiss(&d.stats).ok(),
        "beam_area": beam_area_metric(&d.restored, cfg.train.area_fraction),
        "emittance_noisy": noisy_eps,
        "emittance_truth": sample.truth.as_ref().map(|t| t.stats.emittance_rms),
        "psnr_noisy": d.psnr_noisy,
        "psnr_restored": d.psnr_restored,
    })
}

const CURVES: [(&str, fn(&TrainRecord) -> Option<f64>); 12] = [
    ("mse_loss", |r| Some(r.loss.mse)),
    ("mae_loss", |r| Some(r.loss.mae)),
    ("tv_loss", |r| Some(r.loss.tv)),
    ("gdl_loss", |r| Some(r.loss.gdl)),
    ("total_loss", |r| Some(r.loss.total)),
    ("pseudo_val_loss", |r| Some(r.pseudo_val_loss)),
    ("variance", |r| Some(r.variance)),
    ("entropy", |r| Some(r.entropy)),
    ("laplacian_var", |r| Some(r.laplacian_var)),
    ("tenengrad", |r| Some(r.tenengrad)),
    ("beam_area", |r| Some(r.beam_area)),
    ("psnr", |r| r.psnr),
];

fn write_outputs(sample: &Sample, d: &Denoised, cfg: &RunConfig, out: &mut OutDir) -> Result<()> {
    let ext = match sample.format {
        GridFormat::Csv => "csv",
        GridFormat::Dat => "dat",
    };
    let p = out.path(&format!("restored.{ext}"))?;
    save_scan(&d.restored, &p, sample.format)?;
    if cfg.export.heatmaps {
        write_pgm(d.normalized.values.view(), out.path("input.pgm")?)?;
        write_pgm(d.outcome.restored.values.view(), out.path("restored.pgm")?)?;
    }
    d.outcome.log.write_csv(&out.path("train_log.csv")?)?;

    for (name, get) in CURVES {
        let mut csv = Csv::new(&["iteration", name]);
        for r in &d.outcome.log.records {
            if let Some(v) = get(r) {
                csv.row(&[r.iteration.to_string(), cell(Some(v))]);
            }
        }
        out.write(&format!("curves/{name}.csv"), csv.finish())?;
    }
    let mut csv = Csv::new(&["iteration", "total_loss"]);
    for (i, v) in d.outcome.loss_trace.iter().enumerate() {
        csv.row(&[(i + 1).to_string(), cell(Some(*v))]);
    }
    out.write("curves/loss_per_iteration.csv", csv.finish())?;

    for (it, values) in &d.outcome.snapshots {
        write_pgm(values.view(), out.path(&format!("snapshots/iter_{it:06}.pgm"))?)?;
    }
    if cfg.export.profiles {
        write_profiles(sample, d, cfg, out)?;
    }
    if cfg.export.contours {
        write_contours(d, cfg, out)?;
    }
    if cfg.export.clusters {
        write_clusters(&d.restored, cfg, out)?;
    }
    Ok(())
}

fn write_profiles(sample: &Sample, d: &Denoised, cfg: &RunConfig, out: &mut OutDir) -> Result<()> {
    let mut csv = Csv::new(&["axis", "index", "coordinate", "input", "restored"]);
    for (axis, name) in [(ProfileAxis::Position, "x"), (ProfileAxis::Angle, "xp")] {
        let a = extract_profile(&sample.noisy, axis, false)?;
        let b = extract_profile(&d.restored, axis, false)?;
        for (i, (u, v)) in a.iter().zip(&b).enumerate() {
            let coord = match axis {
                ProfileAxis::Position => d.restored.axes.x(i),
                ProfileAxis::Angle => d.restored.axes.xp(i),
            };
            csv.row(&[name.into(), i.to_string(), cell(Some(coord)), cell(Some(*u)), cell(Some(*v))]);
        }
    }
    out.write("profiles.csv", csv.finish())?;

    // Amplitudes are measured in the true frame when it is known.
    let frame = match &sample.truth {
        Some(t) => RadialFrame {
            center_x: t.spec.center.0,
            center_xp: t.spec.center.1,
            twiss: t.spec.twiss(),
            emittance: t.spec.emittance,
        },
        None => RadialFrame::from_stats(&d.stats)?,
    };
    let (bins, r_max) = (cfg.analysis.profile_bins, cfg.analysis.profile_r_max);
    let a = radial_profile(&sample.noisy, &frame, bins, r_max)?;
    let b = radial_profile(&d.restored, &frame, bins, r_max)?;
    let mut csv = Csv::new(&["r", "pixels", "input", "restored", "analytic"]);
    for i in 0..bins {
        let r = b.bin_center(i);
        let analytic = sample.truth.as_ref().map(|t| t.analytic_profile(r));
        csv.row(&[cell(Some(r)), b.counts[i].to_string(), cell(a.mean[i]), cell(b.mean[i]), cell(analytic)]);
    }
    out.write("radial_profile.csv", csv.finish())
}

fn write_contours(d: &Denoised, cfg: &RunConfig, out: &mut OutDir) -> Result<()> {
    let t = twiss(&d.stats)?;
    let center = (d.stats.mean_x, d.stats.mean_xp);
    let mut csv = Csv::new(&["n_sigma", "index", "x", "xp"]);
    for n in 1..=cfg.analysis.contour_sigmas {
        let pts = nsigma_contour(&t, d.stats.emittance_rms, n as f64, cfg.analysis.contour_points, center)?;
        for (i, (x, xp)) in pts.iter().enumerate() {
            csv.row(&[n.to_string(), i.to_string(), cell(Some(*x)), cell(Some(*xp))]);
        }
    }
    out.write("contours.csv", csv.finish())
}

fn write_clusters(img: &ScanImage, cfg: &RunConfig, out: &mut OutDir) -> Result<()> {
    let a = &cfg.analysis;
    let floor = a.cluster_floor * img.max();
    let cloud = PointCloud::from_image(img, floor);
    let eps = a.cluster_eps * img.axes.x_step.max(img.axes.xp_step);
    let db = dbscan(&cloud, eps, a.cluster_min_pts)?;
    let hd = hdbscan(&cloud, a.cluster_min_size)?;
    let mut csv = Csv::new(&["row", "col", "x", "xp", "intensity", "dbscan", "hdbscan"]);
    let mut i = 0;
    for ((r, c), &v) in img.intensities.indexed_iter() {
        if v >= floor {
            csv.row(&[
                r.to_string(),
                c.to_string(),
                cell(Some(img.axes.x(c))),
                cell(Some(img.axes.xp(r))),
                cell(Some(v)),
                db.labels[i].to_string(),
                hd.labels[i].to_string(),
            ]);
            i += 1;
        }
    }
    out.write("clusters.csv", csv.finish())
}

#[derive(Debug, Clone)]
pub(crate) enum Source {
    File(PathBuf),
    Synthetic,
}

/// Samples named by the config: the listed files, or the synthetic beam.
pub(crate) fn sources(cfg: &RunConfig) -> Result<Vec<(String, Source)>> {
    if cfg.inputs.is_empty() {
        return Ok(vec![("synthetic".into(), Source::Synthetic)]);
    }
    let files = list_inputs(cfg, false)?;
    let ids = unique_ids(files.iter().map(|f| stem(f)));
    Ok(ids.into_iter().zip(files.into_iter().map(Source::File)).collect())
}

pub(crate) fn resolve_sample(cfg: &RunConfig, src: &Source) -> Result<Sample> {
    match src {
        Source::File(path) => load_sample(path),
        Source::Synthetic => synthetic_sample(cfg),
    }
}

pub(crate) fn denoise_item(cfg: &RunConfig, id: &str, src: &Source) -> ItemSummary {
    let timer = Timer::start();
    let run = || -> Result<(Vec<String>, Value)> {
        let sample = resolve_sample(cfg, src)?;
        let d = denoise_sample(&sample, cfg)?;
        let mut out = OutDir::create(&cfg.out.join(id))?;
        write_outputs(&sample, &d, cfg, &mut out)?;
        let outputs = out.written.iter().map(|f| format!("{id}/{f}")).collect();
        Ok((outputs, denoise_metrics(&sample, &d, cfg)))
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

/// Writes the clean and noisy synthetic grids, their heatmaps and the
/// ground-truth moments.
pub(crate) fn synth_item(cfg: &RunConfig, out: &mut OutDir) -> Result<Value> {
    let sample = synthetic_sample(cfg)?;
    let truth = sample.truth.as_ref().expect("synthetic sample has truth");
    save_scan(&truth.clean, out.path("clean.csv")?, GridFormat::Csv)?;
    save_scan(&sample.noisy, out.path("noisy.csv")?, GridFormat::Csv)?;
    if cfg.export.heatmaps {
        let scale = normalize(&shift_nonnegative(&sample.noisy));
        write_pgm(scale.values.view(), out.path("noisy.pgm")?)?;
        let clean: Array2<f64> = scale.normalize_like(&truth.clean);
        write_pgm(clean.view(), out.path("clean.pgm")?)?;
    }
    let metrics = json!({
        "spec": truth.spec,
        "noise": cfg.noise,
        "stats": truth.stats,
        "twiss": twiss(&truth.stats).ok(),
    });
    out.write("truth.json", serde_json::to_string_pretty(&metrics).expect("serializes"))?;
    Ok(metrics)
}

/// Decision for one file; unreadable files are rejected as such.
pub(crate) fn triage_file(path: &Path, cfg: &RunConfig) -> (TriageDecision, Option<String>) {
    match load_sample(path) {
        Ok(s) => (triage(&s.noisy, &cfg.triage.policy), None),
        Err(e) => (
            TriageDecision::Reject(crate::image_io::RejectReason::Unreadable),
            Some(e.to_string()),
        ),
    }
}

pub(crate) fn triage_manifest(rows: &[(PathBuf, TriageDecision, Option<String>)]) -> String {
    let mut csv = Csv::new(&["file", "decision", "reason", "detail"]);
    for (path, d, detail) in rows {
        let (decision, reason) = match d {
            TriageDecision::Accept => ("accept", ""),
            TriageDecision::Reject(r) => ("reject", r.as_str()),
        };
        csv.row(&[
            text_cell(&path.display().to_string()),
            decision.into(),
            reason.into(),
            text_cell(detail.as_deref().unwrap_or("")),
        ]);
    }
    csv.finish()
}
