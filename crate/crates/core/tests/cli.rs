use std::path::Path;

use beamdip::cli::{
    align_sample, denoise_sample, main_with_args, run_align, run_benchmark, run_denoise, run_triage, synthetic_sample,
    Command, RunConfig, BENCHMARK_COLUMNS, EXIT_INVALID, EXIT_OK, EXIT_PARTIAL, SCHEMA_VERSION,
};
use beamdip::image_io::{save_scan, GridFormat};
use beamdip::synth::{add_noise, generate_beam, BeamSpec, NoiseSpec};
use serde_json::Value;

fn beamdip(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("beamdip").chain(args.iter().copied()))
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn quick(command: Command, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(command);
    cfg.out = out.to_path_buf();
    cfg.set("beam.size", "32").unwrap();
    cfg.set("train.max_iters", "20").unwrap();
    cfg
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(beamdip(&["denoise", "--out", out, "--set", "train.nonsense=1"]), EXIT_INVALID);
    assert_eq!(beamdip(&["denoise", "--out", out, "--set", "train.lr=-1"]), EXIT_INVALID);
    assert_eq!(beamdip(&["denoise", "--out", out, "--input", "/no/such/file.csv"]), EXIT_INVALID);
    assert_eq!(beamdip(&["triage", "--out", out]), EXIT_INVALID);
    assert_eq!(beamdip(&["explode"]), EXIT_INVALID);
    assert_eq!(beamdip(&["denoise", "--mask-mode", "sideways"]), EXIT_INVALID);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "beam.size = many\n").unwrap();
    assert_eq!(beamdip(&["synth", "--config", cfg.to_str().unwrap(), "--out", out]), EXIT_INVALID);
}

#[test]
fn every_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny\nbeam.size = 32\ntrain.max_iters = 500\n").unwrap();
    let out = dir.path().join("out");
    let code = beamdip(&[
        "denoise",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--jobs",
        "1",
        "--max-iters",
        "12",
        "--no-es",
        "--export-snapshots",
        "--mask-mode",
        "kfold",
        "--kfold-k",
        "3",
        "--set",
        "export.snapshot_every=4",
    ]);
    assert_eq!(code, EXIT_OK);
    let s = summary(&out);
    assert_eq!(s["schema_version"], SCHEMA_VERSION);
    assert_eq!(s["config"]["train"]["max_iters"], 12);
    assert_eq!(s["config"]["train"]["kfold_k"], 3);
    assert_eq!(s["config"]["train"]["seed"], 3);
    assert_eq!(s["items"][0]["metrics"]["iterations"], 12);
    for i in [4, 8, 12] {
        assert!(out.join(format!("synthetic/snapshots/iter_{i:06}.pgm")).is_file());
    }
}

#[test]
fn failed_items_do_not_stop_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let scans = dir.path().join("scans");
    std::fs::create_dir(&scans).unwrap();
    let (clean, _) = generate_beam(&BeamSpec::new(1.0, 0.0, 1.0).unwrap().with_grid(32, 32, 6.0)).unwrap();
    save_scan(&clean, scans.join("good.csv"), GridFormat::Csv).unwrap();
    std::fs::write(scans.join("broken.csv"), "2,2,0,1,0,1,0,x\n1,2\n").unwrap();
    let out = dir.path().join("out");
    let code = beamdip(&["denoise", "--input", scans.to_str().unwrap(), "--out", out.to_str().unwrap(), "--max-iters", "5"]);
    assert_eq!(code, EXIT_PARTIAL);
    let s = summary(&out);
    let items = s["items"].as_array().unwrap();
    assert_eq!(items.len(), 2);
    let broken = items.iter().find(|i| i["id"] == "broken").unwrap();
    assert_eq!(broken["ok"], false);
    assert!(broken["error"].as_str().unwrap().len() > 3);
    assert!(out.join("good/restored.csv").is_file());
}

#[test]
fn denoise_writes_every_curve_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(Command::Denoise, dir.path());
    for k in ["export.profiles", "export.contours", "export.clusters"] {
        cfg.set(k, "true").unwrap();
    }
    let s = run_denoise(&cfg);
    assert_eq!(s.failures(), 0, "{:?}", s.items[0].error);
    for f in [
        "restored.csv",
        "input.pgm",
        "restored.pgm",
        "train_log.csv",
        "curves/psnr.csv",
        "curves/beam_area.csv",
        "curves/loss_per_iteration.csv",
        "profiles.csv",
        "radial_profile.csv",
        "contours.csv",
        "clusters.csv",
    ] {
        assert!(dir.path().join("synthetic").join(f).is_file(), "{f}");
    }
    let per_iter = std::fs::read_to_string(dir.path().join("synthetic/curves/loss_per_iteration.csv")).unwrap();
    assert_eq!(per_iter.lines().count(), 21);
    assert!(per_iter.starts_with("schema_version,"));
    assert!(summary(dir.path())["outputs"].as_array().unwrap().iter().any(|o| o == "summary.json"));
}

#[test]
fn triage_finds_the_beams_in_a_noise_batch() {
    let dir = tempfile::tempdir().unwrap();
    let scans = dir.path().join("scans");
    std::fs::create_dir(&scans).unwrap();
    let (clean, _) = generate_beam(&BeamSpec::new(1.0, -0.3, 1.5).unwrap().with_grid(48, 48, 6.0)).unwrap();
    let blank = clean.with_intensities(clean.intensities.mapv(|_| 0.0));
    for i in 0..100u64 {
        let src = if i % 10 == 0 { &clean } else { &blank };
        let img = add_noise(src, &NoiseSpec::gaussian(0.05, i)).unwrap();
        save_scan(&img, scans.join(format!("scan_{i:03}.csv")), GridFormat::Csv).unwrap();
    }
    let mut cfg = RunConfig::new(Command::Triage);
    cfg.inputs = vec![scans];
    cfg.out = dir.path().join("out");
    cfg.triage.copy_accepted = true;
    let s = run_triage(&cfg);
    assert_eq!(s.failures(), 0);
    let manifest = std::fs::read_to_string(cfg.out.join("manifest.csv")).unwrap();
    let accepted: Vec<&str> = manifest.lines().filter(|l| l.contains(",accept,")).collect();
    assert_eq!(manifest.lines().count(), 101);
    assert_eq!(accepted.len(), 10, "{manifest}");
    assert!(accepted.iter().all(|l| l.contains("0.csv")));
    assert_eq!(std::fs::read_dir(cfg.out.join("accepted")).unwrap().count(), 10);
}

#[test]
fn triage_of_an_empty_directory_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = dir.path().join("out");
    assert_eq!(beamdip(&["triage", "--input", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_OK);
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    assert_eq!(summary(&out)["items"].as_array().unwrap().len(), 0);
}

#[test]
fn unreadable_files_are_rejected_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.bin"), [0u8, 159, 146, 150]).unwrap();
    let mut cfg = RunConfig::new(Command::Triage);
    cfg.inputs = vec![dir.path().to_path_buf()];
    cfg.out = dir.path().join("out");
    let s = run_triage(&cfg);
    assert_eq!(s.failures(), 0);
    let manifest = std::fs::read_to_string(cfg.out.join("manifest.csv")).unwrap();
    assert!(manifest.lines().nth(1).unwrap().contains(",reject,unreadable,"));
}

#[test]
fn benchmark_rows_match_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(Command::Benchmark, dir.path());
    cfg.set("benchmark.emittance_factors", "0.5,1").unwrap();
    cfg.set("benchmark.peak_factors", "1").unwrap();
    cfg.set("benchmark.grids", "32").unwrap();
    cfg.set("benchmark.noise_stds", "0.05,0.1").unwrap();
    cfg.set("benchmark.max_iters", "15").unwrap();
    let s = run_benchmark(&cfg);
    assert_eq!(s.failures(), 0);
    let text = std::fs::read_to_string(dir.path().join("benchmark.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), BENCHMARK_COLUMNS.len() + 1);
    assert_eq!(&header[1..], &BENCHMARK_COLUMNS[..]);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len() && r.contains(",ok,")));
    assert_eq!(s.items[0].id, "e0.5_p1_g32_n0.05");
}

#[test]
fn align_writes_the_area_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(Command::Align, dir.path());
    cfg.set("align.max_iters", "40").unwrap();
    let s = run_align(&cfg);
    assert_eq!(s.failures(), 0, "{:?}", s.items[0].error);
    let trace = std::fs::read_to_string(dir.path().join("synthetic/beam_area_trace.csv")).unwrap();
    // Iteration 1, then every 10th.
    assert_eq!(trace.lines().count(), 1 + 5);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("synthetic/align_report.json")).unwrap()).unwrap();
    assert_eq!(report["cap"], 40);
    assert_eq!(report["es"]["trigger"], "max-iters");
}

#[test]
fn align_reports_what_an_early_stopped_run_decides() {
    let mut cfg = RunConfig::new(Command::Align);
    cfg.set("beam.size", "32").unwrap();
    cfg.set("seed", "2").unwrap();
    cfg.set("es.patience", "4").unwrap();
    cfg.set("es.window", "10").unwrap();
    cfg.set("train.max_iters", "800").unwrap();
    cfg.set("align.max_iters", "800").unwrap();
    let sample = synthetic_sample(&cfg).unwrap();
    let stopped = denoise_sample(&sample, &cfg).unwrap().outcome;
    assert!(stopped.report.stop_iter < 800, "the rule should fire on this setup");
    let (report, full) = align_sample(&sample, &cfg).unwrap();
    assert_eq!(report.es, stopped.report);
    assert_eq!(full.loss_trace[..stopped.loss_trace.len()], stopped.loss_trace[..]);
    assert_eq!(full.loss_trace.len(), 800);
}
