use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use fovmatch::phantom::{PhantomSpec, Transfer, TransferKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fovmatch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn report(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn num(r: &HashMap<String, String>, k: &str) -> f64 {
    r.get(k).unwrap_or_else(|| panic!("missing {k}")).parse().unwrap()
}

fn spec(truth: [f64; 3], kind: TransferKind) -> PhantomSpec {
    let size = 128;
    let c = (size - 1) as f64 / 2.0;
    PhantomSpec {
        grid_dims: [size; 3],
        organ_center_mm: std::array::from_fn(|a| c - truth[a] / 2.0),
        organ_radii_mm: [36.0, 30.0, 26.0],
        organ_structures: 12,
        background_structures: 8,
        truth_shift_mm: truth,
        transfer: Transfer { kind, gain: 0.9, bias: if kind == TransferKind::Inverted { 1.0 } else { 0.1 }, gamma: 1.0 },
        noise_sigma: 0.02,
        crop_b_mm: [6.0; 3],
        seed: 11,
        ..PhantomSpec::default()
    }
}

fn write_pair(dir: &Path, spec: &PhantomSpec) {
    let cfg = dir.join("spec.cfg");
    std::fs::write(&cfg, spec.to_config()).unwrap();
    ok(&["phantom", "--spec", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
}

fn register_args(dir: &Path) -> Vec<String> {
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    vec![
        "register".into(),
        "--fixed".into(),
        p("fixed.mhd"),
        "--moving".into(),
        p("moving.mhd"),
        "--mask".into(),
        p("mask.mhd"),
        "--moving-mask".into(),
        p("moving_mask.mhd"),
        "--truth".into(),
        p("truth.txt"),
        "--out-dir".into(),
        p("out"),
    ]
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn phantom_then_register_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), &spec([24.0, -16.0, 8.0], TransferKind::Affine));
    for f in ["fixed.mhd", "fixed.raw", "moving.mhd", "mask.mhd", "moving_mask.mhd", "truth.txt", "phantom.cfg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let mut args = register_args(dir.path());
    let shifted = dir.path().join("shifted.mhd");
    args.extend(["--shifted".to_string(), shifted.to_str().unwrap().to_string()]);
    let text = ok(&strs(&args));
    let r = report(&text);
    for (axis, t) in ["x", "y", "z"].iter().zip([24.0, -16.0, 8.0]) {
        let s = num(&r, &format!("shift_{axis}_mm"));
        assert!((s - t).abs() <= 12.0, "{axis}: {s} vs {t}");
        assert_eq!(num(&r, &format!("shift_error_{axis}_mm")), (s - t).abs());
    }
    assert!(num(&r, "dsc_after") > num(&r, "dsc_before"));
    assert!(shifted.exists());

    let saved = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert_eq!(saved, text);
    let hist = std::fs::read_to_string(dir.path().join("out/histogram.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("axis,bin_center_mm,count"));
    assert_eq!(lines.count(), 150);

    // every parameter is echoed
    for k in [
        "metric", "resample_spacing_mm", "downsample_factor", "patch_size", "iterations", "alpha",
        "realizations", "seed", "hist_lo_mm", "hist_hi_mm", "bins", "pooled_histogram", "box_margin",
        "threads", "runtime_seconds",
    ] {
        assert!(r.contains_key(k), "{k}");
    }
    assert_eq!(r["patch_size"], "9");
    assert_eq!(r["downsample_factor"], "8");

    // a second run differs only in the runtime line
    let again = ok(&strs(&args));
    let strip = |t: &str| t.lines().filter(|l| !l.starts_with("runtime_seconds")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&again), strip(&text));
}

#[test]
fn ea_beats_l2_on_inverted_contrast() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), &spec([-20.0, 14.0, 22.0], TransferKind::Inverted));
    let base = register_args(dir.path());
    let mut ea = base.clone();
    ea.extend(["--metric".into(), "ea".into()]);
    let mut l2 = base;
    l2.extend(["--metric".into(), "l2".into(), "--report".into(), dir.path().join("l2.txt").to_str().unwrap().into()]);
    let (ea, l2) = (report(&ok(&strs(&ea))), report(&ok(&strs(&l2))));
    assert_eq!(l2["metric"], "l2");
    assert!(
        num(&l2, "dsc_after") < num(&ea, "dsc_after"),
        "l2 {} ea {}",
        l2["dsc_after"],
        ea["dsc_after"]
    );
}

#[test]
fn missing_mask_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let s = PhantomSpec { grid_dims: [32; 3], organ_center_mm: [15.5; 3], organ_radii_mm: [8.0; 3], ..PhantomSpec::default() };
    write_pair(dir.path(), &s);
    let missing = dir.path().join("missing_mask.mhd");
    let out = run(&[
        "register",
        "--fixed",
        dir.path().join("fixed.mhd").to_str().unwrap(),
        "--moving",
        dir.path().join("moving.mhd").to_str().unwrap(),
        "--mask",
        missing.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains(missing.to_str().unwrap()), "{err}");
    assert!(!dir.path().join("out/report.txt").exists());
}

#[test]
fn dice_of_identical_files_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let s = PhantomSpec { grid_dims: [24; 3], organ_center_mm: [11.5; 3], organ_radii_mm: [6.0; 3], ..PhantomSpec::default() };
    write_pair(dir.path(), &s);
    let m = dir.path().join("mask.mhd");
    let out = ok(&["dice", m.to_str().unwrap(), m.to_str().unwrap()]);
    assert_eq!(out.trim(), "dice: 1.000000");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let s = PhantomSpec {
        grid_dims: [48; 3],
        organ_center_mm: [23.5; 3],
        organ_radii_mm: [12.0, 10.0, 9.0],
        organ_structures: 6,
        ..PhantomSpec::default()
    };
    write_pair(dir.path(), &s);
    let cfg = dir.path().join("run.cfg");
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    std::fs::write(
        &cfg,
        format!(
            "fixed = {}\nmoving = {}\nmask = {}\nout-dir = {}\nbins = 10\nmetric = l2\ndownsample_factor = 4\nrealizations = 2\npooled_histogram = true\n",
            p("fixed.mhd"),
            p("moving.mhd"),
            p("mask.mhd"),
            p("out")
        ),
    )
    .unwrap();
    let r = report(&ok(&["register", "--config", cfg.to_str().unwrap(), "--bins", "25", "--threads", "1"]));
    assert_eq!(r["bins"], "25");
    assert_eq!(r["metric"], "l2");
    assert_eq!(r["downsample_factor"], "4");
    assert_eq!(r["realizations"], "2");
    assert_eq!(r["pooled_histogram"], "true");
    assert_eq!(r["threads"], "1");
    assert_eq!(r["fixed"], p("fixed.mhd"));
    // identical images
    for a in ["x", "y", "z"] {
        assert_eq!(num(&r, &format!("shift_{a}_mm")), 0.0);
    }

    std::fs::write(&cfg, "wibble = 3\n").unwrap();
    let out = run(&["register", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("wibble"));
}

#[test]
fn invalid_parameters_are_rejected() {
    for args in [
        vec!["register", "--fixed", "a", "--moving", "b", "--mask", "c", "--alpha", "1.5"],
        vec!["register", "--fixed", "a", "--moving", "b", "--mask", "c", "--patch-size", "4"],
        vec!["register", "--fixed", "a", "--moving", "b", "--mask", "c", "--metric", "cosine"],
        vec!["register", "--moving", "b", "--mask", "c"],
        vec!["bench", "--sweep", "downsample"],
    ] {
        let out = run(&args);
        assert!(!out.status.success(), "{args:?}");
    }
}

#[test]
fn phantom_sweep_writes_one_pair_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.cfg");
    let s = PhantomSpec { grid_dims: [24; 3], organ_center_mm: [11.5; 3], organ_radii_mm: [6.0; 3], ..PhantomSpec::default() };
    std::fs::write(&cfg, s.to_config()).unwrap();
    let out = dir.path().join("sweep");
    ok(&[
        "phantom",
        "--spec",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--sweep",
        "noise_sigma",
        "--values",
        "0,0.05,0.1",
    ]);
    for i in 0..3 {
        let d = out.join(format!("case_{i:03}"));
        let back = PhantomSpec::load(d.join("phantom.cfg")).unwrap();
        assert_eq!(back.noise_sigma, [0.0, 0.05, 0.1][i]);
        assert_eq!(back.seed, s.seed + i as u64);
    }
    let bad = run(&["phantom", "--out-dir", out.to_str().unwrap(), "--sweep", "wibble", "--values", "1"]);
    assert!(!bad.status.success());
}

#[test]
fn bench_downsample_sweep_rows_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    ok(&[
        "bench",
        "--sweep",
        "downsample",
        "--values",
        "2,4,8",
        "--cases",
        "2",
        "--size",
        "64",
        "--max-shift-mm",
        "10",
        "--realizations",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(fovmatch::cli::BENCH_HEADER));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 6);
    let mut mean = [0.0; 3];
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 16);
        assert_eq!(r[0], "downsample");
        assert_eq!(r[1], ["2", "4", "8"][i / 2]);
        assert_eq!(r[2], (i % 2).to_string());
        mean[i / 2] += r[15].parse::<f64>().unwrap();
    }
    assert!(mean[0] > mean[1] && mean[1] > mean[2], "{mean:?}");
}
