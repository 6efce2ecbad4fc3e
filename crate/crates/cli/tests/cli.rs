use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use egp_cli::export::{parse_convergence_csv, parse_vtk_volume, CSV_HEADER};

fn egp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egp")).args(args).output().unwrap()
}

fn manifest(dir: &Path, stem: &str) -> toml::Table {
    fs::read_to_string(dir.join(format!("{stem}_manifest.toml")))
        .unwrap()
        .parse()
        .unwrap()
}

fn get<'a>(t: &'a toml::Table, path: &[&str]) -> &'a toml::Value {
    let mut v = &t[path[0]];
    for k in &path[1..] {
        v = &v[*k];
    }
    v
}

#[test]
fn small_mbb_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = egp(&["mbb", "--nx", "12", "--ny", "4", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for key in ["final objective", "iterations", "grey fraction"] {
        assert!(stdout.contains(key), "{stdout}");
    }
    let img = fs::read(dir.path().join("mbb_egp.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n12 4\n255\n"));
    assert_eq!(img.len(), b"P5\n12 4\n255\n".len() + 48);
    let csv = fs::read_to_string(dir.path().join("mbb_egp.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    let rows = parse_convergence_csv(&csv).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.update_ms == 0.0 && r.fea_ms == 0.0));

    let m = manifest(dir.path(), "mbb_egp");
    assert_eq!(get(&m, &["method"]).as_str(), Some("egp"));
    assert_eq!(get(&m, &["config", "problem", "nx"]).as_integer(), Some(12));
    for f in get(&m, &["summary", "files"]).as_array().unwrap() {
        assert!(Path::new(f.as_str().unwrap()).exists());
    }
}

#[test]
fn timings_flag_records_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = egp(&["mbb", "--nx", "8", "--ny", "4", "--method", "oc", "--timings", "--out", d]);
    assert!(out.status.success());
    let rows = parse_convergence_csv(&fs::read_to_string(dir.path().join("mbb_oc.csv")).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r.fea_ms > 0.0));
}

#[test]
fn command_line_beats_file_beats_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("layers.toml");
    fs::write(
        &cfg,
        "[problem]\nnx = 16\nny = 6\nvolume_fraction = 0.4\n\n\
         [filters]\ndensity_radius = 1.5\nsensitivity_radius = 0.8\n\n\
         [optimizer]\nmax_iterations = 3\nclip_multiplier = 4.0\n",
    )
    .unwrap();
    let d = dir.path().to_str().unwrap();
    let out = egp(&[
        "mbb",
        "--config",
        cfg.to_str().unwrap(),
        "--nx",
        "14",
        "--density-radius",
        "2.0",
        "--max-iterations",
        "2",
        "--out",
        d,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path(), "mbb_egp");
    let num = |p: &[&str]| get(&m, p).as_float().unwrap();
    let int = |p: &[&str]| get(&m, p).as_integer().unwrap();
    // command line
    assert_eq!(int(&["config", "problem", "nx"]), 14);
    assert_eq!(num(&["config", "filters", "density_radius"]), 2.0);
    assert_eq!(int(&["config", "optimizer", "max_iterations"]), 2);
    // file
    assert_eq!(int(&["config", "problem", "ny"]), 6);
    assert_eq!(num(&["config", "problem", "volume_fraction"]), 0.4);
    assert_eq!(num(&["config", "filters", "sensitivity_radius"]), 0.8);
    assert_eq!(num(&["config", "optimizer", "clip_multiplier"]), 4.0);
    // preset
    assert_eq!(num(&["config", "material", "penalization"]), 3.0);
    assert_eq!(num(&["config", "optimizer", "upper_threshold"]), 0.3);
    assert_eq!(int(&["summary", "iterations"]), 2);
}

#[test]
fn custom_config_selects_a_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("beam.toml");
    fs::write(
        &cfg,
        "[problem]\npreset = \"cantilever3d\"\nnx = 4\nny = 2\nnz = 2\n\n[optimizer]\nmethod = \"oc\"\nmax_iterations = 2\n",
    )
    .unwrap();
    let d = dir.path().to_str().unwrap();
    let out = egp(&["custom", cfg.to_str().unwrap(), "--out", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let vtk = fs::read_to_string(dir.path().join("cantilever3d_oc.vtk")).unwrap();
    let (g, v) = parse_vtk_volume(&vtk).unwrap();
    assert_eq!((g.nx, g.ny, g.nz), (4, 2, 2));
    assert_eq!(v.len(), 16);
}

#[test]
fn missing_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = egp(&["custom", "missing.cfg", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn config_errors_report_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[problem]\npreset = \"mbb\"\n[material]\npoisson = 0.3\n").unwrap();
    let out = egp(&["custom", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4"), "{err}");
    assert!(err.contains("poisson"), "{err}");
}

#[test]
fn unknown_flags_fail() {
    let out = egp(&["mbb", "--frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn unwritable_output_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let target = blocker.join("out");
    let out = egp(&["mbb", "--nx", "8", "--ny", "4", "--out", target.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn oc_rejects_the_inverter() {
    let dir = tempfile::tempdir().unwrap();
    let out = egp(&["inverter", "--nx", "8", "--ny", "8", "--method", "oc", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}
