//! End-to-end CLI checks on a small, fast basis: exit codes, file layout,
//! config round-trips, and manifest-driven reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_BIN_EXE_eploop"));
    assert!(p.exists(), "binary not built: {}", p.display());
    p = p.canonicalize().unwrap();
    p
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("eploop-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL_BASIS: &str = "\
[basis]
n_max = 14
sturmian_scale = 0.3

[center]
gamma = 0.0
f = 0.0
energy_re = -0.5
energy_im = 0.0

[spectrum]
mode = point
count = 3
";

#[test]
fn spectrum_point_mode_writes_table_and_manifest() {
    let dir = tmpdir("spectrum");
    let cfg = dir.join("run.cfg");
    write(&cfg, SMALL_BASIS);
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let table = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# label,re_energy (a.u.),im_energy (a.u.)"));
    let first = lines.next().unwrap();
    // ground state leads the table at the -0.5 target
    let re: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((re + 0.5).abs() < 1e-4, "{first}");
    let manifest = std::fs::read_to_string(out.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("[manifest]"));
    assert!(manifest.contains("checksum_spectrum_csv = fnv1a64:"));
    assert!(manifest.contains("command = spectrum"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tmpdir("badcfg");
    let cfg = dir.join("bad.cfg");
    write(&cfg, "[basis]\nn_max = minus one\n");
    let output = Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&output.stderr);
    assert!(msg.contains("line 2"), "{msg}");

    // missing file is a configuration error too
    let output = Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(dir.join("nope.cfg"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_code_3() {
    let dir = tmpdir("numfail");
    let cfg = dir.join("run.cfg");
    // a fit around a field-free point has no EP pair; the solver pipeline
    // reports a numerical failure rather than fabricating a model
    write(
        &cfg,
        "[basis]\nn_max = 8\nsturmian_scale = 0.5\n\n[center]\ngamma = 0.0\nf = 0.0\nenergy_re = -0.5\nenergy_im = 0.0\n\n[fit]\noctagon_radius = 1e-3\n",
    );
    let output = Command::new(bin())
        .args(["fit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn manifest_reruns_reproduce_identical_outputs() {
    let dir = tmpdir("rerun");
    let cfg = dir.join("run.cfg");
    write(&cfg, SMALL_BASIS);
    let out1 = dir.join("out1");
    assert!(Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out1)
        .status()
        .unwrap()
        .success());
    // feed the manifest back as the configuration
    let out2 = dir.join("out2");
    assert!(Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(out1.join("run_manifest.txt"))
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap()
        .success());
    let a = std::fs::read_to_string(out1.join("spectrum.csv")).unwrap();
    let b = std::fs::read_to_string(out2.join("spectrum.csv")).unwrap();
    assert_eq!(a, b, "data files must be byte-identical under manifest rerun");
}

#[test]
fn two_level_propagate_and_sweep_write_expected_files() {
    let dir = tmpdir("sweep");
    let cfg = dir.join("run.cfg");
    // synthetic-ish small case: tiny basis, the EP pair of which is crude
    // but perfectly serviceable for exercising the file contract
    write(
        &cfg,
        "[basis]\nn_max = 16\nsturmian_scale = 0.2\n\n[loop]\nr = 1e-3\nT = 500.0\n\n[engine]\nkind = two-level\noutput_samples = 40\n\n[sweep]\naxis = T\nt_min = 100.0\nt_max = 1000.0\nt_points = 5\nt_scale = linear\n",
    );
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["propagate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# t (a.u.),pop_1,re_energy_1 (a.u.),im_energy_1 (a.u.),pop_2"));
    assert_eq!(trace.lines().count(), 42); // header + 41 samples
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("transfer = "));

    let out_sweep = dir.join("out_sweep");
    let status = Command::new(bin())
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_sweep)
        .status()
        .unwrap();
    assert!(status.success());
    let table = std::fs::read_to_string(out_sweep.join("duration_sweep.csv")).unwrap();
    assert!(table.starts_with("# T,transfer,decay_label_1,pop_1,pop_2,error"));
    assert_eq!(table.lines().count(), 6);
    let summary = std::fs::read_to_string(out_sweep.join("sweep_summary.txt")).unwrap();
    assert!(summary.contains("axis = T"));
    assert!(summary.contains("failed_points = 0"));
}

#[test]
fn axis_flag_overrides_config() {
    let dir = tmpdir("axisflag");
    let cfg = dir.join("run.cfg");
    write(
        &cfg,
        "[basis]\nn_max = 16\nsturmian_scale = 0.2\n\n[loop]\nT = 500.0\n\n[sweep]\naxis = T\nphi_points = 4\nphi_min = 0.0\nphi_max = 6.0\n",
    );
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["sweep", "--axis", "phi0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("phase_sweep.csv").exists());
}
