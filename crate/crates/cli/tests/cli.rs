use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsm_minmax::io;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsm-minmax"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_design(dir: &Path) -> Output {
    run(&["design", "--order", "8", "--osr", "8", "--hinf", "1.5", "--out-dir", dir.to_str().unwrap()])
}

#[test]
fn design_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_design(dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("design.toml")).unwrap();
    let table: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(table["cascade"].as_integer(), Some(1));
    assert_eq!(table["design"]["order"].as_integer(), Some(8));
    let rows = io::read_response_csv(&fs::read(dir.path().join("ntf_response.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4096);
    let stab = fs::read_to_string(dir.path().join("stability.toml")).unwrap();
    assert!(stab.contains("u_max"));
}

#[test]
fn simulate_and_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&small_design(dir.path())), 0);
    let sim = run(&["simulate", "--out-dir", d, "--length", "4096", "--tone", "0.01"]);
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    let trace = io::read_trace_csv(&fs::read(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 4096);
    assert!(trace.iter().all(|r| r.n == r.y - r.psi));
    let spec = io::read_spectrum_csv(&fs::read(dir.path().join("spectrum.csv")).unwrap()).unwrap();
    assert_eq!(spec.len(), 2049);
    let sweep = run(&["sweep", "--out-dir", d, "--length", "2048", "--tone", "0.01"]);
    assert_eq!(code(&sweep), 0, "{}", String::from_utf8_lossy(&sweep.stderr));
    let rows = io::read_sweep_csv(&fs::read(dir.path().join("sweep.csv")).unwrap()).unwrap();
    assert!(rows.len() >= 81);
    assert!(rows.windows(2).all(|w| w[1].amp > w[0].amp));
    let header = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(header.starts_with("amp,amp_db,snr_db,within_bound\n"));
}

#[test]
fn outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let d = dir.to_str().unwrap();
        assert_eq!(code(&small_design(dir)), 0);
        assert_eq!(code(&run(&["simulate", "--out-dir", d, "--length", "2048", "--tone", "0.01"])), 0);
        assert_eq!(code(&run(&["verify", "--out-dir", d, "--seed", "3"])), 0);
    }
    for name in ["design.toml", "ntf_response.csv", "stability.toml", "trace.csv", "spectrum.csv", "simulate.toml", "verify.toml"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn zero_length_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("out");
    let out = run(&["simulate", "--length", "0", "--out-dir", d.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(!d.exists());
}

#[test]
fn missing_design_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("design file"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn bad_flags_exit_one() {
    assert_eq!(code(&run(&["design", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["design", "--levels", "3"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn infeasible_design_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // a DC zero forces mean |T|^2 >= 1 + 1/N, above the cap squared
    let out = run(&[
        "design", "--order", "4", "--osr", "8", "--hinf", "1.05", "--zeros", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("design.toml").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("order = 6\nosr = 8.0\nhinf = 1.5\nout_dir = {:?}\n", dir.path())).unwrap();
    let out = run(&["design", "--config", cfg.to_str().unwrap(), "--order", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("design.toml")).unwrap();
    let table: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(table["design"]["order"].as_integer(), Some(5));
    fs::write(&cfg, "order = 6\nspeed = 3\n").unwrap();
    assert_eq!(code(&run(&["design", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn verify_rejects_a_tampered_design() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&small_design(dir.path())), 0);
    assert_eq!(code(&run(&["verify", "--out-dir", d])), 0);
    let path = dir.path().join("design.toml");
    let mut table: toml::Table = toml::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let band = table["design"]["bands"].as_array_mut().unwrap()[0].as_table_mut().unwrap();
    let g = band["gamma"].as_float().unwrap();
    band.insert("gamma".into(), toml::Value::Float(0.5 * g));
    fs::write(&path, toml::to_string(&table).unwrap()).unwrap();
    let out = run(&["verify", "--out-dir", d]);
    assert_eq!(code(&out), 3);
    let report = fs::read_to_string(dir.path().join("verify.toml")).unwrap();
    assert!(report.contains("passed = false"));
}

#[test]
fn stability_reports_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&small_design(dir.path())), 0);
    fs::remove_file(dir.path().join("stability.toml")).unwrap();
    let out = run(&["stability", "--out-dir", d, "--cascade", "2"]);
    assert_eq!(code(&out), 0);
    let rep: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("stability.toml")).unwrap()).unwrap();
    assert!(rep["u_max"].as_float().unwrap() < 2.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("input bound"));
}
