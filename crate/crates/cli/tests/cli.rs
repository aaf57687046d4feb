use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 11
[particle]
n_particles = 1
horizon = 2.0
snapshot_times = [0.5, 2.0]
rate_window = [1.0, 2.0]
[pde]
n_v = 16
n_g = 16
transient_steps = 100
[ergodicity]
lyapunov_points = [2, 2]
lyapunov_horizon = 1.0
lyapunov_times = 5
n_per_point = 400
probe_grid = [2, 2]
horizon = 10.0
sample_every = 0.5
n_particles = 2000
R = [1.0]
[validate]
cross_times = [0.0, 1.0]
"#;

fn vcfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcfp")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_in(dir: &TempDir, cmd: &str, config: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.path().join(out);
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    vcfp(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_three_deterministic_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let a = run_in(&dir, "simulate", &cfg, "a", &["--threads", "1"]);
    let b = run_in(&dir, "simulate", &cfg, "b", &["--threads", "8"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success());
    let fa = files(&dir.path().join("a"));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["snapshots.csv", "spikes.csv", "trajectory.csv"]);
    assert_eq!(fa, files(&dir.path().join("b")));
    for (_, bytes) in &fa {
        let text = String::from_utf8_lossy(bytes);
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# vcfp ") && first.contains("config_sha256=") && first.ends_with("seed=11"));
    }
}

#[test]
fn trajectory_reproduces_the_first_particle() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    assert!(run_in(&dir, "simulate", &cfg, "o", &[]).status.success());
    let traj = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    let snaps = fs::read_to_string(dir.path().join("o/snapshots.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        traj.lines().skip(2).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 201);
    assert!(rows.iter().all(|r| r[1] >= 0.0 && r[1] < 1.0 && r[2] >= 0.0));
    // Snapshot at t = 2 of particle 0 equals the last trajectory row.
    let last_snap: Vec<f64> = snaps.lines().last().unwrap().split(',').take(4).map(|x| x.parse().unwrap()).collect();
    assert_eq!(last_snap[0], 2.0);
    assert_eq!((last_snap[2], last_snap[3]), (rows[200][1], rows[200][2]));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    assert!(run_in(&dir, "simulate", &cfg, "a", &["--seed", "5"]).status.success());
    assert!(run_in(&dir, "simulate", &cfg, "b", &[]).status.success());
    let a = fs::read_to_string(dir.path().join("a/trajectory.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/trajectory.csv")).unwrap();
    assert!(a.lines().next().unwrap().ends_with("seed=5"));
    assert_ne!(a.lines().skip(1).collect::<Vec<_>>(), b.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn invalid_model_is_rejected_before_any_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SMALL}\n[model]\nV_E = 0.9\n"));
    let o = run_in(&dir, "simulate", &cfg, "o", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("V_E"), "{}", stderr(&o));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[particle]\nn_particle = 3\n");
    let o = run_in(&dir, "simulate", &cfg, "o", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_particle"));
}

#[test]
fn missing_config_prints_usage() {
    let o = vcfp(&["validate"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = vcfp(&[]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn transient_solve_conserves_mass() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = run_in(&dir, "solve", &cfg, "o", &["--transient"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("o/mass_drift.csv")).unwrap();
    let rows: Vec<Vec<f64>> = log.lines().skip(2).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r[3].abs() <= 1e-10 && r[4] >= 0.0));
    assert!(!dir.path().join("o/steady_density.csv").exists());
}

#[test]
fn steady_solve_reports_residual() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = run_in(&dir, "solve", &cfg, "o", &["--steady"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("o/solve_summary.txt")).unwrap();
    let residual: f64 = summary.lines().find_map(|l| l.strip_prefix("steady_residual = ")).unwrap().parse().unwrap();
    assert!(residual <= 1e-10);
    assert!(dir.path().join("o/steady_density.csv").exists());
    assert!(dir.path().join("o/steady_flux.csv").exists());
}

#[test]
fn misaligned_grid_is_explained() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("n_g = 16", "n_g = 20"));
    let o = run_in(&dir, "solve", &cfg, "o", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no cell face at g_F"), "{}", stderr(&o));
}

#[test]
fn explicit_scheme_reports_cfl_violation() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &SMALL.replace("transient_steps = 100", "transient_steps = 5\nscheme = \"explicit\"\ndt = 0.5"),
    );
    let o = run_in(&dir, "solve", &cfg, "o", &["--transient"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("explicit stability bound"), "{}", stderr(&o));
}

#[test]
fn constants_print_exact_normalized_values() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = run_in(&dir, "constants", &cfg, "o", &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let get =
        |k: &str| -> f64 { text.lines().find_map(|l| l.strip_prefix(&format!("{k} = "))).unwrap().parse().unwrap() };
    assert_eq!(get("v_star"), 0.5);
    assert_eq!(get("g_star"), 1.0 / 3.0);
    assert_eq!(get("M_of_R"), 2.0);
    assert_eq!(get("T2"), 3.0 / 22.0);
    assert_eq!(get("g_F"), 1.0);
}

#[test]
fn ergodicity_reports_rates_and_stationary_start() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace(
        "R = [1.0]",
        "R = [1.0]\nlyapunov = false\nminorization = false\n\
         initial = [{ kind = \"point\", v = 0.1, g = 0.2 }, { kind = \"stationary\" }]",
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run_in(&dir, "ergodicity", &cfg, "o", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = fs::read_to_string(dir.path().join("o/rate_fit.txt")).unwrap();
    assert!(fit.contains("curve0.status = fitted"), "{fit}");
    assert!(fit.contains("curve1.status = already_stationary"), "{fit}");
    let lambda: f64 = fit.lines().find_map(|l| l.strip_prefix("curve0.lambda = ")).unwrap().parse().unwrap();
    assert!(lambda > 0.0);
    assert!(dir.path().join("o/decay_0_pde.csv").exists());
}

#[test]
fn ergodicity_probes_write_reports() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace("R = [1.0]", "R = [1.0, 4.0]\nconvergence = false");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run_in(&dir, "ergodicity", &cfg, "o", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = fs::read_to_string(dir.path().join("o/minorization.txt")).unwrap();
    assert!(m.contains("eta_non_increasing_in_R = true"), "{m}");
    assert!(m.contains("R1.status = pass"), "{m}");
    let l = fs::read_to_string(dir.path().join("o/lyapunov.txt")).unwrap();
    assert!(l.contains("passed = true"), "{l}");
    assert!(dir.path().join("o/minorization_R4.csv").exists());
}

#[test]
fn coarse_grid_fails_cross_validation_with_budget() {
    let dir = TempDir::new().unwrap();
    let text =
        SMALL.replace("n_v = 16\nn_g = 16", "n_v = 8\nn_g = 8").replace("n_particles = 1\n", "n_particles = 20000\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run_in(&dir, "validate", &cfg, "o", &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("FAIL cross_tv_t1") && err.contains("budget = min("), "{err}");
    let report = fs::read_to_string(dir.path().join("o/validation.txt")).unwrap();
    assert!(report.contains("passed = false"));
    assert!(report.contains("flux_match_rows.passed = true"));
}
