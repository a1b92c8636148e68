use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aggdiff_core::config::Config;

const SMALL_1D: &str = r#"
kernel = "neg_abs"
N = 1
eps = [0.1]
lambda = 15.0

[grid]
dr_per_eps = 8
r_max = 2.5

[solver]
snapshot_every = 5
"#;

const SMALL_SWEEP: &str = r#"
kernel = "neg_abs"
N = 2
eps = [0.2, 0.1, 0.05, 0.02]
lambda = 5.0

[grid]
dr_per_eps = 8
r_max = 2.5

[solver]
t_end = 0.3
snapshot_every = 1
"#;

fn aggdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggdiff"))
        .args(args)
        .env_remove("AGGDIFF_JOBS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_a_run_directory_and_check_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_1D);
    let out = tmp.path().join("out");
    let o = aggdiff(&["simulate", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run.json", "trajectory.csv", "verdicts.txt", "config.resolved"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("snapshots").read_dir().unwrap().next().is_some());

    let original = Config::load(Path::new(&cfg)).unwrap();
    let resolved = Config::load(&out.join("config.resolved")).unwrap();
    assert_eq!(original, resolved);

    let o = aggdiff(&["check", "--traj", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("mass_conservation"));
}

#[test]
fn identical_inputs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_1D);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&aggdiff(&["--jobs", "1", "simulate", "--config", &cfg, "--out", s(&a)])), 0);
    assert_eq!(code(&aggdiff(&["--jobs", "3", "simulate", "--config", &cfg, "--out", s(&b)])), 0);
    for f in ["run.json", "trajectory.csv", "verdicts.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn tampered_trajectory_fails_the_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_1D);
    let out = tmp.path().join("out");
    assert_eq!(code(&aggdiff(&["simulate", "--config", &cfg, "--out", s(&out)])), 0);
    let path = out.join("trajectory.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let last = lines.len() - 1;
    let mut cols: Vec<String> = lines[last].split(',').map(str::to_owned).collect();
    let mass: f64 = cols[1].parse().unwrap();
    cols[1] = format!("{:.16e}", mass * 1.1);
    lines[last] = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = aggdiff(&["check", "--traj", s(&out)]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let n4 = write_config(tmp.path(), "n4.toml", &SMALL_1D.replace("N = 1", "N = 4"));
    assert_eq!(code(&aggdiff(&["simulate", "--config", &n4, "--out", s(&out)])), 2);
    let unknown = write_config(tmp.path(), "unknown.toml", &format!("{SMALL_1D}\nstep_size = 3\n"));
    let o = aggdiff(&["simulate", "--config", &unknown, "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step_size"));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&aggdiff(&["simulate", "--config", s(&missing), "--out", s(&out)])), 2);
    let cfg = write_config(tmp.path(), "run.toml", SMALL_1D);
    assert_eq!(code(&aggdiff(&["--jobs", "0", "simulate", "--config", &cfg, "--out", s(&out)])), 2);
    assert_eq!(code(&aggdiff(&["check", "--traj", s(tmp.path())])), 2);
}

#[test]
fn baseline_matches_the_heat_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "heat.toml",
        r#"
kernel = "zero"
N = 1
eps = [0.1]
lambda = 1.0

[initial]
kind = "gaussian"
mass = 1.0
width = 0.1

[grid]
dr = 0.01
r_max = 4.0

[solver]
t_end = 0.5
diffusion = "explicit"
record_interval = 0.05
"#,
    );
    let out = tmp.path().join("out");
    let o = aggdiff(&["baseline", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("baseline.csv")).unwrap();
    assert!(csv.starts_with("epsilon,t,p,solver,exact,rel_err"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn calibrate_needs_three_epsilons() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let two = write_config(
        tmp.path(),
        "two.toml",
        &SMALL_SWEEP.replace("[0.2, 0.1, 0.05, 0.02]", "[0.2, 0.1]"),
    );
    assert_eq!(code(&aggdiff(&["calibrate", "--config", &two, "--out", s(&out)])), 2);
    let three = write_config(
        tmp.path(),
        "three.toml",
        &SMALL_SWEEP.replace("[0.2, 0.1, 0.05, 0.02]", "[0.2, 0.1, 0.05]"),
    );
    let o = aggdiff(&["calibrate", "--config", &three, "--out", s(&out)]);
    assert!(code(&o) < 2, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert!(json.is_object());
}

#[test]
fn sweep_directory_can_be_rechecked() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sweep.toml", SMALL_SWEEP);
    let out = tmp.path().join("out");
    let o = aggdiff(&["sweep", "--config", &cfg, "--out", s(&out)]);
    assert!(code(&o) < 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sweep.json").is_file());
    assert!(out.join("sweep.csv").is_file());
    let first = String::from_utf8_lossy(&o.stdout).into_owned();
    let verdict_lines = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
            .map(str::to_owned)
            .collect()
    };
    let again = aggdiff(&["check", "--traj", s(&out)]);
    assert_eq!(code(&again), code(&o));
    assert_eq!(verdict_lines(&first), verdict_lines(&String::from_utf8_lossy(&again.stdout)));
}
