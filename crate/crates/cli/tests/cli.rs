use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clip21"))
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &tempfile::TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const CHEN: &str = r#"
T = 200
seed = 0
x0 = [1.0]
algorithm = "clip21_sgd"

[problem]
kind = "chen"

[oracle]
kind = "exact"

[hyper]
mode = "manual"
gamma = 0.1
tau = 1.0
"#;

#[test]
fn run_writes_csv_to_requested_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, CHEN);
    let out = dir.path().join("out.csv");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("t,grad_norm_sq,f_gap"));
    assert_eq!(csv.lines().count(), 201);
    assert!(stderr(&o).contains("final averaged gradient norm"));
}

#[test]
fn run_without_out_prints_csv_and_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &CHEN.replace("kind = \"exact\"", "kind = \"gaussian\"\nsigma = 0.5"));
    let run = |threads: &str| {
        let o = bin()
            .args(["run", "--seed", "9", "--threads", threads, "--config"])
            .arg(&cfg)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let a = run("1");
    assert_eq!(a.lines().count(), 201);
    assert_eq!(a, run("4"));
}

#[test]
fn invalid_config_exits_with_one_and_lists_problems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &CHEN.replace("gamma = 0.1", "gamma = -0.1").replace("T = 200", "T = 0"));
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("gamma"), "{err}");
    assert!(err.contains("T"), "{err}");
}

#[test]
fn missing_config_exits_with_one() {
    let o = bin().args(["run", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
T = 5000
seed = 0
x0 = [1.0, 1.0]
algorithm = "sgdm"

[problem]
kind = "quadratic"
smoothness = 1.0
dim = 2
n_workers = 1

[oracle]
kind = "exact"

[hyper]
mode = "manual"
gamma = 10.0
"#;
    let cfg = write_config(&dir, body);
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("step"));
}

#[test]
fn calibrate_prints_noise_and_spend() {
    let o = bin()
        .args(["calibrate", "--tau", "1", "--eps", "0.5", "--delta", "1e-5", "--T", "100"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let sigma: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("sigma_omega = "))
        .unwrap()
        .parse()
        .unwrap();
    let expect = 16.0 * (100.0 * (125.0 / 1e-5f64).ln() * (1e5f64).ln()).sqrt();
    assert!((sigma - expect).abs() <= 1e-12 * expect);
    assert!(text.contains("composed spend"));
}

#[test]
fn calibrate_rejects_epsilon_outside_unit_interval() {
    let o = bin()
        .args(["calibrate", "--tau", "1", "--eps", "2", "--delta", "1e-5", "--T", "100"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn chen_counterexample_table() {
    let o = bin().args(["counterexample", "--which", "chen"]).output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,clip_gd_final,clip21_final"));
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        // clip-GD stays put, Clip21 reaches the optimum
        assert_eq!(cols[0], cols[1]);
        assert!(cols[2].abs() < 1e-6);
    }
}

#[test]
fn sweep_prints_one_row_per_algorithm_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &CHEN.replace("T = 200", "T = 20"));
    let o = bin()
        .args(["sweep", "--axis", "tau", "--values", "0.5,1", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 2);
}

#[test]
fn shipped_config_runs_from_repo_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("logreg.csv");
    let o = bin()
        .current_dir(root())
        .args(["run", "--config", "configs/logreg.toml", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1001);
}
