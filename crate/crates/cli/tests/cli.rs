use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
mesh.levels = 2, 4
mesh.gamma1 = bottom
problem.b = 1
problem.M1 = 1
problem.M2 = 1
zd.kind = field
zd.field = xy
alpha.list = 10
reference.n = 16
output.dir = out
alpha.n = 4
diagonal.n0 = 2
diagonal.steps = 2
";

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixed-ocp")).args(args).current_dir(dir).output().expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("study.conf"), CONFIG).unwrap();
    dir
}

#[test]
fn verify_succeeds() {
    let dir = workspace();
    let out = run(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = workspace();
    let out = run(&["study-h", "--config", "absent.conf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("absent.conf"));
}

#[test]
fn malformed_config_is_an_input_error() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.conf"), CONFIG.replace("reference.n = 16", "reference.n = 10")).unwrap();
    let out = run(&["constants", "-c", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let dir = workspace();
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn study_h_writes_tables_with_exact_headers() {
    let dir = workspace();
    let out = run(&["study-h", "-c", "study.conf"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("out/study_h.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("h,alpha,err_control,err_state,err_adjoint,J,iters"));
    assert_eq!(lines.count(), 4);
    let rates = std::fs::read_to_string(dir.path().join("out/rates_h.csv")).unwrap();
    assert!(rates.starts_with("study,variant,quantity,slope,intercept,r_squared,warning"));
}

#[test]
fn optimizers_agree_through_the_cli() {
    let dir = workspace();
    let cost = |args: &[&str]| -> f64 {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout).to_string();
        let line = stdout.lines().find(|l| l.starts_with("cost = ")).expect("cost line").to_string();
        line["cost = ".len()..].parse().unwrap()
    };
    let fp = cost(&["optimize", "-c", "study.conf", "--n", "8", "--alpha", "10", "--relaxation", "auto"]);
    let kkt = cost(&["optimize", "-c", "study.conf", "--n", "8", "--alpha", "10", "--method", "kkt"]);
    assert!((fp - kkt).abs() <= 1e-10 * kkt.abs());
    assert!(dir.path().join("out/optimum.csv").exists());
}

#[test]
fn plain_iteration_on_robin_fails_numerically() {
    let dir = workspace();
    let out = run(&["optimize", "-c", "study.conf", "--n", "8", "--alpha", "10"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_dumps_a_readable_mesh() {
    let dir = workspace();
    let out = run(&["solve", "-c", "study.conf", "--dump-mesh", "mesh.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("mesh.txt")).unwrap();
    let mesh = mixed_ocp::Mesh::from_text(&text).unwrap();
    assert_eq!(mesh.vertex_count(), 9);
    let solution = std::fs::read_to_string(dir.path().join("out/solution.csv")).unwrap();
    assert_eq!(solution.lines().count(), 10);
}
