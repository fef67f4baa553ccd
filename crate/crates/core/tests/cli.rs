use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lpvjump::analysis::AnalysisCertificate;
use lpvjump::synthesis::Controller;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpvjump"))
}

fn experiments() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
        .parse()
        .unwrap()
}

const LOWPASS: &str = r#"
n = 1
n_w = 1
n_z = 1
box = [0.0, 1.0]
h = 0.001
lambda0 = 0.0

[matrices.A]
0 = [[-1.0]]

[matrices.E]
0 = [[1.0]]

[matrices.C]
0 = [[1.0]]
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn analyze_lowpass_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let desc = write(dir.path(), "lp.toml", LOWPASS);
    let cert = dir.path().join("cert.toml");
    let o = run(&["analyze", desc.to_str().unwrap(), "--grid", "5", "--out", cert.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let gamma = summary_value(&stdout(&o), "gamma");
    assert!((1.0..=1.05).contains(&gamma), "{gamma}");
    let c = AnalysisCertificate::from_text(&std::fs::read_to_string(cert).unwrap()).unwrap();
    assert!((c.gamma - gamma).abs() < 1e-8 * gamma);
    assert!(c.variables.contains_key("P"));
}

#[test]
fn theorem_two_notes_default_multiplier() {
    let o = run(&[
        "analyze",
        experiments().join("section51.toml").to_str().unwrap(),
        "--theorem",
        "2",
        "--h",
        "0.05",
        "--grid",
        "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("lambda_hat defaults"), "{out}");
    assert_eq!(summary_value(&out, "lambda_hat"), 10.005);
}

#[test]
fn malformed_description_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let desc = write(dir.path(), "bad.toml", "n = 2\nn_w = [\n");
    let o = run(&["analyze", desc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse error"));
}

#[test]
fn zero_input_matrix_is_infeasible() {
    let text = std::fs::read_to_string(experiments().join("section52.toml"))
        .unwrap()
        .replace("0 = [[1.0], [0.0]]", "0 = [[0.0], [0.0]]");
    let dir = tempfile::tempdir().unwrap();
    let desc = write(dir.path(), "nob.toml", &text);
    let o = run(&["synthesize", desc.to_str().unwrap(), "--grid", "8"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oversized_step_is_a_usage_error() {
    let o = run(&["simulate", experiments().join("section52.toml").to_str().unwrap(), "--dt", "0.06"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synthesize_then_simulate_closed_loop() {
    let dir = tempfile::tempdir().unwrap();
    let ctrl = dir.path().join("ctrl.toml");
    let desc = experiments().join("section52.toml");
    let o = run(&["synthesize", desc.to_str().unwrap(), "--grid", "10", "--out", ctrl.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(summary_value(&out, "gamma_closed_loop") <= 1.1 * summary_value(&out, "gamma_synthesis"));
    let c = Controller::from_text(&std::fs::read_to_string(&ctrl).unwrap()).unwrap();
    assert_eq!(c.k.shape(), (1, 2));

    // A description naming the controller picks it up relative to its own location.
    let text = std::fs::read_to_string(&desc).unwrap().replace("lambda0 = 10.0", "lambda0 = 10.0\ncontroller = \"ctrl.toml\"");
    let local = write(dir.path(), "closed.toml", &text);
    let ms = dir.path().join("ms.csv");
    let o = run(&[
        "simulate",
        local.to_str().unwrap(),
        "--runs",
        "8",
        "--horizon",
        "10",
        "--w",
        "H(t)-H(t-2)",
        "--out",
        ms.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("loop: closed") && out.contains("decays: true"), "{out}");
    let csv = std::fs::read_to_string(&ms).unwrap();
    assert!(csv.starts_with("t,mean_sq\n0,5\n"), "{}", &csv[..40]);
    assert_eq!(csv.lines().count(), 10_002);

    let o = run(&["simulate", local.to_str().unwrap(), "--open-loop", "--horizon", "1"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("loop: open"));
}

#[test]
fn simulation_is_byte_identical_across_runs() {
    let desc = experiments().join("section52.toml");
    let args = ["simulate", desc.to_str().unwrap(), "--seed", "7", "--horizon", "3", "--w", "H(t)-H(t-2)"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("t,x1,x2,rho,tau,z1,jump\n0,-1,2,"), "{}", &text[..60]);
    assert!(!text.contains('\r'));
    let other = run(&["simulate", desc.to_str().unwrap(), "--seed", "8", "--horizon", "3"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn sweep_rows_follow_request_order() {
    let desc = experiments().join("section51.toml");
    let args = [
        "sweep",
        desc.to_str().unwrap(),
        "--vary",
        "h",
        "--range",
        "0.02,0.1",
        "--points",
        "3",
        "--theorems",
        "2,1",
        "--grid",
        "8",
    ];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "value,gamma_thm2,status_thm2,gamma_thm1,status_thm1");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.02,") && lines[3].starts_with("0.1,"));
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        let (g2, g1): (f64, f64) = (cells[1].parse().unwrap(), cells[3].parse().unwrap());
        assert!(g1 <= g2 + 1e-6, "{l}");
    }
}

#[test]
fn degenerate_range_gives_one_point() {
    let o = run(&[
        "sweep",
        experiments().join("section51.toml").to_str().unwrap(),
        "--vary",
        "lambda0",
        "--range",
        "5,5",
        "--theorems",
        "1",
        "--grid",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn unknown_theorem_in_sweep_exits_2() {
    let o = run(&[
        "sweep",
        experiments().join("section51.toml").to_str().unwrap(),
        "--vary",
        "h",
        "--range",
        "0.1,0.1",
        "--theorems",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
