use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_consensus"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["run", "x.json", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["examples", "--which", "7"]).status.code(), Some(2));
}

#[test]
fn missing_scenario_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "/nonexistent/scenario.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn example4_is_not_jointly_connected() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("example4.json");
    let o = run(&[
        "check-connectivity",
        s.to_str().unwrap(),
        "--delta",
        "0.1",
        "--window",
        "2",
        "--horizon",
        "100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["jointly_connected"], false);
    let csv = std::fs::read_to_string(dir.path().join("windows.csv")).unwrap();
    assert!(csv.starts_with("start,w_0_1,w_1_2,w_2_3,connected\n"));
}

#[test]
fn riccati_gain_for_example2() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("example2.json");
    let o = run(&[
        "design-gain",
        s.to_str().unwrap(),
        "--kappa1",
        "0.042",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let eigs: Vec<f64> = v["p_eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(eigs.iter().all(|&e| e > 0.0));
    // recompute the Riccati residual from the P on stdout
    let p: Vec<Vec<f64>> = serde_json::from_value(v["p"].clone()).unwrap();
    let a = [[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
    let b = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mut bbt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            bbt[i][j] = (0..2).map(|k| b[i][k] * b[j][k]).sum();
        }
    }
    let mul = |x: &[[f64; 3]; 3], y: &[[f64; 3]; 3]| {
        let mut z = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                z[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
            }
        }
        z
    };
    let pm = [
        [p[0][0], p[0][1], p[0][2]],
        [p[1][0], p[1][1], p[1][2]],
        [p[2][0], p[2][1], p[2][2]],
    ];
    let pa = mul(&pm, &a);
    let pgp = mul(&mul(&pm, &bbt), &pm);
    let mut res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let r = pa[j][i] + pa[i][j] - 0.042 * pgp[i][j] + if i == j { 1.0 } else { 0.0 };
            res += r * r;
            scale = scale.max(pgp[i][j].abs() * 0.042);
        }
    }
    assert!(res.sqrt() <= 1e-8 * scale.max(1.0), "residual {}", res.sqrt());
}

#[test]
fn validate_topology_reports_certificate() {
    let s = scenario("example1.json");
    let o = run(&["validate-topology", s.to_str().unwrap(), "--horizon", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["valid"], true);
    assert_eq!(v["certificate"], "periodic");
}

#[test]
fn example2_sweep_csv_tail() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "examples",
        "--which",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
        "--jobs",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let last = text.lines().last().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    assert_eq!(cols[0], "50");
    let lmin: f64 = cols[2].parse().unwrap();
    assert!((lmin - 0.072).abs() <= 0.005, "{lmin}");
}

#[test]
fn run_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = scenario("example3.json");
    for d in [&a, &b] {
        let o = run(&["run", s.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "trajectory.csv",
        "windows.csv",
        "alpha_windows.csv",
        "gram.csv",
        "witness.csv",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let report = std::fs::read_to_string(a.path().join("report.txt")).unwrap();
    assert!(report.contains("(A, B) controllable: no"));
}

#[test]
fn run_many_with_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let s3 = scenario("example3.json");
    let s1 = scenario("example1.json");
    let o = run(&[
        "run",
        s1.to_str().unwrap(),
        s3.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let e1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("example1/verdict.json")).unwrap()).unwrap();
    assert_eq!(e1["classification"], "exponential");
    assert!(dir.path().join("example3/witness.csv").exists());
}
