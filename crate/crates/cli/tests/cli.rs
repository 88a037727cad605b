use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cyclemax::bdp::BirthDeathSpec;
use cyclemax::networks::{norton_reduce, NetworkSpec};
use tempfile::TempDir;

const MM1: &str = r#"{"label":"mm1","lambda":0.5,"mu":1.0,"psi":{"kind":"preset","name":"mm1"},"phi":{"kind":"preset","name":"mm1"}}"#;
const NET: &str = r#"{"mu0":0.8,"stations":[{"kind":"ss","mu":2.0},{"kind":"ms","s":2,"mu":1.0},{"kind":"is","mu":1.5}],
"routing":[[0.1,0.5,0.4,0.0],[0.3,0.0,0.3,0.4],[0.5,0.2,0.0,0.3],[0.6,0.2,0.2,0.0]]}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclemax")).args(args).output().unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records(out: &[u8]) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_reader(out);
    let header = r.headers().unwrap().clone();
    (header, r.records().map(|x| x.unwrap()).collect())
}

#[test]
fn cdf_csv_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "mm1.json", MM1);
    let out = run(&["cdf", "--spec", s(&spec), "--nmax", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = records(&out.stdout);
    assert_eq!(header, vec!["n", "cdf", "conditional_cdf", "failure_rate", "blocking_prob"]);
    assert_eq!(rows.len(), 51);
    for row in &rows {
        let n: i32 = row[0].parse().unwrap();
        let cdf: f64 = row[1].parse().unwrap();
        // 1 - 1/(2^{n+1} - 1) for rho = 1/2
        let want = 1.0 - 1.0 / (2f64.powi(n + 1) - 1.0);
        assert!((cdf - want).abs() < 1e-14, "n={n}: {cdf} vs {want}");
    }
}

#[test]
fn json_format_and_out_file() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "mm1.json", MM1);
    let dest = dir.path().join("cdf.json");
    let out = run(&["cdf", "--spec", s(&spec), "--nmax", "5", "--format", "json", "--out", s(&dest)]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dest).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);
    assert_eq!(v[1]["n"], 1);
}

#[test]
fn tail_and_extremes_outputs() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "mm1.json", MM1);
    let out = run(&["tail", "--spec", s(&spec)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["regime"], "Subcritical");
    assert!((v["limit_constant"].as_f64().unwrap() - 0.5).abs() < 1e-9);

    let out = run(&["extremes", "--spec", s(&spec), "--k", "1024,4096"]);
    let (header, rows) = records(&out.stdout);
    assert_eq!(header, vec!["k", "a_k", "b_k"]);
    let b: f64 = rows[0][2].parse().unwrap();
    assert!((b - 10.0).abs() < 1e-9);

    let out = run(&["extremes", "--spec", s(&spec), "--table", "envelope"]);
    let (header, rows) = records(&out.stdout);
    assert_eq!(header, vec!["x", "lower", "upper"]);
    for r in rows {
        assert!(r[1].parse::<f64>().unwrap() <= r[2].parse::<f64>().unwrap());
    }

    let out = run(&["extremes", "--spec", s(&spec), "--table", "compactness", "--delta", "2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], "compact");
    for key in ["delta", "grid", "R_min", "R_max"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn simulate_is_deterministic_given_seed() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "mm1.json", MM1);
    let args = ["simulate", "--spec", s(&spec), "--nmax", "10", "--cycles", "20000", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let (header, rows) = records(&a.stdout);
    assert_eq!(header, vec!["n", "empirical_cdf", "exact_cdf", "abs_err"]);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() < 0.02));

    let out = run(&["simulate", "--spec", s(&spec), "--k", "1000,10000", "--reps", "100", "--seed", "3"]);
    let (header, rows) = records(&out.stdout);
    assert_eq!(header, vec!["k", "mean_ratio", "median_ratio", "q05", "q95"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn network_reduce_writes_loadable_spec() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "net.json", NET);
    let dest = dir.path().join("induced.json");
    let out = run(&["network-reduce", "--in", s(&net), "--nmax", "500", "--out", s(&dest)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = BirthDeathSpec::load(&dest).unwrap();
    let direct = norton_reduce(&NetworkSpec::from_json_str(NET).unwrap(), 500).unwrap().induced;
    assert_eq!(loaded, direct);
}

#[test]
fn emitted_spec_round_trips() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "net.json", NET);
    let first = dir.path().join("a.json");
    run(&["network-reduce", "--in", s(&net), "--nmax", "80", "--out", s(&first)]);
    let spec = BirthDeathSpec::load(&first).unwrap();
    let second = dir.path().join("b.json");
    spec.save(&second).unwrap();
    assert_eq!(BirthDeathSpec::load(&second).unwrap(), spec);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn error_lines_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = run(&["cdf", "--spec", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR Io: "));

    let bad = write(&dir, "bad.json", &MM1.replace("\"lambda\":0.5", "\"lambda\":-1"));
    let out = run(&["classify", "--spec", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR InvalidSpec: "));

    // computational: the factorial norming does not fit a geometric tail
    let spec = write(&dir, "mm1.json", MM1);
    let out = run(&["extremes", "--spec", s(&spec), "--kind", "stirling"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR KindMismatch: "));

    let out = run(&["cdf", "--spec", s(&spec), "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_cyclemax"))
        .args(["verify", "--suite", "fast"])
        .env("CYCLEMAX_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR InvalidSpec: "));
}

#[test]
fn verify_prints_table_and_exit_code_follows_it() {
    let out = Command::new(env!("CARGO_BIN_EXE_cyclemax"))
        .args(["verify", "--suite", "fast", "--seed", "42"])
        .env("CYCLEMAX_THREADS", "2")
        .output()
        .unwrap();
    let (header, rows) = records(&out.stdout);
    assert_eq!(header, vec!["id", "check", "result", "detail"]);
    assert_eq!(rows.len(), 11);
    let failed = rows.iter().filter(|r| &r[2] == "FAIL").count();
    assert_eq!(out.status.code(), Some(if failed == 0 { 0 } else { 1 }));
}
