use std::fs;
use std::io::{BufRead, BufReader};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fogbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogbench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FIBER: &str = "[topology]\nsensor_link = \"fiber_1g\"\n";

#[test]
fn validate_prints_rates_and_warnings() {
    let o = fogbench(&["validate", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rates"]["sensor_raw_bps"].as_f64(), Some(19_200.0));
    assert_eq!(v["config_hash"].as_str().map(str::len), Some(64));
    let warnings = v["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("lorawan")));

    let o = fogbench(&["validate"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("kbit/s"));
}

#[test]
fn invalid_field_is_named_and_fails() {
    let o = fogbench(&["validate", "--exceed-prob", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exceed_prob"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[workload]\nno_such_key = 1\n").unwrap();
    let o = fogbench(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn run_writes_report_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, FIBER).unwrap();
    let out = dir.path().join("out");
    let o = fogbench(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--n-sensors",
        "10",
        "--n-clients",
        "5",
        "--duration",
        "15",
        "--verify",
        "--trace",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["mode"], "sim");
    assert_eq!(r["verify"]["passed"], true);
    assert!(r["result_digest"].is_string());
    let csv = fs::read_to_string(out.join("samples.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().contains("raw_ns"));
    assert!(lines.count() > 100);
    assert!(fs::metadata(out.join("trace.csv")).unwrap().len() > 0);
    assert!(stdout(&o).contains("edge"));
}

#[test]
fn generate_writes_ndjson() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("w.ndjson");
    let o = fogbench(&[
        "generate",
        "--n-sensors",
        "2",
        "--n-clients",
        "3",
        "--duration",
        "2",
        "--out",
        file.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&file).unwrap();
    let mut readings = 0;
    let mut queries = 0;
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        match v["type"].as_str().unwrap() {
            "reading" => readings += 1,
            "query" => queries += 1,
            t => panic!("unexpected type {t}"),
        }
    }
    assert_eq!(readings, 6 * 2 * 200);
    assert_eq!(queries, 3 * 2);
}

#[test]
fn external_run_against_served_store() {
    let mut server = Command::new(env!("CARGO_BIN_EXE_fogbench"))
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ext");
    let o = fogbench(&[
        "run",
        "--mode",
        "external",
        "--endpoint",
        &addr,
        "--n-sensors",
        "2",
        "--n-clients",
        "4",
        "--duration",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["mode"], "external");
    assert_eq!(r["sut_scope"], "store");
    assert_eq!(r["failures"]["ingest_failures"], 0);
    assert!(r["counters"]["committed"].as_u64().unwrap() > 0);
}

#[test]
fn external_run_without_server_aborts() {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    drop(l);
    let o = fogbench(&["run", "--mode", "external", "--endpoint", &addr, "--duration", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unreachable"), "{}", stderr(&o));
}
