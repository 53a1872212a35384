use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sensing"))
}

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/phytophthora")
        .join(rel)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_fixtures() {
    let o = run(bin().arg("validate").args(
        [
            "sdd/tmp-100.toml",
            "sdd/hum-200.toml",
            "sdd/lw-300.toml",
            "domains/phytophthora.toml",
            "fleet.toml",
            "requests/john.toml",
            "config.toml",
        ]
        .map(fixture),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("ok ")).count(),
        7
    );
}

#[test]
fn validate_rejects_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"request": {"attributes": ["airStress"], "format": "json-lines", "interval_ms": 0, "annotations": true},
            "user": {"id": "u", "sink": {"kind": "stream-endpoint"}}}"#,
    )
    .unwrap();
    let o = run(bin().arg("validate").arg(&bad).arg(fixture("fleet.toml")));
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(
        out.contains("invalid") && out.contains("[invalid-interval]"),
        "{out}"
    );
    assert!(out.contains("ok "), "{out}");
}

#[test]
fn run_scenario_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("run-scenario")
        .arg("--config")
        .arg(fixture("config.toml"))
        .arg("--out")
        .arg(out.path())
        .args(["--duration-ms", "10000"]));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("delivered=10"), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["exit_code"], 0);
    assert_eq!(report["subscriptions"][0]["delivered"], 10);
    let lines = std::fs::read_to_string(out.path().join("john.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    assert_eq!(
        std::fs::read_dir(out.path().join("plans")).unwrap().count(),
        1
    );
}

#[test]
fn missing_config_is_a_validation_failure() {
    let o = run(bin().args(["run-scenario", "--config", "/nonexistent/config.toml"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn local_submit_and_inspect() {
    let out = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("submit")
        .arg(fixture("requests/john.toml"))
        .arg("--config")
        .arg(fixture("config.toml"))
        .arg("--out")
        .arg(out.path())
        .args(["--duration-ms", "3000"]));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["delivered"], 3);
    assert_eq!(v["receipt"]["plan_summary"]["sources"], 3);

    let o = run(bin()
        .args(["inspect", "sensors", "--config"])
        .arg(fixture("config.toml")));
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);

    let o = run(bin()
        .args(["inspect", "widgets", "--config"])
        .arg(fixture("config.toml")));
    assert_eq!(o.status.code(), Some(1));
}

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve() -> Server {
    let mut child = bin()
        .arg("serve")
        .arg("--config")
        .arg(fixture("config.toml"))
        .args(["--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .unwrap_or_else(|| panic!("unexpected banner `{line}`"))
        .to_string();
    Server { child, addr }
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    body
}

#[test]
fn serve_accepts_requests_over_http() {
    let server = serve();
    let endpoint = format!("http://{}", server.addr);

    let health = http_get(&server.addr, "/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"sensors\":3"), "{health}");

    let o = run(bin()
        .arg("submit")
        .arg(fixture("requests/john.toml"))
        .args(["--endpoint", &endpoint]));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let receipt: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(receipt["reused"], false);

    let o = run(bin()
        .arg("submit")
        .arg(fixture("requests/john.toml"))
        .args(["--endpoint", &endpoint]));
    let again: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(again["reused"], true);
    assert_eq!(again["plan_id"], receipt["plan_id"]);

    let o = run(bin().args(["inspect", "plans", "--endpoint", &endpoint]));
    assert_eq!(o.status.code(), Some(0));
    let plans: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(plans[0]["subscriber_count"], 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"request": {"attributes": ["cropYieldForecast"], "format": "csv", "interval_ms": 10, "annotations": true}, "user": {"id": "u", "sink": {"kind": "stream-endpoint"}}}"#).unwrap();
    let o = run(bin()
        .arg("submit")
        .arg(&bad)
        .args(["--endpoint", &endpoint]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("unknown-attribute"));

    let missing = http_get(&server.addr, "/inspect/widgets");
    assert!(missing.starts_with("HTTP/1.1 404"), "{missing}");
}
