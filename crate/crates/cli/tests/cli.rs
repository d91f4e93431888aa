use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use irrigation_core::rulebase::{classify, PumpDuty, SensorReading};
use irrigation_core::telemetry::{read_ndjson, replay, ServerStatus};

fn irrigate() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_irrigate"));
    for var in [
        "IRRIGATE_PORT",
        "IRRIGATE_WS_PORT",
        "IRRIGATE_LOG",
        "IRRIGATE_MODE",
        "IRRIGATE_WEIGHTS",
    ] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    irrigate().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn train_weights(path: &Path, seed: u64) {
    let out = run(&[
        "train",
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    for sub in ["train", "simulate", "serve", "feed", "oracle-table"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(stdout(&out).contains("Usage"));
    }
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["water-now"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--mode", "turbo"]).status.code(), Some(1));
}

#[test]
fn oracle_table_lists_every_band_combination() {
    let out = run(&["oracle-table", "--json"]);
    assert!(out.status.success());
    let rows: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 27);
    let count = |d: &str| rows.iter().filter(|r| r["duty"] == d).count();
    assert_eq!((count("full"), count("half"), count("off")), (1, 2, 24));
    for row in &rows {
        let e = &row["example"];
        let reading = SensorReading::new(
            e["t_c"].as_f64().unwrap(),
            e["h_pct"].as_f64().unwrap(),
            e["m_pct"].as_f64().unwrap(),
            0,
        )
        .unwrap();
        let duty: PumpDuty = row["duty"].as_str().unwrap().parse().unwrap();
        assert_eq!(classify(&reading).unwrap(), duty, "{row}");
    }
    assert_eq!(rows[0]["temperature"], "low");
    assert_eq!(rows[26]["soil_moisture"], "high");

    let table = run(&["oracle-table"]);
    assert_eq!(stdout(&table).lines().count(), 28);
    assert_eq!(stdout(&table), stdout(&run(&["oracle-table"])));
}

#[test]
fn train_is_deterministic_and_reports_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let out = run(&[
        "train",
        "--seed",
        "2",
        "--out",
        a.to_str().unwrap(),
        "--json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let agreement = report["oracle_agreement"].as_f64().unwrap();
    assert!((0.9..=1.0).contains(&agreement), "{report}");
    assert_eq!(report["eval_grid"], 13);

    train_weights(&b, 2);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let text = run(&["train", "--seed", "2", "--out", b.to_str().unwrap()]);
    assert!(stdout(&text).contains("oracle agreement on the 13x13x13 grid"));
}

#[test]
fn train_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("w.json");
    let out = out_path.to_str().unwrap();
    assert_eq!(
        run(&["train", "--grid", "1", "--out", out]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["train", "--learning-rate", "0", "--out", out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["train"]).status.code(), Some(1));
    let unwritable = dir.path().join("missing/dir/w.json");
    let res = run(&[
        "train",
        "--epochs",
        "1",
        "--out",
        unwritable.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("cannot write"));
    let diverged = run(&[
        "train",
        "--optimizer",
        "sgd",
        "--learning-rate",
        "1e308",
        "--out",
        out,
    ]);
    assert_eq!(diverged.status.code(), Some(2), "{}", stderr(&diverged));
}

#[test]
fn simulate_is_deterministic_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ndjson");
    let b = dir.path().join("b.ndjson");
    let started = Instant::now();
    let out = run(&[
        "simulate",
        "--seed",
        "3",
        "--duration",
        "3600",
        "--out",
        a.to_str().unwrap(),
        "--json",
    ]);
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(summary["pump_activations"].as_u64().unwrap() > 0);

    run(&[
        "simulate",
        "--seed",
        "3",
        "--duration",
        "3600",
        "--out",
        b.to_str().unwrap(),
    ]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let events = read_ndjson(bytes.as_slice()).unwrap();
    assert_eq!(events.len() as u64, summary["events"].as_u64().unwrap());
    assert!(replay(&events).is_ok());

    // without --out the log goes to stdout
    let piped = run(&["simulate", "--seed", "3", "--duration", "3600"]);
    assert_eq!(piped.stdout, bytes);
}

#[test]
fn simulate_rejects_bad_arguments() {
    assert_eq!(run(&["simulate", "--duration", "0"]).status.code(), Some(1));
    assert_eq!(
        run(&["simulate", "--duration", "-5"]).status.code(),
        Some(1)
    );
    let auto = run(&["simulate", "--mode", "auto", "--duration", "10"]);
    assert_eq!(auto.status.code(), Some(1));
    assert!(stderr(&auto).contains("--weights"));
    let missing = run(&[
        "simulate",
        "--mode",
        "auto",
        "--weights",
        "/nonexistent/w.json",
        "--duration",
        "10",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("cannot load weights"));
}

#[test]
fn simulate_auto_mode_uses_trained_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    train_weights(&weights, 1);
    let out = run(&[
        "simulate",
        "--mode",
        "auto",
        "--weights",
        weights.to_str().unwrap(),
        "--duration",
        "600",
        "--json",
        "--out",
        dir.path().join("log.ndjson").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(dir.path().join("log.ndjson")).unwrap();
    assert!(log.contains(r#""mode":"auto""#));
}

struct Server {
    child: Child,
    sensor: SocketAddr,
    http: SocketAddr,
}

impl Server {
    fn start(cmd: &mut Command) -> Server {
        let mut child = cmd
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = |key: &str| -> SocketAddr {
            line.split_whitespace()
                .find_map(|w| w.strip_prefix(key))
                .unwrap_or_else(|| panic!("no {key} in {line:?}"))
                .parse()
                .unwrap()
        };
        Server {
            sensor: addr("sensor="),
            http: addr("http="),
            child,
        }
    }

    fn status(&self) -> ServerStatus {
        let mut stream = TcpStream::connect(self.http).unwrap();
        stream
            .write_all(b"GET /status HTTP/1.1\r\nhost: localhost\r\nconnection: close\r\n\r\n")
            .unwrap();
        let mut raw = String::new();
        stream.read_to_string(&mut raw).unwrap();
        let (_, body) = raw.split_once("\r\n\r\n").unwrap();
        serde_json::from_str(body).unwrap()
    }

    fn send(&self, line: &str) -> serde_json::Value {
        let mut stream = TcpStream::connect(self.sensor).unwrap();
        stream.write_all(line.as_bytes()).unwrap();
        stream.write_all(b"\n").unwrap();
        let mut reply = String::new();
        BufReader::new(stream).read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    }

    fn stop(mut self) -> i32 {
        Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .unwrap();
        self.child.wait().unwrap().code().unwrap_or(-1)
    }
}

fn serve_cmd(log: &Path) -> Command {
    let mut cmd = irrigate();
    cmd.args([
        "serve",
        "--port",
        "0",
        "--ws-port",
        "0",
        "--log",
        log.to_str().unwrap(),
    ]);
    cmd
}

#[test]
fn serve_restart_reproduces_status() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let server = Server::start(&mut serve_cmd(&log));
    let started = Instant::now();
    let first = server.status();
    assert!(started.elapsed() < Duration::from_millis(100));
    assert_eq!(first.event_count, 1);

    let reply = server.send(r#"{"type":"reading","t_c":20.0,"h_pct":30.0,"m_pct":5.0,"ts_ms":1}"#);
    assert_eq!(reply["pump_on"], true);
    server.send(r#"{"type":"override","duty":"half"}"#);
    let before = server.status();
    assert_eq!(server.stop(), 0);

    let events = read_ndjson(std::fs::read(&log).unwrap().as_slice()).unwrap();
    assert_eq!(replay(&events).unwrap(), before);

    let server = Server::start(&mut serve_cmd(&log));
    assert_eq!(server.status(), before);
    assert_eq!(server.stop(), 0);
}

#[test]
fn serve_reads_environment_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let busy_port = busy.local_addr().unwrap().port().to_string();

    let mut cmd = irrigate();
    cmd.env("IRRIGATE_MODE", "manual:off")
        .env("IRRIGATE_LOG", &log)
        .env("IRRIGATE_PORT", "0")
        .env("IRRIGATE_WS_PORT", &busy_port)
        .args(["serve", "--ws-port", "0"]);
    let server = Server::start(&mut cmd);
    let status = server.status();
    assert_eq!(serde_json::to_value(status.mode).unwrap(), "manual:off");
    assert_eq!(server.stop(), 0);
    assert!(log.exists());

    let mut cmd = irrigate();
    cmd.env("IRRIGATE_WS_PORT", &busy_port)
        .args(["serve", "--port", "0"])
        .stderr(Stdio::piped());
    let out = cmd.output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot bind"));
}

#[test]
fn serve_rejects_bad_weights_and_auto_without_weights() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"version\":1}").unwrap();
    let out = run(&[
        "serve",
        "--port",
        "0",
        "--ws-port",
        "0",
        "--weights",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot load weights"));

    let out = run(&[
        "serve",
        "--port",
        "0",
        "--ws-port",
        "0",
        "--weights",
        "/nonexistent.json",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["serve", "--port", "0", "--ws-port", "0", "--mode", "auto"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_in_auto_mode_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    train_weights(&weights, 1);
    let log = dir.path().join("events.ndjson");
    let mut cmd = serve_cmd(&log);
    cmd.args(["--mode", "auto", "--weights", weights.to_str().unwrap()]);
    let server = Server::start(&mut cmd);
    let reply = server.send(r#"{"type":"reading","t_c":40.0,"h_pct":80.0,"m_pct":25.0,"ts_ms":1}"#);
    assert_eq!(reply["last_decision"]["mode"], "auto");
    assert_eq!(reply["last_decision"]["duty"], "off");
    assert_eq!(server.stop(), 0);
}

#[test]
fn feed_drives_a_live_service() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let server = Server::start(&mut serve_cmd(&log));
    let out = run(&[
        "feed",
        "--connect",
        &server.sensor.to_string(),
        "--duration",
        "1",
        "--poll-interval",
        "0.25",
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = stdout(&out);
    assert_eq!(lines.lines().count(), 4, "{lines}");
    assert!(lines.lines().next().unwrap().contains("pump on"));
    let status = server.status();
    assert!(status.pump_on);
    assert_eq!(server.stop(), 0);

    let refused = run(&["feed", "--connect", "127.0.0.1:1", "--duration", "1"]);
    assert_eq!(refused.status.code(), Some(2));
    assert_eq!(run(&["feed", "--duration", "0"]).status.code(), Some(1));
}
