use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn pipetrack() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pipetrack"));
    for (key, _) in std::env::vars() {
        if key.starts_with("PIPETRACK_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    pipetrack().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Value of a `key: value` summary line.
fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn simulate_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str, seed: &str| {
        let d = dir.path().join(name);
        let o = run(&["simulate", "--preset", "workshop", "--duration", "60", "--seed", seed, "--out", p(&d)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let read = |f: &str| std::fs::read(d.join(f)).unwrap();
        let summary: String = stdout(&o).lines().filter(|l| !l.starts_with("wrote")).collect();
        (read("samples.jsonl"), read("truth.jsonl"), summary)
    };
    let a = out("a", "7");
    let b = out("b", "7");
    let c = out("c", "8");
    assert!(!a.0.is_empty());
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    assert_eq!(a.1, c.1, "truth does not depend on the noise seed");
    let summary = run(&["simulate", "--preset", "workshop", "--duration", "60", "--out", p(&dir.path().join("d"))]);
    assert_eq!(field(&stdout(&summary), "epochs"), 120.0);
    assert_eq!(field(&stdout(&summary), "tags"), 4.0);
}

#[test]
fn seed_is_read_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let flag = dir.path().join("flag");
    let env = dir.path().join("env");
    assert!(run(&["simulate", "--preset", "crossing", "--duration", "5", "--seed", "11", "--out", p(&flag)])
        .status
        .success());
    let o = pipetrack()
        .args(["simulate", "--preset", "crossing", "--duration", "5", "--out", p(&env)])
        .env("PIPETRACK_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(flag.join("samples.jsonl")).unwrap(),
        std::fs::read(env.join("samples.jsonl")).unwrap()
    );
}

#[test]
fn zero_duration_writes_empty_streams() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--preset", "workshop", "--duration", "0", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("samples.jsonl")).unwrap().len(), 0);
    assert_eq!(std::fs::read(dir.path().join("truth.jsonl")).unwrap().len(), 0);
    let text = stdout(&o);
    assert_eq!(field(&text, "epochs"), 0.0);
    assert_eq!(field(&text, "samples"), 0.0);
    assert_eq!(field(&text, "dropout rate"), 0.0);
}

#[test]
fn missing_scenario_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-scenario.json");
    let o = run(&["simulate", "--scenario", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
}

#[test]
fn invalid_scenario_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["scenario", "--preset", "workshop"]);
    let mut s: Value = serde_json::from_slice(&o.stdout).unwrap();
    s["epoch_ms"] = Value::from(0);
    s["tag_classes"][0]["read_probability"] = Value::from(1.5);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, s.to_string()).unwrap();
    let o = run(&["simulate", "--scenario", p(&path), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("epoch") && err.contains("read_probability"), "{err}");
}

#[test]
fn fit_recovers_sweep_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let model = dir.path().join("model.txt");
    for seed in ["1", "2", "3"] {
        let o = run(&[
            "sweep", "--rss-d0", "-54.5", "--n", "1.8638", "--sigma", "3", "--from", "1", "--to", "12", "--seed", seed,
            "--out", p(&csv),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = run(&["fit", "--samples", p(&csv), "--out", p(&model)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = stdout(&o);
        assert!((field(&text, "n") - 1.8638).abs() <= 0.1, "{text}");
        assert!((field(&text, "sigma") - 3.0).abs() <= 0.3, "{text}");
        assert!(field(&text, "mse") > 0.0);
    }
    let record = std::fs::read_to_string(&model).unwrap();
    assert!(record.contains("n=") && record.contains("rss_d0="), "{record}");
}

#[test]
fn noiseless_sweep_fits_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let model = dir.path().join("model.txt");
    assert!(run(&["sweep", "--sigma", "0", "--per-station", "3", "--out", p(&csv)]).status.success());
    let o = run(&["fit", "--samples", p(&csv), "--out", p(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fitted: std::collections::HashMap<String, f64> = std::fs::read_to_string(&model)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect();
    assert!((fitted["n"] - 1.8638).abs() < 1e-9, "{fitted:?}");
    assert!((fitted["rss_d0"] + 54.5).abs() < 1e-9, "{fitted:?}");
}

#[test]
fn single_distance_fit_fails() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    std::fs::write(&csv, "distance_m,rss_dbm\n3,-63.4\n3,-62.9\n3,-64.0\n").unwrap();
    let o = run(&["fit", "--samples", p(&csv)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
}

fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

/// Stationary tag on the bench array, no shadowing, every read succeeds.
fn noiseless_bench(dir: &Path) -> std::path::PathBuf {
    let o = run(&["scenario", "--preset", "passive-bench"]);
    let mut s: Value = serde_json::from_slice(&o.stdout).unwrap();
    s["tag_classes"][0]["model"]["sigma"] = Value::from(0.0);
    s["tag_classes"][0]["read_probability"] = Value::from(1.0);
    s["tags"] = serde_json::json!([
        {"tag_id": "near", "class": s["tag_classes"][0]["name"], "waypoints": [{"t": 0, "x": 9.0, "y": 3.0}]},
        {"tag_id": "far", "class": s["tag_classes"][0]["name"], "waypoints": [{"t": 0, "x": 12.0, "y": 8.0}]}
    ]);
    let path = dir.join("noiseless.json");
    std::fs::write(&path, s.to_string()).unwrap();
    path
}

#[test]
fn zero_noise_eval_has_no_error() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = noiseless_bench(dir.path());
    let out = dir.path().join("run");
    let o = run(&["simulate", "--scenario", p(&scenario), "--duration", "30", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = dir.path().join("table.csv");
    let o = run(&[
        "eval", "--scenario", p(&scenario), "--samples", p(&out.join("samples.jsonl")), "--truth",
        p(&out.join("truth.jsonl")), "--antennas", "1,4", "--out", p(&table),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&std::fs::read_to_string(&table).unwrap());
    assert_eq!(rows.len(), 5 * 2 * 2);
    for r in &rows {
        assert!(r["distance_samples"].parse::<usize>().unwrap() > 0);
        // A single antenna ranges to itself; four anchors pin the position.
        if r["antennas"] == "1" {
            assert!(r["mean_error_m"].parse::<f64>().unwrap() < 1e-6, "{r:?}");
        } else {
            assert!(r["mean_position_error_m"].parse::<f64>().unwrap() < 1e-6, "{r:?}");
        }
    }
}

#[test]
fn calibrated_eval_prefers_four_antenna_selection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["simulate", "--preset", "passive-bench", "--seed", "5", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "eval", "--preset", "passive-bench", "--samples", p(&out.join("samples.jsonl")), "--truth",
        p(&out.join("truth.jsonl")), "--technique", "sc", "--antennas", "2,4", "--filtered", "off", "--calibration",
        "fitted",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    let err = |n: &str| -> f64 { rows.iter().find(|r| r["antennas"] == n).unwrap()["mean_error_m"].parse().unwrap() };
    assert!(err("4") < err("2"), "{}", stdout(&o));
}

#[test]
fn misaligned_truth_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--preset", "crossing", "--duration", "5", "--out", p(&out)]).status.success());
    let truth = dir.path().join("other.jsonl");
    std::fs::write(&truth, "{\"t_ms\":0,\"tag_id\":\"ghost\",\"x\":1.0,\"y\":1.0}\n").unwrap();
    let o = run(&[
        "eval", "--preset", "crossing", "--samples", p(&out.join("samples.jsonl")), "--truth", p(&truth),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn unknown_technique_is_a_usage_error() {
    let o = run(&[
        "eval", "--preset", "workshop", "--samples", "s.jsonl", "--truth", "t.jsonl", "--technique", "xyz",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("xyz"));
}

#[test]
fn serve_help_prints_usage() {
    let o = run(&["serve", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--config", "--port", "--replay", "--speed", "--model", "--technique", "--epoch-ms"] {
        assert!(text.contains(flag), "{flag} missing from {text}");
    }
}

/// Service config around the workshop floor map.
fn service_config(dir: &Path) -> std::path::PathBuf {
    let o = run(&["scenario", "--preset", "workshop"]);
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    std::fs::write(dir.join("floor_map.json"), s["floor_map"].to_string()).unwrap();
    let cfg = serde_json::json!({
        "floor_map": "floor_map.json",
        "model": {"rss_d0": -54.5, "n": 1.8638},
        "ports": {"http": 0}
    });
    let path = dir.join("service.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn serve_on_a_taken_port_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = service_config(dir.path());
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--config", p(&cfg), "--port", &port]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&port), "{}", stderr(&o));
}

#[test]
fn serve_with_missing_config_exits_2() {
    let o = run(&["serve", "--config", "/nonexistent/service.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/service.json"));
}

struct Server {
    child: Child,
    http: String,
    feed: Option<String>,
}

impl Server {
    fn spawn(args: &[&str]) -> Self {
        let mut child = pipetrack().args(args).stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap();
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let mut http = None;
        let mut feed = None;
        for line in lines.by_ref() {
            let line = line.unwrap();
            if let Some(a) = line.strip_prefix("listening on http://") {
                http = Some(a.to_string());
            } else if let Some(a) = line.strip_prefix("sample feed on tcp://") {
                feed = Some(a.to_string());
            }
            if http.is_some() && (feed.is_some() || !args.contains(&"--ingest-port")) {
                break;
            }
        }
        Self {
            child,
            http: http.expect("service did not report its address"),
            feed,
        }
    }

    fn get(&self, path: &str) -> Value {
        let mut s = TcpStream::connect(&self.http).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut text = String::new();
        s.read_to_string(&mut text).unwrap();
        let body = text.split_once("\r\n\r\n").unwrap().1;
        serde_json::from_str(body).unwrap()
    }

    fn wait_for(&self, what: &str, f: impl Fn(&Server) -> bool) {
        let deadline = Instant::now() + Duration::from_secs(20);
        while !f(self) {
            assert!(Instant::now() < deadline, "timed out waiting for {what}");
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    /// SIGTERM, then the exit status.
    fn terminate(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status;
            }
            if Instant::now() > deadline {
                let _ = self.child.kill();
                panic!("service ignored SIGTERM");
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

/// Pipes with a reported position, sorted.
fn located(v: &Value) -> Vec<String> {
    let mut ids: Vec<String> = v
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| !p["last_position"].is_null())
        .map(|p| p["pipe_id"].as_str().unwrap().to_string())
        .collect();
    ids.sort();
    ids
}

#[test]
fn replayed_log_moves_pipes_in_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = service_config(dir.path());
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--preset", "workshop", "--duration", "20", "--out", p(&out)]).status.success());
    let log = out.join("samples.jsonl");
    let server = Server::spawn(&["serve", "--config", p(&cfg), "--replay", p(&log), "--speed", "40"]);
    let mut tags: Vec<String> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["tag"].as_str().unwrap().to_string())
        .collect();
    tags.sort();
    tags.dedup();
    assert!(tags.len() >= 2);
    server.wait_for("positions", |s| located(&s.get("/api/pipes")) == tags);
    for pipe in server.get("/api/pipes").as_array().unwrap() {
        let (x, y) = (pipe["last_position"]["x"].as_f64().unwrap(), pipe["last_position"]["y"].as_f64().unwrap());
        assert!((0.0..=205.0).contains(&x) && (0.0..=17.0).contains(&y), "{pipe}");
    }
    let health = server.get("/api/health");
    assert_eq!(health["status"], "ok");
    assert!(health["fixes"].as_u64().unwrap() > 0);
    assert!(server.terminate().success());
}

#[test]
fn replay_command_feeds_a_running_service() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = service_config(dir.path());
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--preset", "crossing", "--out", p(&out)]).status.success());
    let log = out.join("samples.jsonl");
    let sent = std::fs::read_to_string(&log).unwrap().lines().count() as u64;
    let server = Server::spawn(&["serve", "--config", p(&cfg), "--ingest-port", "0"]);
    let feed = server.feed.clone().unwrap();
    let o = run(&["replay", "--log", p(&log), "--to", &feed]);
    assert!(o.status.success(), "{}", stderr(&o));
    server.wait_for("all samples", |s| s.get("/api/health")["samples"].as_u64() == Some(sent));
    server.wait_for("a position", |s| located(&s.get("/api/pipes")) == ["P-2001"]);
    assert!(server.terminate().success());
}

#[test]
fn replay_to_stdout_preserves_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--preset", "crossing", "--duration", "4", "--out", p(&out)]).status.success());
    let log = out.join("samples.jsonl");
    let o = run(&["replay", "--log", p(&log)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), std::fs::read_to_string(&log).unwrap());
}

#[test]
fn compact_drops_malformed_and_expired_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--preset", "crossing", "--duration", "4", "--out", p(&out)]).status.success());
    let log = out.join("samples.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let total = text.lines().count();
    let early = text.lines().filter(|l| l.starts_with("{\"t\":0,")).count();
    assert!(early > 0);
    std::fs::write(&log, format!("{text}not json\n")).unwrap();
    let o = run(&["compact", "--log", p(&log), "--keep-from", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    assert_eq!(field(&summary, "malformed"), 1.0);
    assert_eq!(field(&summary, "expired"), early as f64);
    assert_eq!(field(&summary, "kept"), (total - early) as f64);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), total - early);
}
