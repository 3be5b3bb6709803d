use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn react_tod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_react-tod"))
        .args(args)
        .env_remove("REACT_TOD_API_BASE")
        .output()
        .expect("binary runs")
}

fn simulate(out: &Path, extra: &[&str]) -> Output {
    simulate_n(out, "5", extra)
}

fn simulate_n(out: &Path, n: &str, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--dialogues", n, "--seed", "7", "--backend", "scripted", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    react_tod(&args)
}

#[test]
fn simulate_writes_artifacts_and_report_matches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = simulate(&out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("Success Rate"));
    for f in ["dialogues.jsonl", "metrics.json", "metrics.txt", "issues.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let logs = out.join("dialogues.jsonl");
    let r = react_tod(&["report", "--logs", logs.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(String::from_utf8(r.stdout).unwrap(), fs::read_to_string(out.join("metrics.txt")).unwrap());
}

#[test]
fn parallel_jobs_keep_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(simulate(&a, &[]).status.success());
    assert!(simulate(&b, &["--jobs", "3"]).status.success());
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
}

#[test]
fn traces_filter_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(simulate_n(&out, "2", &["--scenario", "hallucinated_slot"]).status.success());
    let logs = out.join("dialogues.jsonl");
    let t = react_tod(&["traces", "--logs", logs.to_str().unwrap(), "--issue", "InvalidSlot"]);
    assert!(t.status.success());
    let text = String::from_utf8(t.stdout).unwrap();
    assert_eq!(text.matches("=== dialogue").count(), 2);
    assert!(text.contains("Action: db_query"));
    let none = react_tod(&["traces", "--logs", logs.to_str().unwrap(), "--issue", "RoleSwitch"]);
    assert!(none.status.success() && none.stdout.is_empty());

    let sample = dir.path().join("s.jsonl");
    let s = react_tod(&["sample", "--logs", logs.to_str().unwrap(), "-k", "1", "--seed", "3", "--out", sample.to_str().unwrap()]);
    assert!(s.status.success());
    assert_eq!(fs::read_to_string(&sample).unwrap().lines().count(), 1);
}

#[test]
fn empty_log_dumps_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("empty.jsonl");
    fs::write(&logs, "").unwrap();
    let t = react_tod(&["traces", "--logs", logs.to_str().unwrap()]);
    assert_eq!(t.status.code(), Some(0));
    assert!(t.stdout.is_empty());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(simulate_n(&out, "0", &[]).status.code(), Some(2));
    assert_eq!(simulate(&out, &["--db", "/nonexistent/db.json"]).status.code(), Some(2));
    assert_eq!(simulate(&out, &["--scenario", "no_such_fixture"]).status.code(), Some(2));
    assert_eq!(react_tod(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(react_tod(&["traces", "--logs", "/nonexistent.jsonl"]).status.code(), Some(2));
    // Without REACT_TOD_API_BASE the http backend is misconfigured.
    assert_eq!(simulate(&out, &["--backend", "http"]).status.code(), Some(2));

    let logs = dir.path().join("one.jsonl");
    fs::write(&logs, "{}\n").unwrap();
    let s = react_tod(&["sample", "--logs", logs.to_str().unwrap(), "-k", "2"]);
    assert_eq!(s.status.code(), Some(2));
}

/// A local endpoint that rejects every request with 401.
fn unauthorized_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut buf = [0u8; 8192];
            let _ = stream.read(&mut buf);
            let body = "{\"error\":\"bad key\"}";
            let _ = write!(
                stream,
                "HTTP/1.1 401 Unauthorized\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    format!("http://{addr}")
}

#[test]
fn fatal_backend_exits_3_after_flushing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_react-tod"))
        .args(["simulate", "--dialogues", "4", "--backend", "http", "--model", "gpt-4-32k", "--out", out.to_str().unwrap()])
        .env("REACT_TOD_API_BASE", unauthorized_server())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("dialogues.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(out.join("manifest.json").is_file());
}
