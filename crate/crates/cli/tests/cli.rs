use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use mt_core::session::SessionReport;
use serde_json::Value;

fn mt(dir: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mt"))
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    if let Some(text) = stdin {
        input.write_all(text.as_bytes()).unwrap();
    }
    drop(input);
    child.wait_with_output().unwrap()
}

fn ok(dir: &Path, args: &[&str], stdin: Option<&str>) -> String {
    let out = mt(dir, args, stdin);
    assert!(
        out.status.success(),
        "mt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The pretty-printed report that ends `teach` output.
fn report(stdout: &str) -> SessionReport {
    let start = stdout.rfind("\n{").map_or(0, |i| i + 1);
    serde_json::from_str(&stdout[start..]).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["pack", "--out", "pack"], None);
    ok(
        p,
        &[
            "generate-data",
            "--templates",
            "pack/templates.jsonl",
            "--bootstrap-fraction",
            "0.2",
            "--seed",
            "2",
            "--out",
            "data",
        ],
        None,
    );
    ok(p, &["bootstrap", "--data", "data", "--seed", "2", "--out", "model.ckpt"], None);
    dir
}

const SESSION: [&str; 6] = ["--model", "model.ckpt", "--pool", "data/pool.jsonl", "--kb", "data/kb"];

fn with_session<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = extra.to_vec();
    v.extend(SESSION);
    v
}

/// Skip; accept with the default label, token 0 important with one typed
/// replacement and token 1 inconsequential; accept with the second
/// prediction and no annotation; quit.
const SCRIPT: &str = "s\na\n\n0\nplease tell\n1\na\n2\n\n\nq\n";

#[test]
fn data_pipeline_and_rank() {
    let dir = workspace();
    let p = dir.path();
    for f in ["data/bootstrap.jsonl", "data/pool.jsonl", "data/test.jsonl", "data/split.json", "data/kb/lexicon.jsonl"] {
        assert!(p.join(f).exists(), "{f}");
    }
    let out = ok(p, &["rank", "--model", "model.ckpt", "--pool", "data/pool.jsonl", "--top", "4"], None);
    let rows: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let conf: Vec<f64> = rows.iter().map(|r| r["confusion"].as_f64().unwrap()).collect();
    assert!(conf.windows(2).all(|w| w[0] >= w[1]));

    std::fs::write(p.join("grid.json"), r#"[{"learning_rate":0.1,"epochs":5,"l2":0.0001,"replay_batch":32},{"learning_rate":0.1,"epochs":30,"l2":0.0001,"replay_batch":32}]"#).unwrap();
    let out = ok(p, &["sweep", "--grid", "grid.json", "--data", "data", "--seed", "2"], None);
    let sweep: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(sweep["table"].as_array().unwrap().len(), 2);
}

#[test]
fn terminal_session_replays_and_exports() {
    let dir = workspace();
    let p = dir.path();
    let out = ok(p, &with_session(&["teach", "--log", "s.jsonl", "--save", "taught.ckpt"]), Some(SCRIPT));
    let live = report(&out);
    assert_eq!((live.accepted, live.skipped), (2, 1));
    assert_eq!(live.total_sim_seconds, 1.0 + 10.0 + 70.0 + 10.0);
    assert!(live.variations > 0);

    let out = ok(p, &with_session(&["teach", "--replay", "s.jsonl", "--save", "replayed.ckpt"]), None);
    assert_eq!(report(&out), live);
    assert_eq!(
        std::fs::read(p.join("taught.ckpt")).unwrap(),
        std::fs::read(p.join("replayed.ckpt")).unwrap()
    );

    let out = ok(p, &with_session(&["export", "--augmented", "--log", "s.jsonl"]), None);
    let recs: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), live.variations);
    assert!(recs.iter().all(|r| r["origin"] == "augmented"));
    assert!(recs.iter().any(|r| r["text"].as_str().unwrap().contains("please tell")));
    assert!(recs.iter().all(|r| r["provenance"]["edits"].as_array().unwrap().len() == 1));

    // the log is never appended to by a second session
    let again = mt(p, &with_session(&["teach", "--log", "s.jsonl"]), Some("q\n"));
    assert!(!again.status.success());
}

#[test]
fn simulate_is_deterministic_and_compare_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = |out: &'static str| ["simulate", "--strategies", "RL,AL,FULL_MT", "--seeds", "2", "--budget", "8", "--out", out];
    ok(p, &args("a"), None);
    ok(p, &args("b"), None);
    let a = std::fs::read(p.join("a/curves.csv")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b/curves.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 8);
    let summary: Value = serde_json::from_slice(&std::fs::read(p.join("a/summary.json")).unwrap()).unwrap();
    assert!(summary["FULL_MT"].is_f64());

    ok(p, &["compare", "--in", "a", "--out", "table.csv"], None);
    let table = std::fs::read_to_string(p.join("table.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| l.starts_with("summary,")).count(), 3);
    assert_eq!(table.lines().filter(|l| l.starts_with("delta,")).count(), 6);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(dir: &Path) -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mt"))
        .args(["serve", "--port", "0", "--artifacts", "."])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    (Server(child), url)
}

#[test]
fn remote_session_log_replays_in_the_terminal() {
    let dir = workspace();
    let p = dir.path();
    let (_server, url) = serve(p);
    let out = ok(p, &with_session(&["teach", "--remote", &url, "--log", "remote.jsonl"]), Some(SCRIPT));
    let remote = report(&out);
    assert_eq!(remote.accepted, 2);
    assert!(std::fs::read_dir(p.join("sessions")).unwrap().count() >= 1);

    let out = ok(p, &with_session(&["teach", "--replay", "remote.jsonl"]), None);
    let local = report(&out);
    assert_eq!(local.final_error, remote.final_error);
    assert_eq!(local.variations, remote.variations);
    assert_eq!(local.total_sim_seconds, remote.total_sim_seconds);
}

#[test]
fn errors_name_the_missing_artifact() {
    let dir = workspace();
    let p = dir.path();
    let out = mt(p, &["teach", "--model", "absent.ckpt", "--pool", "data/pool.jsonl", "--kb", "data/kb", "--log", "x.jsonl"], Some(""));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.ckpt"));

    let out = mt(p, &with_session(&["export", "--log", "x.jsonl"]), None);
    assert!(!out.status.success());
    let out = mt(p, &["simulate", "--strategies", "XX", "--out", "r"], None);
    assert!(!out.status.success());
}
