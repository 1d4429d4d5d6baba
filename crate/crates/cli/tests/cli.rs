//! End-to-end tests of the binary: config handling, matrix runs, CSV and
//! report outputs, exit codes, and log replay.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aisnap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aisnap"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

const PASSING: &str = r#"
[workload]
kind = "synthetic"
n = 4
block_dim = 1
alpha = 0.6
seed = 5

[matrix]
protocols = ["nfais2"]
policies = ["fifo"]
seeds = [1, 2, 3]

[run]
eps_prime = 1e-6
norm = "l2"
schedule = "random:0.8"
interval = "1..2"
latency = "1..3"
"#;

#[test]
fn run_writes_csv_and_summary_and_exits_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PASSING);
    let out_dir = tmp.path().join("out");
    let out = aisnap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "header plus one row per seed:\n{csv}");
    assert!(lines[0].starts_with("workload,protocol,policy,eta,n,seed,"));
    for row in &lines[1..] {
        assert!(row.contains("nfais2,fifo"), "{row}");
        assert!(row.ends_with(",ok"), "oracle verdict must close the row: {row}");
    }

    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 1);
    assert!(summary.contains("runs=3 completed=3 oracle_ok=3"), "{summary}");

    // no failures, default log policy keeps the directory clean
    let logs: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "log")
        })
        .collect();
    assert!(logs.is_empty());
}

#[test]
fn empty_seed_list_is_a_noop_with_empty_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PASSING.replace("seeds = [1, 2, 3]", "seeds = []"));
    let out_dir = tmp.path().join("out");
    let out = aisnap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("cells=0"));

    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "only the header: {csv}");
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.is_empty());
}

#[test]
fn incompatible_pair_is_a_config_error_naming_the_assumption() {
    let tmp = tempfile::tempdir().unwrap();
    let body = PASSING
        .replace("protocols = [\"nfais2\"]", "protocols = [\"ais1\"]")
        .replace("policies = [\"fifo\"]", "policies = [\"arbitrary\"]");
    let cfg = write_config(tmp.path(), &body);
    let out = aisnap().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("ais1 under arbitrary"), "{err}");
    assert!(err.contains("allow_incompatible"), "{err}");

    // the override flag turns the refusal into a run
    let out_dir = tmp.path().join("out");
    let out = aisnap()
        .args(["run", "--allow-incompatible", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.code() == Some(0) || out.status.code() == Some(2),
        "forced pair must run to a verdict, stderr: {}",
        stderr(&out)
    );
    assert!(out_dir.join("results.csv").exists());
}

const MISCONFIGURED: &str = r#"
[workload]
kind = "synthetic"
n = 4
block_dim = 1
alpha = 0.7
seed = 9

[matrix]
protocols = ["nfais4"]
policies = ["bounded-cross:4"]
seeds = [1]

[run]
eps_prime = 1e-6
norm = "max:1,1,1,1"
threshold = 1e-6
schedule = "random:0.9"
interval = "1..2"
latency = "1..3"
"#;

#[test]
fn oracle_failure_exits_nonzero_and_replays_to_the_same_report() {
    let tmp = tempfile::tempdir().unwrap();
    // fixed threshold equal to the requested accuracy leaves no room for the
    // staleness slack eta * eps, so the verifier must flag the configuration
    let cfg = write_config(tmp.path(), MISCONFIGURED);
    let out_dir = tmp.path().join("out");
    let out = aisnap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stdout: {}", stdout(&out));
    assert!(stdout(&out).contains("FAIL"));

    let stem = "synthetic-n4-a0.7-nfais4-bounded-cross-eta4-s1";
    let log_path = out_dir.join(format!("{stem}.log"));
    let report_path = out_dir.join(format!("{stem}.report.txt"));
    assert!(log_path.exists(), "failing cells leave a replayable log");
    let report = fs::read_to_string(&report_path).unwrap();
    assert!(report.contains("threshold-guarantee FAIL"), "{report}");

    let replayed_report = tmp.path().join("replayed.txt");
    let out = aisnap()
        .arg("replay")
        .arg(&log_path)
        .arg("--report-out")
        .arg(&replayed_report)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("replay matches the log"));
    assert_eq!(
        fs::read(&report_path).unwrap(),
        fs::read(&replayed_report).unwrap(),
        "replay must reproduce the report byte for byte"
    );
}

#[test]
fn replay_refuses_a_different_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MISCONFIGURED);
    let out_dir = tmp.path().join("out");
    let out = aisnap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let log_path = out_dir.join("synthetic-n4-a0.7-nfais4-bounded-cross-eta4-s1.log");
    let log = fs::read_to_string(&log_path).unwrap();
    let json = log
        .lines()
        .nth(1)
        .and_then(|l| l.strip_prefix("#config "))
        .expect("log embeds its configuration");

    // same log, replayed as if the run had used a smaller crossing bound
    let tampered = json.replace("\"eta\":4", "\"eta\":2");
    assert_ne!(tampered, json);
    let cfg_path = tmp.path().join("other.json");
    fs::write(&cfg_path, &tampered).unwrap();
    let out = aisnap()
        .arg("replay")
        .arg(&log_path)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stdout: {}", stdout(&out));
    assert!(stderr(&out).contains("refusing to replay"), "{}", stderr(&out));

    // the embedded configuration itself is accepted
    let cfg_path = tmp.path().join("same.json");
    fs::write(&cfg_path, json).unwrap();
    let out = aisnap()
        .arg("replay")
        .arg(&log_path)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
}

#[test]
fn export_matrix_lists_cells_without_running() {
    let tmp = tempfile::tempdir().unwrap();
    let body = PASSING.replace(
        "protocols = [\"nfais2\"]",
        "protocols = [\"nfais1\", \"nfais2\"]",
    );
    let cfg = write_config(tmp.path(), &body);
    let out = aisnap().args(["export-matrix", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "workload,protocol,policy,eta,seed");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].contains("nfais1,fifo"));
    assert!(lines[4].contains("nfais2,fifo"));
    assert!(stderr(&out).contains("cells=6"));
}

#[test]
fn matrix_filters_restrict_and_reject_typos() {
    let tmp = tempfile::tempdir().unwrap();
    let body = PASSING.replace(
        "protocols = [\"nfais2\"]",
        "protocols = [\"nfais1\", \"nfais2\"]",
    );
    let cfg = write_config(tmp.path(), &body);
    let out_dir = tmp.path().join("out");
    let out = aisnap()
        .args(["run", "--protocols", "nfais2", "--seeds", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains("nfais2"));

    let out = aisnap()
        .args(["run", "--protocols", "nfais7", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nfais7"));
}
