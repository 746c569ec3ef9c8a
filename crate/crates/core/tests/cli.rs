mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imcts::experimenter::{SimBackend, SimLandscape};
use imcts::harness::{save_state, RunConfig, Search, SearchPolicy, SimOracles};
use imcts::tree::SearchParams;

fn imcts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imcts")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = imcts(args);
    assert!(out.status.success(), "imcts {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn sim_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out_a = ok(&["run", "--rollouts", "6", "--seed", "3", "--out", p(&a)]);
    let out_b = ok(&["run", "--rollouts", "6", "--seed", "3", "--out", p(&b)]);
    assert_eq!(out_a, out_b);
    assert!(out_a.starts_with("Number of simulations: 6\n"));
    assert_eq!(fs::read_to_string(a.join("tree.txt")).unwrap(), out_a);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert!(a.join("state.json").exists());
}

#[test]
fn json_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["run", "--rollouts", "4", "--policy", "vanilla", "--dump", "json", "--out", p(dir.path())]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v.is_object());
    assert_eq!(fs::read_to_string(dir.path().join("tree.json")).unwrap(), out);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["simulations"], 4);
}

#[test]
fn resume_continues_an_interrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = ok(&["run", "--rollouts", "8", "--seed", "5", "--out", p(&dir.path().join("full"))]);

    let params = SearchParams { rollouts: 8, seed: 5, ..SearchParams::default() };
    let land = SimLandscape::new(5, RunConfig::default().landscape).unwrap();
    let mut oracles = SimOracles::new(land.clone());
    let mut backend = SimBackend::new(land);
    let mut search = Search::start(params, SearchPolicy::Imcts, Default::default(), &mut oracles, &mut backend).unwrap();
    for _ in 0..3 {
        search.step().unwrap();
    }
    let state = dir.path().join("partial.json");
    save_state(&search.state, &state).unwrap();

    let resumed = ok(&["run", "--resume", p(&state), "--out", p(&dir.path().join("resumed"))]);
    assert_eq!(resumed, full);
}

#[test]
fn live_run_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let url = common::serve_http(common::scripted_http());
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/echo_backend.sh");
    let config = serde_json::json!({
        "llm": {"endpoint": url, "model": "stub", "retry_budget": 0},
        "backend": {"command": ["sh", script, "{request}", "{response}"], "timeout_secs": 30},
        "search": {"rollouts": 5, "expansion_width": 2},
    });
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, config.to_string()).unwrap();
    let live_dir = dir.path().join("live");
    let live = ok(&["run", "--mode", "live", "--config", p(&cfg_path), "--out", p(&live_dir)]);
    assert!(live.starts_with("Number of simulations: 5\n"));
    assert!(live_dir.join("llm_recording.jsonl").exists());
    assert!(live_dir.join("backend_recording.jsonl").exists());
    assert!(live.contains("'dev_score': 0.5"));

    let replay = ok(&[
        "run",
        "--mode",
        "replay",
        "--config",
        p(&cfg_path),
        "--recordings",
        p(&live_dir),
        "--out",
        p(&dir.path().join("replay")),
    ]);
    assert_eq!(replay, live);
}

#[test]
fn replay_without_recordings_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = imcts(&["run", "--mode", "replay", "--out", p(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn invalid_parameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for args in [["--width", "0"], ["--gamma", "-1"], ["--rollouts", "0"]] {
        let mut all = vec!["run", "--out", p(dir.path())];
        all.extend(args);
        assert!(!imcts(&all).status.success(), "{args:?} accepted");
    }
    assert!(!imcts(&["run", "--policy", "greedy"]).status.success());
}

#[test]
fn ablate_prints_every_policy() {
    let out = ok(&["ablate", "--seeds", "3", "--rollouts", "4"]);
    for name in ["I-MCTS", "I-MCTS w/o INE", "I-MCTS w/o HRM", "Vanilla MCTS", "Random search"] {
        assert!(out.contains(name), "{name} missing from:\n{out}");
    }
    assert!(out.contains("sign test"));
}

#[test]
fn score_aggregates_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("results.csv");
    fs::write(
        &csv,
        "dataset,method,run,raw,kind\nd1,a,0,0.8,F1\nd1,b,0,0.6,F1\nd2,a,0,2.0,RMSE\nd2,b,0,1.0,RMSE\n",
    )
    .unwrap();
    let out = ok(&["score", "--csv", p(&csv)]);
    let mut lines = out.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("method"));
    assert_eq!(lines.count(), 2);
    assert!(!imcts(&["score", "--csv", p(&dir.path().join("missing.csv"))]).status.success());
}
