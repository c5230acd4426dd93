use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_localindep"));
    cmd.env_remove("LI_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn no_temp_files(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(!name.ends_with(".tmp"), "leftover {name}");
    }
}

#[test]
fn simulate_writes_events_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("ev.csv");
    let graph = dir.path().join("g.json");
    ok(&[
        "simulate", "--structure", "L2", "--seed", "1", "--horizon", "300", "--out", s(&ev), "--graph-out", s(&graph),
    ]);
    let csv = fs::read_to_string(&ev).unwrap();
    assert!(csv.starts_with("time,mark\n"));
    let side: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ev.json")).unwrap()).unwrap();
    assert_eq!(side["d"], 3, "h is dropped from L2");
    assert_eq!(side["t_start"], 0.0);
    assert_eq!(side["t_end"], 300.0);
    let g: Value = serde_json::from_str(&fs::read_to_string(&graph).unwrap()).unwrap();
    assert_eq!(g["d"], 3);
    assert!(g["edges"].as_array().unwrap().iter().all(|e| e.as_array().unwrap().len() == 2));
    // times are increasing and marks in range
    let mut last = f64::NEG_INFINITY;
    for line in csv.lines().skip(1) {
        let (t, m) = line.split_once(',').unwrap();
        let t: f64 = t.parse().unwrap();
        assert!(t > last && t < 300.0);
        assert!(m.parse::<usize>().unwrap() < 3);
        last = t;
    }
    no_temp_files(dir.path());

    // same seed, same bytes
    let again = dir.path().join("again.csv");
    ok(&["simulate", "--structure", "L2", "--seed", "1", "--horizon", "300", "--out", s(&again)]);
    assert_eq!(csv, fs::read_to_string(&again).unwrap());
}

#[test]
fn test_and_learn_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("ev.csv");
    ok(&["simulate", "--structure", "P1", "--seed", "3", "--horizon", "800", "--out", s(&ev)]);

    let res = dir.path().join("res.json");
    ok(&["test", "--data", s(&ev), "--j", "0", "--k", "1", "--order", "1", "--out", s(&res)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
    let p = v["p_value"].as_f64().or_else(|| v["result"]["p_value"].as_f64()).unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(v.to_string().contains("\"kappa\""), "config is embedded");

    // stdout when --out is absent
    let out = ok(&["test", "--data", s(&ev), "--j", "1", "--k", "0", "--order", "1"]);
    let _: Value = serde_json::from_slice(&out.stdout).unwrap();

    let g = dir.path().join("g.json");
    let dot = dir.path().join("g.dot");
    let trace = dir.path().join("t.json");
    ok(&[
        "learn", "--data", s(&ev), "--order", "1", "--out", s(&g), "--dot", s(&dot), "--trace", s(&trace), "--names",
        "j,k",
    ]);
    let graph: Value = serde_json::from_str(&fs::read_to_string(&g).unwrap()).unwrap();
    assert_eq!(graph["d"], 2);
    let edges = graph["edges"].as_array().unwrap();
    assert!(edges.contains(&serde_json::json!([0, 1])), "strong j -> k edge is kept: {graph}");
    let dot = fs::read_to_string(&dot).unwrap();
    assert!(dot.starts_with("digraph") && dot.contains("\"j\""));
    let _: Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    no_temp_files(dir.path());
}

#[test]
fn explicit_window_replaces_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("plain.csv");
    fs::write(&ev, "time,mark\n0.5,0\n1.5,1\n2.0,1\n2.0,0\n").unwrap();
    // tie without --jitter is a data error
    let out = run(&["test", "--data", s(&ev), "--t-start", "0", "--t-end", "10", "--d", "2", "--j", "0", "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
    ok(&[
        "test", "--data", s(&ev), "--t-start", "0", "--t-end", "10", "--d", "2", "--j", "0", "--k", "1", "--jitter",
        "1e-6",
    ]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--structure", "Q9", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    for name in ["L1", "L2", "L3", "P1", "P2", "P3"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["test", "--j", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let missing = dir.path().join("missing.csv");
    assert_eq!(
        run(&["test", "--data", s(&missing), "--j", "0", "--k", "1"]).status.code(),
        Some(2)
    );

    let ev = dir.path().join("ev.csv");
    ok(&["simulate", "--structure", "L1", "--horizon", "100", "--out", s(&ev)]);
    for bad in [["--j", "0", "--k", "0"], ["--j", "0", "--k", "7"]] {
        let mut args = vec!["test", "--data", s(&ev)];
        args.extend(bad);
        assert_eq!(run(&args).status.code(), Some(1), "{args:?}");
    }
    let out = run(&["test", "--data", s(&ev), "--j", "0", "--k", "1", "--cond", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["test", "--data", s(&ev), "--j", "0", "--k", "1", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(1));

    let garbage = dir.path().join("bad.csv");
    fs::write(&garbage, "when,what\n1,2\n").unwrap();
    let out = run(&["test", "--data", s(&garbage), "--t-start", "0", "--t-end", "5", "--d", "3", "--j", "0", "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn experiment_outputs(dir: &Path, tag: &str, threads: &[&str], env: Option<&str>, kind: &[&str]) -> (String, String) {
    let out = dir.join(format!("{tag}.csv"));
    let mut cmd = bin();
    cmd.arg("experiment").args(kind).args(["--out", s(&out)]).args(threads);
    if let Some(n) = env {
        cmd.env("LI_THREADS", n);
    }
    let res = cmd.output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{tag}.manifest.json"))).unwrap()).unwrap();
    assert!(manifest["config"].is_object());
    (
        fs::read_to_string(&out).unwrap(),
        fs::read_to_string(dir.join(format!("{tag}.records.csv"))).unwrap(),
    )
}

#[test]
fn experiments_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let lp = ["level-power", "--reps", "3", "--horizon", "250", "--structures", "L1,P1", "--seed", "4"];
    let a = experiment_outputs(dir.path(), "a", &["--threads", "1"], None, &lp);
    let b = experiment_outputs(dir.path(), "b", &["--threads", "2"], None, &lp);
    let c = experiment_outputs(dir.path(), "c", &[], Some("3"), &lp);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.0.starts_with("structure,order,"));
    assert_eq!(a.0.lines().count(), 1 + 2 * 2);

    let shd = ["shd", "--dims", "3:4", "--reps", "2", "--horizon", "250", "--orders", "1"];
    let a = experiment_outputs(dir.path(), "s1", &["--threads", "1"], None, &shd);
    let b = experiment_outputs(dir.path(), "s2", &["--threads", "2"], None, &shd);
    assert_eq!(a, b);
    no_temp_files(dir.path());
}

#[test]
fn calibrate_reports_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal.csv");
    let res = run(&[
        "calibrate", "--null-reps", "20", "--rescaling-reps", "5", "--derivative-points", "2", "--horizon", "300",
        "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("check,statistic,threshold,passed,detail"));
    assert!(csv.contains("derivatives-identity"));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
}
