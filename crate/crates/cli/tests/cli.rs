use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn oasd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oasd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn oasd")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = oasd(dir, args);
    assert!(
        out.status.success(),
        "oasd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("stderr carries a JSON error")
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SMALL: &[&str] = &[
    "--width",
    "10",
    "--height",
    "10",
    "--pairs",
    "6",
    "--trajs-per-group",
    "15",
    "--anomaly-ratio",
    "0.1",
];

fn generate(dir: &Path) {
    let mut args = vec!["--seed", "4", "gen", "--out", "w"];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
    fs::write(
        dir.join("cfg.json"),
        r#"{"seed": 4, "pretrain_policy_epochs": 5, "eval_every": 40}"#,
    )
    .unwrap();
}

#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    for f in [
        "network.json",
        "trajectories.jsonl",
        "train.jsonl",
        "test.jsonl",
        "manifest.json",
    ] {
        assert!(d.join("w").join(f).exists(), "{f} missing");
    }
    ok(
        d,
        &[
            "preprocess",
            "--network",
            "w/network.json",
            "--trajectories",
            "w/trajectories.jsonl",
            "--out",
            "stats.json",
        ],
    );
    let common = ["--network", "w/network.json", "--stats", "stats.json"];
    let mut args = vec![
        "--config",
        "cfg.json",
        "pretrain",
        "--trajectories",
        "w/train.jsonl",
        "--out",
        "pre.json",
    ];
    args.extend_from_slice(&common);
    ok(d, &args);
    let mut args = vec![
        "--config",
        "cfg.json",
        "train",
        "--trajectories",
        "w/train.jsonl",
        "--model",
        "pre.json",
        "--out",
        "model.json",
        "--log",
        "train.log",
    ];
    args.extend_from_slice(&common);
    ok(d, &args);
    let ck: Value =
        serde_json::from_str(&fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    let meta = &ck["config"]["meta"];
    for key in ["alpha", "delta", "delay_d", "seed", "slots", "profile"] {
        assert!(!meta[key].is_null(), "checkpoint meta lacks {key}: {meta}");
    }
    let log = jsonl(&d.join("train.log"));
    assert!(!log.is_empty());
    assert!(log
        .iter()
        .all(|r| r.get("step").is_some() && r.get("loss").is_some()));

    let mut args = vec![
        "detect",
        "--model",
        "model.json",
        "--trajectories",
        "w/test.jsonl",
        "--out",
        "events.jsonl",
        "--labels-out",
        "labels.jsonl",
    ];
    args.extend_from_slice(&common);
    ok(d, &args);
    let events = jsonl(&d.join("events.jsonl"));
    let labels = jsonl(&d.join("labels.jsonl"));
    let test = jsonl(&d.join("w/test.jsonl"));
    assert_eq!(labels.len(), test.len());
    assert!(events.len() >= test.len());

    let out = ok(
        d,
        &[
            "eval",
            "--truth",
            "w/test.jsonl",
            "--pred",
            "labels.jsonl",
            "--out",
            "r1.json",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("precision"));
    ok(
        d,
        &[
            "eval",
            "--truth",
            "w/test.jsonl",
            "--pred",
            "events.jsonl",
            "--out",
            "r2.json",
        ],
    );
    let r1: Value = serde_json::from_str(&fs::read_to_string(d.join("r1.json")).unwrap()).unwrap();
    let r2: Value = serde_json::from_str(&fs::read_to_string(d.join("r2.json")).unwrap()).unwrap();
    assert_eq!(r1["f1"], r2["f1"]);

    // streaming the same trajectories yields the same events
    let mut cmds = String::new();
    for t in &test {
        let segs = t["segments"].as_array().unwrap();
        let open = serde_json::json!({"open": {"traj": t["id"], "sd": [segs[0], segs[segs.len() - 1]], "start": t["start"]}});
        cmds.push_str(&format!("{open}\n"));
        for (i, s) in segs.iter().enumerate() {
            let p = serde_json::json!({"point": {"traj": t["id"], "seg": s, "last": i + 1 == segs.len()}});
            cmds.push_str(&format!("{p}\n"));
        }
    }
    fs::write(d.join("cmds.jsonl"), cmds).unwrap();
    let mut args = vec![
        "detect",
        "--model",
        "model.json",
        "--stream",
        "--input",
        "cmds.jsonl",
    ];
    args.extend_from_slice(&common);
    let out = ok(d, &args);
    let streamed: Vec<Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(streamed, events);

    let mut args = vec![
        "--drop-rates",
        "0,0.8",
        "coldstart",
        "--model",
        "model.json",
        "--trajectories",
        "w/test.jsonl",
    ];
    args.extend_from_slice(&common);
    let out = ok(d, &args);
    let cs: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cs["rows"].as_array().unwrap().len(), 2);

    let mut args = vec![
        "bench",
        "--model",
        "model.json",
        "--trajectories",
        "w/test.jsonl",
        "--repeats",
        "1",
    ];
    args.extend_from_slice(&common);
    let out = ok(d, &args);
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(b["median_us"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_on_identical_labels_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    let out = ok(
        d,
        &[
            "eval",
            "--truth",
            "w/trajectories.jsonl",
            "--pred",
            "w/trajectories.jsonl",
        ],
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["f1"], 1.0);
    assert_eq!(r["tf1"], 1.0);
}

#[test]
fn drift_runs_on_generated_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut args = vec!["--seed", "3", "gen", "--drift", "--out", "w"];
    args.extend_from_slice(SMALL);
    ok(d, &args);
    fs::write(
        d.join("cfg.json"),
        r#"{"pretrain_policy_epochs": 3, "eval_every": 40}"#,
    )
    .unwrap();
    let out = ok(
        d,
        &[
            "--config",
            "cfg.json",
            "drift",
            "--network",
            "w/network.json",
            "--trajectories",
            "w/trajectories.jsonl",
        ],
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oasd(tmp.path(), &["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["code"], "usage");
}

#[test]
fn help_and_version_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oasd(tmp.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("detect"));
    assert!(oasd(tmp.path(), &["--version"]).status.success());
}

#[test]
fn missing_file_reports_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oasd(
        tmp.path(),
        &["eval", "--truth", "nope.jsonl", "--pred", "nope.jsonl"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["code"], "not_found");
}

#[test]
fn invalid_threshold_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oasd(
        tmp.path(),
        &["--alpha", "1.5", "eval", "--truth", "a", "--pred", "b"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["code"], "config");
}

#[test]
fn stream_protocol_violations_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    ok(
        d,
        &[
            "preprocess",
            "--network",
            "w/network.json",
            "--trajectories",
            "w/trajectories.jsonl",
            "--out",
            "stats.json",
        ],
    );
    ok(
        d,
        &[
            "--config",
            "cfg.json",
            "pretrain",
            "--network",
            "w/network.json",
            "--trajectories",
            "w/train.jsonl",
            "--stats",
            "stats.json",
            "--out",
            "m.json",
        ],
    );
    let run = |input: &str| {
        let mut child = Command::new(env!("CARGO_BIN_EXE_oasd"))
            .current_dir(d)
            .args([
                "detect",
                "--network",
                "w/network.json",
                "--stats",
                "stats.json",
                "--model",
                "m.json",
                "--stream",
            ])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child
            .stdin
            .take()
            .unwrap()
            .write_all(input.as_bytes())
            .unwrap();
        child.wait_with_output().unwrap()
    };
    let out = run("{\"point\":{\"traj\":\"x\",\"seg\":\"s0\",\"last\":false}}\n");
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["code"], "stream");
    let out = run("not json\n");
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["code"], "parse");
}

#[test]
fn train_requires_labeled_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    ok(
        d,
        &[
            "preprocess",
            "--network",
            "w/network.json",
            "--trajectories",
            "w/trajectories.jsonl",
            "--out",
            "stats.json",
        ],
    );
    let unlabeled: String = fs::read_to_string(d.join("w/train.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("labels");
            format!("{v}\n")
        })
        .collect();
    fs::write(d.join("unlabeled.jsonl"), unlabeled).unwrap();
    let out = oasd(
        d,
        &[
            "--config",
            "cfg.json",
            "train",
            "--network",
            "w/network.json",
            "--trajectories",
            "w/train.jsonl",
            "--valid",
            "unlabeled.jsonl",
            "--stats",
            "stats.json",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["code"], "config");
}
