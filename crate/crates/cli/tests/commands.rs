use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trackpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trackpred"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

#[test]
fn missing_detections_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = trackpred(&["track", "--detections", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn empty_detections_file_gives_empty_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("dets.csv");
    fs::write(&dets, "").unwrap();
    let o = trackpred(&["track", "--detections", s(&dets), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let traj = fs::read_to_string(dir.path().join("trajectories.txt")).unwrap();
    assert!(traj.trim().is_empty());
    assert!(stdout(&o).contains("tracks: 0"));
}

#[test]
fn non_positive_time_horizon_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "orca.time_horizon = 0\n").unwrap();
    let o = trackpred(&["pipeline", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("orca.time_horizon"), "{}", stderr(&o));
    assert!(!dir.path().join("report.txt").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = trackpred(&["synth", "--set", "synth.agents=3", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synth.agents"), "{}", stderr(&o));
}

#[test]
fn help_lists_the_keys_each_command_reads() {
    for (cmd, keys) in [
        ("track", &["tracker.gate_distance", "tracker.alpha", "core.fps"][..]),
        ("make-dataset", &["dataset.history_s", "dataset.grid_rows", "dataset.max_gap"][..]),
        ("train", &["train.hidden_size", "train.learning_rate", "train.epochs"][..]),
        ("synth", &["synth.n_agents", "noise.position_sigma", "orca.time_horizon"][..]),
        ("pipeline", &["pipeline.noise_tiers", "eval.horizons", "train.seed"][..]),
    ] {
        let o = trackpred(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        for k in keys {
            assert!(text.contains(k), "{cmd} --help misses {k}");
        }
    }
}

#[test]
fn commands_chain_end_to_end_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let run = |sub: &str| {
        let out = root.join(sub);
        let cfg = smoke_config();
        let step = |args: &[&str]| {
            let mut full: Vec<&str> = args.to_vec();
            full.extend(["--config", s(&cfg), "--out", s(&out), "--set", "train.epochs=2"]);
            let o = trackpred(&full);
            assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
            stdout(&o)
        };
        step(&["synth", "--seed", "11"]);
        step(&["track", "--detections", s(&out.join("detections.csv"))]);
        step(&[
            "make-dataset",
            "--trajectories",
            s(&out.join("truth.txt")),
            "--classes",
            s(&out.join("truth.classes.csv")),
        ]);
        step(&["train", "--train", s(&out.join("samples.jsonl")), "--val", s(&out.join("samples.jsonl"))]);
        step(&["predict", "--model", s(&out.join("model.ckpt")), "--samples", s(&out.join("samples.jsonl"))]);
        let eval = step(&[
            "eval",
            "--samples",
            s(&out.join("samples.jsonl")),
            "--predictions",
            s(&out.join("predictions.csv")),
        ]);
        assert!(eval.contains("ADE/FDE"));
        let model_spec = format!("net={}", s(&out.join("model.ckpt")));
        let pred_spec = format!("file={}", s(&out.join("predictions.csv")));
        let bench = step(&[
            "bench",
            "--samples",
            s(&out.join("samples.jsonl")),
            "--model",
            &model_spec,
            "--predictions",
            &pred_spec,
        ]);
        assert!(bench.contains("constant-velocity"));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in [
        "truth.txt",
        "detections.csv",
        "trajectories.txt",
        "samples.jsonl",
        "model.ckpt",
        "training_log.csv",
        "predictions.csv",
        "metrics.csv",
        "curves.csv",
        "table.txt",
    ] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let table = fs::read_to_string(a.join("table.txt")).unwrap();
    let net = table.lines().find(|l| l.starts_with("net")).unwrap();
    let file = table.lines().find(|l| l.starts_with("file")).unwrap();
    assert_eq!(net.split_whitespace().nth(1), file.split_whitespace().nth(1));
}

#[test]
fn bench_reports_a_broken_prediction_file_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = smoke_config();
    let common = ["--config", s(&cfg), "--out", s(out)];
    let mut synth = vec!["synth"];
    synth.extend(common);
    assert_eq!(trackpred(&synth).status.code(), Some(0));
    let mut ds = vec!["make-dataset", "--trajectories"];
    let truth = out.join("truth.txt");
    ds.push(s(&truth));
    ds.extend(common);
    assert_eq!(trackpred(&ds).status.code(), Some(0));
    let bad = out.join("bad.csv");
    fs::write(&bad, "0,1,1,0.0,0.0\n").unwrap();
    let spec = format!("broken={}", s(&bad));
    let samples = out.join("samples.jsonl");
    let mut bench = vec!["bench", "--samples", s(&samples), "--predictions", &spec];
    bench.extend(common);
    let o = trackpred(&bench);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("constant-velocity"));
    assert!(table.lines().any(|l| l.starts_with("broken")), "{table}");
}
