use std::path::Path;
use std::process::{Command, Output};

fn ppod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppod")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn script_demo(dir: &Path, task: &str, seed: u64) -> String {
    let path = dir.join(format!("{task}-{seed}.jsonl"));
    let o = ppod(&["demo-script", "--task", task, "--seed", &seed.to_string(), "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    path.to_str().unwrap().to_string()
}

#[test]
fn train_from_config_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let demo = script_demo(dir.path(), "grid.onebox.easy", 2);
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "[run]\npreset = desk\ntask = grid.onebox.easy\ntotal_frames = 1024\neval_episodes = 3\ndemos = {demo}\nout_dir = {}\n\n[ppo]\nnum_actors = 2\nnum_steps = 128\n",
            out.display()
        ),
    )
    .unwrap();
    let o = ppod(&["train", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "eval.csv", "checkpoint.json", "config.cfg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 2);
    let resolved = std::fs::read_to_string(out.join("config.cfg")).unwrap();
    assert!(resolved.contains("seed = 1"));

    let o = ppod(&["evaluate", "--checkpoint", out.join("checkpoint.json").to_str().unwrap(), "--episodes", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["episodes"], 4);
}

#[test]
fn flags_override_and_bad_configs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = ppod(&["train", "--rho", "0.8", "--phi", "0.4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rho + phi"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[run]\ntask = grid.onebox.easy\n[ppo]\nwarp = 9\n").unwrap();
    let o = ppod(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":4:"), "{}", stderr(&o));
    assert!(!stderr(&o).contains("panicked"));

    let o = ppod(&["train", "--algo", "ppo_bc"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("demonstration"), "{}", stderr(&o));

    let o = ppod(&["launch"]);
    assert!(!o.status.success());
}

#[test]
fn demo_validate_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let demo = script_demo(dir.path(), "grid.twobox.hard", 5);
    let o = ppod(&["demo-validate", &demo]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["episode_return"], 1.0);

    let o = ppod(&["demo-replay", &demo]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"first_mismatch\":null"));

    let o = ppod(&["demo-validate", &demo, "--task", "grid.onebox.easy"]);
    assert_eq!(o.status.code(), Some(1));

    let text = std::fs::read_to_string(&demo).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let cut = lines[3][..lines[3].len() / 2].to_string();
    lines[3] = &cut;
    let truncated = dir.path().join("truncated.jsonl");
    std::fs::write(&truncated, lines[..4].join("\n")).unwrap();
    let o = ppod(&["demo-validate", truncated.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("truncated.jsonl:4:"), "{}", stderr(&o));
}

#[test]
fn demo_script_never_overwrites() {
    let dir = tempfile::tempdir().unwrap();
    let a = script_demo(dir.path(), "reacher.sparse", 1);
    let b = script_demo(dir.path(), "reacher.sparse", 1);
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(a, b);
    assert_eq!(files, 2);
}
