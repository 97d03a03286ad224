use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[experiment]
env = "chain10"
agent = "dqn_lite"
total_steps = 3000
seeds = [0, 1, 2]
criteria = ["none", "fix:n=500"]

[training]
warmup = 500
hidden = [16]
"#;

fn lowswitch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowswitch"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LOWSWITCH_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn run_writes_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "tiny.toml", TINY);
    let out = lowswitch(&["run", "tiny.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tmp.path().join("results/tiny");
    let mut runs: Vec<String> =
        fs::read_dir(dir.join("runs")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    runs.sort();
    assert_eq!(runs.len(), 6);
    assert_eq!(runs[0], "fix_n_500__seed0.jsonl");

    let summary = read(dir.join("summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "criterion,seed_count,reward_mean,reward_std,cost_mean,cost_std,rsi");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("none,3,"));
    assert!(lines[1].ends_with(",0.0"), "baseline RSI must be 0: {}", lines[1]);
    assert!(lines[2].starts_with("fix:n=500,3,"));

    let curves = read(dir.join("curves.csv"));
    assert!(curves.starts_with("step,reward,criterion,seed\n"));
    let metrics: serde_json::Value = serde_json::from_str(&read(dir.join("metrics.json"))).unwrap();
    assert_eq!(metrics["criteria"].as_array().unwrap().len(), 2);

    let run = read(dir.join("runs/fix_n_500__seed1.jsonl"));
    let kinds: Vec<String> = run
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.first().unwrap(), "config");
    assert_eq!(kinds.last().unwrap(), "result");
    assert_eq!(kinds.iter().filter(|k| *k == "switch").count(), 5);
}

#[test]
fn outputs_do_not_depend_on_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "tiny.toml", TINY);
    for (jobs, out) in [("1", "a"), ("3", "b")] {
        let o = lowswitch(&["run", "tiny.toml", "--jobs", jobs, "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for f in ["summary.csv", "metrics.json", "curves.csv", "experiment.json", "runs/none__seed2.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "tiny.toml", TINY);
    let o = lowswitch(
        &["run", "tiny.toml", "--seeds", "4,5", "--criterion", "none", "--criterion", "visitation", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(tmp.path().join("o/summary.csv"));
    assert!(summary.contains("\nnone,2,") && summary.contains("\nvisitation,2,"), "{summary}");
    assert!(tmp.path().join("o/runs/visitation__seed5.jsonl").exists());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "tiny.toml", TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_lowswitch"))
        .args(["run", "tiny.toml", "--seeds", "0", "--criterion", "none"])
        .current_dir(tmp.path())
        .env("LOWSWITCH_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("root/tiny/summary.csv").exists());
}

#[test]
fn report_reproduces_summary() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "tiny.toml", TINY);
    assert_eq!(lowswitch(&["run", "tiny.toml", "--out", "r"], tmp.path()).status.code(), Some(0));
    let dir = tmp.path().join("r");
    let before = fs::read(dir.join("summary.csv")).unwrap();
    let metrics = fs::read(dir.join("metrics.json")).unwrap();
    fs::remove_file(dir.join("summary.csv")).unwrap();
    assert_eq!(lowswitch(&["report", "r"], tmp.path()).status.code(), Some(0));
    assert_eq!(fs::read(dir.join("summary.csv")).unwrap(), before);
    assert_eq!(fs::read(dir.join("metrics.json")).unwrap(), metrics);

    assert_eq!(lowswitch(&["report", "missing"], tmp.path()).status.code(), Some(1));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "bad.toml", &TINY.replace("fix:n=500", "fix:n=0").replace("chain10", "maze"));
    let o = lowswitch(&["run", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("maze") && err.contains("fix"), "{err}");
    assert!(!tmp.path().join("results").exists());

    assert_eq!(lowswitch(&["run", "nope.toml"], tmp.path()).status.code(), Some(1));
    write_config(tmp.path(), "tiny.toml", TINY);
    assert_eq!(lowswitch(&["run", "tiny.toml", "--criterion", "sometimes"], tmp.path()).status.code(), Some(1));
    assert_eq!(lowswitch(&["run", "tiny.toml", "--jobs", "0"], tmp.path()).status.code(), Some(1));
    assert_eq!(lowswitch(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(lowswitch(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn failing_cell_exits_2_and_others_finish() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TINY.replace("hidden = [16]", "hidden = [16]\nlearning_rate = 1e300");
    write_config(tmp.path(), "diverge.toml", &text);
    let o = lowswitch(&["run", "diverge.toml", "--seeds", "0"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let run = read(tmp.path().join("results/diverge/runs/none__seed0.jsonl"));
    assert!(run.lines().last().unwrap().contains("\"kind\":\"failure\""));
    let metrics: serde_json::Value =
        serde_json::from_str(&read(tmp.path().join("results/diverge/metrics.json"))).unwrap();
    assert!(!metrics["failures"].as_array().unwrap().is_empty());
}

#[test]
fn theorem1_verb() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lowswitch(&["theorem1", "--k", "4", "--alpha", "0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("feature similarity: 0.5\n") && text.contains("prediction error:   0.5\n"), "{text}");
    assert_eq!(lowswitch(&["theorem1", "--k", "3", "--alpha", "0.5"], tmp.path()).status.code(), Some(1));
    assert_eq!(lowswitch(&["theorem1", "--k", "4", "--alpha", "0.3"], tmp.path()).status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lowswitch(&["selftest"], tmp.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}
