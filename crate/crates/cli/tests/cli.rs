use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[experiment]
name = "tiny"
seed = 3

[model]
embed_dim = 4
hidden_dim = 4

[data]
family = "copy-reverse"
size = 8
difficulty_min = 1
difficulty_max = 2

[schedule]
total_samples = 40
reuse_factor = 5

[eval]
every = 5

[train]
learning_rate = 0.05
batch_size = 4
group_size = 4
"#;

fn rlscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlscale"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn step_lines(run: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(run.join("steps.log"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_writes_ten_steps_and_plateaus_unique_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("runs");
    let o = rlscale(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("10 steps"));

    let run = out.join("tiny");
    for f in ["manifest", "steps.log", "policy.ckpt", "schedule.txt", "train.jsonl", "eval.jsonl"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let lines = step_lines(&run);
    let steps: Vec<u64> = lines.iter().map(|l| l["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, (0..=10).collect::<Vec<_>>());
    let unique: Vec<u64> = lines
        .iter()
        .map(|l| l["unique_samples_seen"].as_u64().unwrap())
        .collect();
    assert_eq!(unique.last(), Some(&8));
    assert!(unique.windows(2).all(|w| w[0] <= w[1]));
    let evals: Vec<u64> = lines
        .iter()
        .filter(|l| l.get("eval_loss").is_some())
        .map(|l| l["step"].as_u64().unwrap())
        .collect();
    assert_eq!(evals, [0, 5, 10]);
}

#[test]
fn sweep_over_group_size_creates_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("runs");
    let o = rlscale(&[
        "sweep", "--config", &cfg, "--out", out.to_str().unwrap(),
        "--axis", "group_size", "--values", "4,8", "--replicates", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sweep.json").is_file());
    let mut runs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("manifest").is_file())
        .collect();
    runs.sort();
    assert_eq!(runs.len(), 2);
    let groups: Vec<u64> = runs
        .iter()
        .map(|r| {
            let m: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(r.join("manifest")).unwrap()).unwrap();
            m["train"]["group_size"].as_u64().unwrap()
        })
        .collect();
    assert_eq!(groups, [4, 8]);
}

#[test]
fn fit_check_and_eval_after_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();
    assert!(rlscale(&["run", "--config", &cfg, "--out", out_s]).status.success());

    let o = rlscale(&["fit", out_s, "--x-axis", "data", "--loss-floor", "auto"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("fit-data-loss.csv")).unwrap();
    assert!(table.starts_with("model_n,variant,k,E,r2,n_points\n"));

    let o = rlscale(&["check", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("consistency.csv").is_file());

    let run = out.join("tiny");
    let o = rlscale(&[
        "eval",
        "--checkpoint", run.join("policy.ckpt").to_str().unwrap(),
        "--dataset", run.join("eval.jsonl").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("L="));
}

#[test]
fn check_on_empty_directory_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = rlscale(&["check", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("consistency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(rlscale(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rlscale(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = -1.0\n").unwrap();
    let o = rlscale(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[train]\nlearnig_rate = 0.1\n").unwrap();
    assert_eq!(rlscale(&["run", "--config", typo.to_str().unwrap()]).status.code(), Some(1));

    let o = rlscale(&["fit", dir.path().to_str().unwrap(), "--loss-floor", "abc"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_on_missing_directory_fails() {
    let o = rlscale(&["fit", "/nonexistent/rlscale-runs"]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
}
