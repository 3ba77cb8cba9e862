//! End-to-end CLI checks against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn corabench(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corabench"))
        .args(args)
        .env("CORABENCH_OUT", out_dir)
        .output()
        .expect("binary runs")
}

const GOOD_CFG: &str = "\
policy_name = naive
cycles = 2
eval_interval = 40
eval_episodes = 1
smoothing_window = 1
seeds = 1, 2, 3

[policy]
hidden_size = 8

[task.0]
name = open
frames = 40
grid_size = 4
train_contexts = 2

[task.1]
name = walls
frames = 40
grid_size = 5
obstacle_density = 0.2
train_contexts = 2
";

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("good.cfg");
    fs::write(&cfg, GOOD_CFG).unwrap();
    let out = corabench(&["validate", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok:"), "{stdout}");
}

#[test]
fn validate_rejects_unknown_policies_with_a_categorized_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, GOOD_CFG.replace("naive", "foo")).unwrap();
    let out = corabench(&["validate", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config error"), "{stderr}");
    assert!(stderr.contains("unknown policy"), "{stderr}");
}

#[test]
fn validate_render_prints_ascii_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("good.cfg");
    fs::write(&cfg, GOOD_CFG).unwrap();
    let out = corabench(&["validate", cfg.to_str().unwrap(), "--render"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains('@') && stdout.contains('G'), "{stdout}");
}

#[test]
fn metrics_on_an_empty_directory_fails_with_no_logs_found() {
    let dir = tempfile::tempdir().unwrap();
    let out = corabench(&["metrics", dir.path().to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no logs found"), "{stderr}");
}

#[test]
fn unknown_subcommands_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = corabench(&["frobnicate"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn run_all_seeds_writes_one_log_per_seed_then_metrics_and_tables_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, GOOD_CFG).unwrap();
    let logs = dir.path().join("logs");

    let out = Command::new(env!("CARGO_BIN_EXE_corabench"))
        .args(["run", cfg.to_str().unwrap(), "--all-seeds", "--parallel"])
        .env("CORABENCH_OUT", &logs)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(&logs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["naive-s1.log", "naive-s2.log", "naive-s3.log"]);

    let out = corabench(&["metrics", logs.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("naive: forgetting"), "{stdout}");
    assert!(stdout.contains("transfer"), "{stdout}");

    let out = corabench(
        &["tables", logs.to_str().unwrap(), "--format", "csv", "--kind", "forgetting"],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let csv: String =
        stdout.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let table = corabench_core::report::parse_table_csv(&csv).unwrap();
    assert_eq!(table.seeds, 3);
    assert_eq!(table.task_names, vec!["open", "walls"]);

    let out = corabench(&["final", logs.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("| open | train |"), "{stdout}");

    let out = corabench(&["plotdata", logs.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("timestep,")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("boundary,")), "{stdout}");
}

#[test]
fn metric_commands_are_deterministic_over_the_same_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, GOOD_CFG).unwrap();
    let logs = dir.path().join("logs");
    let out = Command::new(env!("CARGO_BIN_EXE_corabench"))
        .args(["run", cfg.to_str().unwrap(), "--all-seeds"])
        .env("CORABENCH_OUT", &logs)
        .output()
        .unwrap();
    assert!(out.status.success());
    for sub in ["metrics", "tables", "final", "plotdata"] {
        let a = corabench(&[sub, logs.to_str().unwrap()], dir.path());
        let b = corabench(&[sub, logs.to_str().unwrap()], dir.path());
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{sub} output must be byte-identical");
    }
}

#[test]
fn single_seed_run_defaults_to_the_first_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, GOOD_CFG).unwrap();
    let logs = dir.path().join("logs");
    let out = Command::new(env!("CARGO_BIN_EXE_corabench"))
        .args(["run", cfg.to_str().unwrap()])
        .env("CORABENCH_OUT", &logs)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(logs.join("naive-s1.log").exists());
    assert!(!logs.join("naive-s2.log").exists());
}
