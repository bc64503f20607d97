use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
id = "cli"
seed = 11
repeat = 2
targets = ["normal", "bootstrap"]

[data]
source = "synth"
n = 300
dim = 20
class_count = 3
spread = 0.3
flip = 0.1
seed = 2

[model]
hidden = [8]

[train]
epochs = 5
batch_size = 32

[attacks]
metrics = ["conf"]
epochs = 5

[analysis]
levels = 3

[memorization]
holdout_fraction = 0.1

[shapley]
k = 2
max_validation = 20
"#;

fn clpriv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clpriv")).args(args).current_dir(cwd).output().unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("out/cli/report.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_report_and_bundle() {
    let dir = setup(CONFIG);
    let o = clpriv(&["run", "--config", "exp.toml", "--out", "out", "--jobs", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("2 of 2 trials completed"), "{stdout}");
    assert!(stdout.contains("bootstrap.nn.accuracy"));
    let r = report(dir.path());
    assert_eq!(r["trials"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("out/cli/summary.csv").is_file());
    assert!(dir.path().join("out/cli/trial_1/bootstrap/nn_roc.csv").is_file());
    assert!(dir.path().join("out/cli/trial_0/shapley.csv").is_file());
}

#[test]
fn seed_and_repeat_flags_override_config() {
    let dir = setup(CONFIG);
    let o = clpriv(&["train", "--config", "exp.toml", "--out", "out", "--seed", "100", "--repeat", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["config"]["seed"], 100);
    assert_eq!(r["config"]["repeat"], 1);
    assert_eq!(r["trials"][0]["seed"], 100);
    assert!(r["trials"][0]["result"]["targets"][0]["attacks"].as_array().unwrap().is_empty());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = setup(CONFIG);
    let args = ["attack", "--config", "exp.toml", "--out", "out", "--repeat", "1"];
    assert!(clpriv(&args, dir.path()).status.success());
    let first = std::fs::read(dir.path().join("out/cli/report.json")).unwrap();
    let args = ["attack", "--config", "exp.toml", "--out", "out", "--repeat", "1", "--jobs", "3"];
    assert!(clpriv(&args, dir.path()).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("out/cli/report.json")).unwrap());
}

#[test]
fn unknown_key_fails_with_stage_tag() {
    let dir = setup(&CONFIG.replace("repeat = 2", "repeat = 2\nrepeats = 3"));
    let o = clpriv(&["run", "--config", "exp.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[config]"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn defend_requires_a_defense() {
    let dir = setup(CONFIG);
    let o = clpriv(&["defend", "--config", "exp.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let dir = setup(&format!("{CONFIG}\n[defense]\nkind = \"mem_guard\"\nbudget = 1.0\n"));
    let o = clpriv(&["defend", "--config", "exp.toml", "--out", "out", "--repeat", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["trials"][0]["result"]["targets"][0]["memguard"]["labels_identical"], true);
}

#[test]
fn failed_trials_give_exit_code_three() {
    let dir = setup(&CONFIG.replace("levels = 3", "levels = 100000"));
    let o = clpriv(&["attack", "--config", "exp.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("failed in analysis"), "{stdout}");
    assert!(dir.path().join("out/cli/report.json").is_file());
}

#[test]
fn report_subcommand_reads_json() {
    let dir = setup(CONFIG);
    assert!(clpriv(&["memorize", "--config", "exp.toml", "--out", "out", "--repeat", "1"], dir.path())
        .status
        .success());
    let o = clpriv(&["report", "--input", "out/cli/report.json", "--out", "again"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("memorization.last_seen.median"));
    assert!(dir.path().join("again/cli/summary.csv").is_file());
}
