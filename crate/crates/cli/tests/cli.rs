use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn parksim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parksim")).args(args).current_dir(cwd).output().unwrap()
}

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml").canonicalize().unwrap()
}

/// A small city written into `dir`; returns the config path.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        format!(
            r#"seed = 3
runs = 2
horizon = 240
t_max = 20
participant_share = 0.3
competitor_share = 0.1
window = [0, 240]
[grid]
n = 4
capacity = 2
zone_block = 2
[arrivals.synth]
pattern = "uniform"
magnitude = 0.2
{extra}
"#
        ),
    )
    .unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_example_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let o = parksim(&["validate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("10x10 grid, 300 spots"));
}

#[test]
fn missing_grid_file_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[grid]\nfile = \"nope.csv\"\n[arrivals.synth]\npattern = \"uniform\"\nmagnitude = 0.1\n").unwrap();
    let o = parksim(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn approx_without_history_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let o = parksim(&["run", "--config", cfg.to_str().unwrap(), "--strategy", "cord-approx"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("predictor requires history"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn report_on_empty_dir_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = parksim(&["report", "."], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_report_rerenders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let o = parksim(&["run", "-c", cfg.to_str().unwrap(), "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("r");
    for f in ["events.ndjson", "history.csv", "report.json", "series.csv", "regimes.csv", "zones.csv", "heatmap.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report = fs::read(out.join("report.json")).unwrap();
    let o = parksim(&["report", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("report.json")).unwrap(), report);
    assert!(out.join("comparison_summary.csv").is_file());
}

#[test]
fn single_cell_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    assert!(parksim(&["run", "-c", cfg, "--strategy", "cord-oracle", "--out", "r"], tmp.path()).status.success());
    let o = parksim(&["sweep", "-c", cfg, "--strategies", "cord-oracle", "--scales", "1", "--out", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cell = tmp.path().join("s/cord-oracle_x1");
    for f in ["events.ndjson", "report.json"] {
        assert_eq!(fs::read(tmp.path().join("r").join(f)).unwrap(), fs::read(cell.join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(tmp.path().join("s/comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn sweep_keeps_going_when_a_cell_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let o = parksim(
        &["sweep", "-c", cfg.to_str().unwrap(), "--strategies", "unc-agn,cord-approx", "--jobs", "2", "--out", "s"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 of 4 runs completed"));
    let table = fs::read_to_string(tmp.path().join("s/comparison.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains(",ok,")).count(), 2);
    assert_eq!(table.lines().filter(|l| l.starts_with("cord-approx") && l.contains(",failed,")).count(), 2);
    assert!(tmp.path().join("s/unc-agn_x1/report.json").is_file());
}

#[test]
fn train_then_approx_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    assert!(parksim(&["run", "-c", cfg, "--out", "r"], tmp.path()).status.success());
    let o = parksim(&["train", "-c", cfg, "--history", "r/history.csv", "--out", "m.json"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let model = fs::read_to_string(tmp.path().join("m.json")).unwrap();
    assert!(model.contains("coefficients") && model.contains("lambda"), "{model}");
    let o = parksim(
        &["run", "-c", cfg, "--strategy", "cord-approx", "--history", "r/history.csv", "--out", "a"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let o = parksim(&["validate", "-c", cfg.to_str().unwrap(), "--runs", "5", "--strategy", "unc-agn"], tmp.path());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("strategy unc-agn, 5 runs"), "{out}");

    let o = parksim(&["run", "-c", cfg.to_str().unwrap(), "--runs", "1", "--out", "one"], tmp.path());
    assert!(o.status.success());
    let events = fs::read_to_string(tmp.path().join("one/events.ndjson")).unwrap();
    assert!(events.lines().all(|l| l.starts_with("{\"run\":0,")));
}

#[test]
fn invalid_value_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let o = parksim(&["run", "-c", cfg.to_str().unwrap(), "--participant-share", "0.9", "--competitor-share", "0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
