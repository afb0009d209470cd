use std::path::Path;
use std::process::{Command, Output};

fn rgpdkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgpdkf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    let out = dir.join("out");
    std::fs::write(
        &path,
        format!(
            "[run]\noutput_dir = {out:?}\n\n[sim]\nduration = 2.0\nsnapshot_times = [0.5, 2.0]\n\n[estimator]\nsigma_y_gp = 70.0\n"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn dry_run_counts_applicable_cells() {
    let o = rgpdkf(&["run", "--dry-run", "--seeds", "0..3"]);
    assert!(o.status.success());
    // Three scenarios with the proposed filter, two with the baseline.
    assert!(stdout(&o).contains("config ok: 15 cells"), "{}", stdout(&o));
}

#[test]
fn scenario_writes_one_csv_and_one_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = rgpdkf(&["scenario", "--config", &cfg, "--scenario", "S1", "--estimator", "rgp-b", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("S1 rgp-b seed 4: rmse"));

    let mut runs: Vec<String> = std::fs::read_dir(dir.path().join("out/runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    runs.sort();
    assert_eq!(runs, ["S1_rgp-b_seed4.csv", "S1_rgp-b_seed4.json"]);
    assert_eq!(std::fs::read_dir(dir.path().join("out/plots")).unwrap().count(), 2);
    assert!(dir.path().join("out/config.toml").exists());
}

#[test]
fn baseline_rejected_on_position_only_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = rgpdkf(&["scenario", "--config", &cfg, "--scenario", "S3", "--estimator", "rgp-b"]);
    assert!(!o.status.success());
}

#[test]
fn validate_round_trips_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = rgpdkf(&["validate"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("[sim.zeta]"));
    let path = dir.path().join("defaults.toml");
    std::fs::write(&path, &text).unwrap();
    let again = rgpdkf(&["validate", "--config", path.to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), text);
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[sim]\ndurration = 3.0\n").unwrap();
    let o = rgpdkf(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("durration"));
}

#[test]
fn bad_seed_range_fails() {
    let o = rgpdkf(&["run", "--dry-run", "--seeds", "5..2"]);
    assert!(!o.status.success());
}
