use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ivgp(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ivgp"));
    cmd.args(args);
    cmd
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(
        &path,
        "runs = 2\n\
         base_seed = 11\n\
         methods = [\"protected\", \"interval-aware\"]\n\
         \n\
         [problem]\n\
         synthetic = \"keijzer10\"\n\
         \n\
         [gp]\n\
         population_size = 8\n\
         generations = 3\n\
         max_initial_depth = 4\n",
    )
    .unwrap();
    path
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_writes_the_experiment_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_dir = tmp.path().join("results");
    let out = ivgp(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--workers",
        "1",
    ])
    .output()
    .unwrap();
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("keijzer10"), "stdout: {stdout}");

    for method in ["protected", "interval-aware"] {
        for run in ["run_000", "run_001"] {
            assert!(out_dir.join(method).join(format!("{run}.trace.csv")).is_file());
            assert!(out_dir.join(method).join(format!("{run}.champion.sexpr")).is_file());
        }
        assert!(out_dir.join(format!("summary_{method}.csv")).is_file());
    }
    assert!(out_dir.join("experiment.toml").is_file());
    assert!(out_dir.join("final_summary.csv").is_file());
}

#[test]
fn summarize_rebuilds_identical_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_dir = tmp.path().join("results");
    let out = ivgp(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_success(&out);

    let final_path = out_dir.join("final_summary.csv");
    let before = fs::read(&final_path).unwrap();
    fs::remove_file(&final_path).unwrap();
    let out = ivgp(&["summarize", out_dir.to_str().unwrap()]).output().unwrap();
    assert_success(&out);
    assert_eq!(fs::read(&final_path).unwrap(), before);
}

#[test]
fn worker_count_env_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let serial = tmp.path().join("serial");
    let parallel = tmp.path().join("parallel");
    let out = ivgp(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        serial.to_str().unwrap(),
        "--workers",
        "1",
    ])
    .output()
    .unwrap();
    assert_success(&out);
    let mut cmd = ivgp(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        parallel.to_str().unwrap(),
    ]);
    cmd.env("IVGP_WORKERS", "4");
    let out = cmd.output().unwrap();
    assert_success(&out);

    for file in [
        "final_summary.csv",
        "summary_protected.csv",
        "protected/run_001.trace.csv",
        "interval-aware/run_000.champion.sexpr",
    ] {
        assert_eq!(
            fs::read(serial.join(file)).unwrap(),
            fs::read(parallel.join(file)).unwrap(),
            "{file} differs between worker counts"
        );
    }
}

#[test]
fn analyze_runs_a_friedman_test_over_final_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_dir = tmp.path().join("results");
    let out = ivgp(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_success(&out);

    // The test needs at least two blocks; feeding the same summary twice
    // keeps the rank ordering identical in both.
    let final_path = out_dir.join("final_summary.csv");
    let copy = tmp.path().join("other_problem.csv");
    fs::copy(&final_path, &copy).unwrap();
    let out = ivgp(&[
        "analyze",
        "--friedman",
        final_path.to_str().unwrap(),
        copy.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("methods: protected, interval-aware"), "stdout: {stdout}");
    assert_eq!(stdout.matches("keijzer10:").count(), 2, "stdout: {stdout}");
    assert!(stdout.contains("friedman chi2 = "), "stdout: {stdout}");
    assert!(stdout.contains("df = 1, p = "), "stdout: {stdout}");
}

#[test]
fn bad_inputs_exit_nonzero_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();

    let out = ivgp(&["run", "--config", "/no/such/file.toml", "--output-dir", "x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.toml"));

    // Config errors are reported before any directory is created.
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "runs = 0\n[problem]\nsynthetic = \"keijzer10\"\n").unwrap();
    let out_dir = tmp.path().join("never");
    let out = ivgp(&[
        "run",
        "--config",
        bad.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("runs"));
    assert!(!out_dir.exists());

    // A config without an output directory needs the flag.
    let config = write_config(tmp.path());
    let out = ivgp(&["run", "--config", config.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--output-dir"));

    let out = ivgp(&["summarize", tmp.path().join("missing").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
