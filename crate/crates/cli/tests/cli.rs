use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cft(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cft"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("CFT_CONFIG")
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--seeds",
    "2",
    "--set",
    "experiment.densities=[5.0]",
    "--set",
    "experiment.ranges_m=[250.0, 600.0]",
    "--set",
    "experiment.warmup_steps=30",
];

#[test]
fn validate_config_accepts_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = cft(dir.path(), &["validate-config"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out.stdout.is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cft(dir.path(), &["throughput", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[mobility]\nlanes = \"four\"\n").unwrap();
    let out = cft(
        dir.path(),
        &["--config", bad.to_str().unwrap(), "validate-config"],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = cft(
        dir.path(),
        &["--set", "experiment.seeds=0", "validate-config"],
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn rate_curve_is_monotone_in_distance() {
    let dir = tempfile::tempdir().unwrap();
    let out = cft(
        dir.path(),
        &["rate-curve", "--max-distance", "500", "--step", "25"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("rate_curve.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "expected_rate_mbps")
        .unwrap();
    let rates: Vec<f64> = lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rates.len(), 20);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
}

#[test]
fn sweeps_write_identical_csv_on_rerun() {
    for (cmd, file) in [
        ("connection-time", "connection_time.csv"),
        ("cluster-size", "cluster_size.csv"),
    ] {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut args = SMALL.to_vec();
            args.push(cmd);
            let out = cft(dir.path(), &args);
            assert!(
                out.status.success(),
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            runs.push(fs::read(dir.path().join(file)).unwrap());
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{cmd} is not reproducible");
    }
}
