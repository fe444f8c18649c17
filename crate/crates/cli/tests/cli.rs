//! End-to-end checks of the command-line interface: exit codes and the
//! synth -> estimate -> oracle/plot flow on a small scenario.

use std::path::Path;
use std::process::Command;

fn oregrade() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oregrade"))
}

fn write_small_spec(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{
            "bench_x": 40.0,
            "bench_y": 30.0,
            "split_y": 16.0,
            "dig_spacing_x": 4.0,
            "dig_spacing_y": 4.0,
            "buckets_per_truck": 4,
            "trucks_per_dump": 4
        }"#,
    )
    .unwrap();
    spec
}

#[test]
fn synth_estimate_oracle_plot_flow() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_small_spec(dir.path());
    let scenario_dir = dir.path().join("scenario");
    let reports_dir = dir.path().join("reports");

    let synth = oregrade()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out-dir")
        .arg(&scenario_dir)
        .output()
        .unwrap();
    assert!(synth.status.success(), "{synth:?}");
    for f in ["blocks.csv", "digs.csv", "cycles.csv"] {
        assert!(scenario_dir.join(f).exists(), "{f} missing");
    }

    let estimate = oregrade()
        .args(["estimate", "--workers", "2", "--plot-dig", "dig_000003"])
        .arg("--blocks")
        .arg(scenario_dir.join("blocks.csv"))
        .arg("--digs")
        .arg(scenario_dir.join("digs.csv"))
        .arg("--cycles")
        .arg(scenario_dir.join("cycles.csv"))
        .arg("--out-dir")
        .arg(&reports_dir)
        .output()
        .unwrap();
    assert!(estimate.status.success(), "{estimate:?}");
    for f in [
        "buckets.csv",
        "trucks.csv",
        "dumps.csv",
        "errors.csv",
        "summary.json",
        "plot_dig_000003.csv",
    ] {
        assert!(reports_dir.join(f).exists(), "{f} missing");
    }
    let buckets = std::fs::read_to_string(reports_dir.join("buckets.csv")).unwrap();
    let digs = std::fs::read_to_string(scenario_dir.join("digs.csv")).unwrap();
    assert_eq!(buckets.lines().count(), digs.lines().count());

    let oracle = oregrade()
        .args(["oracle", "--dig-id", "dig_000005", "--samples", "10000"])
        .arg("--blocks")
        .arg(scenario_dir.join("blocks.csv"))
        .arg("--digs")
        .arg(scenario_dir.join("digs.csv"))
        .arg("--cycles")
        .arg(scenario_dir.join("cycles.csv"))
        .output()
        .unwrap();
    assert!(oracle.status.success(), "{oracle:?}");
    let stdout = String::from_utf8(oracle.stdout).unwrap();
    assert!(stdout.lines().count() >= 2, "{stdout}");
    assert!(stdout.starts_with("entity,id,"), "{stdout}");

    let plot = oregrade()
        .args(["plot", "--dig-id", "dig_000005"])
        .arg("--blocks")
        .arg(scenario_dir.join("blocks.csv"))
        .arg("--digs")
        .arg(scenario_dir.join("digs.csv"))
        .arg("--out")
        .arg(dir.path().join("plot.csv"))
        .output()
        .unwrap();
    assert!(plot.status.success(), "{plot:?}");
    let plot_text = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert_eq!(plot_text.lines().next().unwrap(), "x,pdf,cdf,matched_pdf");
    assert_eq!(plot_text.lines().count(), 513);
}

#[test]
fn load_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // Valid digs/cycles but a blocks file with a broken row.
    std::fs::write(
        dir.path().join("blocks.csv"),
        "id,x,y,z,dx,dy,dz,mean_fe,std_fe,bench\n0,1,1,1,2,2,2,not_a_number,1,B1\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("digs.csv"),
        "dig_event_id,x,y,z,bench,timestamp\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("cycles.csv"),
        "dig_event_id,truck_id,dump_id,timestamp\n",
    )
    .unwrap();
    let out = oregrade()
        .arg("estimate")
        .arg("--blocks")
        .arg(dir.path().join("blocks.csv"))
        .arg("--digs")
        .arg(dir.path().join("digs.csv"))
        .arg("--cycles")
        .arg(dir.path().join("cycles.csv"))
        .arg("--out-dir")
        .arg(dir.path().join("reports"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("blocks.csv:2"), "{stderr}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"grid_interval": -1.0}"#).unwrap();
    let out = oregrade()
        .arg("estimate")
        .arg("--config")
        .arg(&config)
        .arg("--blocks")
        .arg(dir.path().join("blocks.csv"))
        .arg("--digs")
        .arg(dir.path().join("digs.csv"))
        .arg("--cycles")
        .arg(dir.path().join("cycles.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}
