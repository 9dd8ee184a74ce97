// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENARIO: &str = r#"{
    "seed": 3,
    "n_users": 600,
    "cities": [
        {"code": "APA", "population": 68839, "barangays": 5, "user_share": 0.6},
        {"code": "TUG", "population": 166334, "barangays": 5, "user_share": 0.4}
    ],
    "archetype_mix": {"LocalResident": 0.8, "InterCityDaily": 0.2},
    "calendar": {
        "baseline_start": "2025-08-04", "baseline_end": "2025-09-14",
        "disaster_onset": "2025-09-22", "observation_end": "2025-09-28"
    },
    "displacement_fraction": {"APA": 0.1},
    "destination_distribution": {"TUG": 1.0},
    "missing_daily_prob": 0.05,
    "return_hazard": 0.1
}"#;

fn displace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_displace"))
        .args(args)
        .env_remove("DISPLACE_OUTPUT_DIR")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulate(scenario: &str) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, scenario).unwrap();
    let data = tmp.path().join("data");
    ok(&displace(&["simulate", "--scenario", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]));
    let config = data.join("config.json");
    (tmp, config)
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_writes_the_full_bundle() {
    let (_tmp, config) = simulate(SCENARIO);
    let cfg = config.to_str().unwrap();
    ok(&displace(&["--config", cfg, "--set", "scale=true", "run"]));
    let out = config.parent().unwrap().join("output");
    for f in displace_core::pipeline::BUNDLE_FILES.iter().chain(&["report/population.csv", "run_metadata.json"]) {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let table = read(&out.join("report/naive_vs_ca.csv"));
    assert_eq!(
        table.lines().next().unwrap(),
        "city,date,weekday,naive_pct,ca_pct,diff_pp,missing_pct,upper_pct,holiday_flag"
    );
}

#[test]
fn stage_by_stage_matches_single_run() {
    let (tmp, config) = simulate(SCENARIO);
    let cfg = config.to_str().unwrap();
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    ok(&displace(&["--config", cfg, "--set", &format!("output_dir={}", whole.display()), "run"]));
    for stage in ["ingest", "profile", "detect", "report"] {
        ok(&displace(&["--config", cfg, "--set", &format!("output_dir={}", staged.display()), stage]));
    }
    for f in displace_core::pipeline::BUNDLE_FILES {
        assert_eq!(read(&whole.join(f)), read(&staged.join(f)), "{f} differs");
    }
}

#[test]
fn output_dir_env_overrides_config() {
    let (tmp, config) = simulate(SCENARIO);
    let target = tmp.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_displace"))
        .args(["--config", config.to_str().unwrap(), "ingest"])
        .env("DISPLACE_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    ok(&out);
    assert!(target.join("stages/signals.csv").is_file());
    assert!(!config.parent().unwrap().join("output").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    let (tmp, config) = simulate(SCENARIO);
    let cfg = config.to_str().unwrap();

    let bad_type = displace(&["--config", cfg, "--set", "weekend_min_days=\"two\"", "ingest"]);
    assert_eq!(bad_type.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_type.stderr).contains("weekend_min_days"));

    let unknown = displace(&["--config", cfg, "--set", "weekend_min=2", "ingest"]);
    assert_eq!(unknown.status.code(), Some(2));

    let no_pop = displace(&["--config", cfg, "--set", "population=null", "--set", "scale=true", "run"]);
    assert_eq!(no_pop.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_pop.stderr).contains("population table required for scale stage"));

    let header = tmp.path().join("header.csv");
    fs::write(&header, "who,when\nU1,2025-08-04\n").unwrap();
    let parse = displace(&["--config", cfg, "--set", &format!("daily={}", header.display()), "ingest"]);
    assert_eq!(parse.status.code(), Some(3));

    let garbage = tmp.path().join("garbage.csv");
    fs::write(&garbage, "user_id,date,admin_code\nU1,not-a-date,APA-000\nU2,2025-08-04\n").unwrap();
    let abort = displace(&["--config", cfg, "--set", &format!("daily={}", garbage.display()), "ingest"]);
    assert_eq!(abort.status.code(), Some(4));

    let out_of_order = displace(&["--config", cfg, "detect"]);
    assert_eq!(out_of_order.status.code(), Some(2));
}

#[test]
fn sweeps_write_tables() {
    let (_tmp, config) = simulate(SCENARIO);
    let cfg = config.to_str().unwrap();
    ok(&displace(&["--config", cfg, "ingest"]));
    ok(&displace(&["--config", cfg, "--set", "focal_cities=[\"APA\"]", "sweep-thresholds"]));
    let out = config.parent().unwrap().join("output/report");
    let sweep = read(&out.join("sweep_thresholds.csv"));
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows.iter().filter(|r| r.contains(",default,")).count(), 1);

    ok(&displace(&["--config", cfg, "sweep-cv", "--cv", "0.035"]));
    let table = read(&out.join("sweep_cv.csv"));
    let widths: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    // 1.96 * 0.035 * m
    assert_eq!(widths, vec!["10.3", "13.7", "17.2"]);
}

#[test]
fn score_and_intervals_after_detect() {
    let (tmp, config) = simulate(SCENARIO);
    let cfg = config.to_str().unwrap();
    for stage in ["ingest", "profile", "detect"] {
        ok(&displace(&["--config", cfg, stage]));
    }
    let scenario = tmp.path().join("data/scenario.json");
    let scored = displace(&["--config", cfg, "score", "--scenario", scenario.to_str().unwrap()]);
    ok(&scored);
    assert!(String::from_utf8_lossy(&scored.stdout).contains("profile recovery"));
    ok(&displace(&["--config", cfg, "compare-intervals", "--city", "APA"]));
    let out = config.parent().unwrap().join("output/report");
    assert!(read(&out.join("score.csv")).starts_with("method,"));
    assert!(out.join("intervals_APA.csv").is_file());
}
