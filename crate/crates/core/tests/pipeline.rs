// SPDX-License-Identifier: Apache-2.0

use std::fs;

use serde_json::json;
use tempfile::TempDir;

use displace_core::detect::Method;
use displace_core::pipeline::{
    compute, run_pipeline, Context, Mode, PipelineError, PipelineOutput, RunConfig, BUNDLE_FILES,
    SCALE_NEEDS_POPULATION,
};
use displace_core::synth::{generate, profile_recovery, score, ScenarioSpec};

fn spec(extra: serde_json::Value) -> ScenarioSpec {
    let mut base = json!({
        "seed": 21,
        "n_users": 800,
        "cities": [
            {"code": "APA", "population": 68839, "barangays": 6, "user_share": 0.6},
            {"code": "TUG", "population": 166334, "barangays": 6, "user_share": 0.4}
        ],
        "archetype_mix": {"LocalResident": 1.0},
        "calendar": {
            "baseline_start": "2025-08-04", "baseline_end": "2025-09-14",
            "disaster_onset": "2025-09-22", "observation_end": "2025-09-28"
        }
    });
    for (k, v) in extra.as_object().unwrap() {
        base[k] = v.clone();
    }
    ScenarioSpec::from_json(&base.to_string()).unwrap()
}

fn run(spec: &ScenarioSpec, mode: Mode) -> (TempDir, RunConfig, PipelineOutput) {
    let dir = TempDir::new().unwrap();
    let files = generate(spec).unwrap().write_files(dir.path()).unwrap();
    let cfg = RunConfig::for_synthetic(&files, spec, mode, dir.path().join("output"));
    let out = run_pipeline(&cfg).unwrap();
    (dir, cfg, out)
}

#[test]
fn null_scenario_reports_zero_displacement_and_full_attrition() {
    let (_dir, cfg, out) = run(&spec(json!({})), Mode::External);
    for m in out.context_aware.metrics.iter().chain(&out.naive.metrics) {
        assert_eq!((m.displaced, m.missing), (0, 0), "{} {}", m.city, m.date);
        assert_eq!(m.rate, 0.0);
    }
    for a in &out.attrition {
        assert_eq!((a.starting_pct(), a.valid_baseline_pct(), a.observed_post_pct()), (Some(100.0), Some(100.0), Some(100.0)));
    }
    let attrition = fs::read_to_string(cfg.output_dir.join("report/attrition.csv")).unwrap();
    assert!(attrition.lines().skip(1).all(|l| l.ends_with("100.0,100.0,100.0")), "{attrition}");
    for f in BUNDLE_FILES {
        assert!(cfg.output_dir.join(f).is_file(), "missing {f}");
    }
    assert!(!cfg.output_dir.join("report/population.csv").exists());
}

#[test]
fn both_input_modes_recover_profiles_and_displacement() {
    let s = spec(json!({
        "archetype_mix": {"LocalResident": 0.7, "IntraCityCommuter": 0.1, "InterCityDaily": 0.2},
        "displacement_fraction": {"APA": 0.1},
        "destination_distribution": {"TUG": 1.0},
        "missing_daily_prob": 0.05
    }));
    let (_d1, _, external) = run(&s, Mode::External);
    let (_d2, _, internal) = run(&s, Mode::Internal);
    let data = generate(&s).unwrap();
    for out in [&external, &internal] {
        let rec = profile_recovery(&out.cohort, &data.truth);
        assert!(rec.rate().unwrap() > 0.95, "profile recovery {:?}", rec.rate());
        let report = score(&out.statuses, &data.truth).unwrap();
        let local = report.get(Method::ContextAware, "LocalResident", "all").unwrap();
        assert!(local.recall().unwrap() > 0.95 && local.fpr().unwrap() < 0.02, "{local:?}");
        // a commuter displaced to their own work city looks like a commute on weekdays
        let commuters = report.get(Method::ContextAware, "inter_city", "weekend").unwrap();
        assert_eq!(commuters.fn_, 0, "{commuters:?}");
    }
    assert_eq!(external.cohort.city_sizes(), internal.cohort.city_sizes());
}

#[test]
fn context_aware_beats_naive_on_commuters() {
    let s = spec(json!({
        "archetype_mix": {"LocalResident": 0.8, "InterCityDaily": 0.2},
        "displacement_fraction": {"APA": 0.05},
        "destination_distribution": {"TUG": 1.0}
    }));
    let (_dir, _, out) = run(&s, Mode::External);
    let data = generate(&s).unwrap();
    let report = score(&out.statuses, &data.truth).unwrap();
    let fpr = |m| report.get(m, "inter_city", "weekday").unwrap().fpr().unwrap();
    assert_eq!(fpr(Method::ContextAware), 0.0);
    assert!(fpr(Method::Naive) > 0.9);
}

#[test]
fn scale_without_population_is_a_config_error() {
    let s = spec(json!({}));
    let dir = TempDir::new().unwrap();
    let files = generate(&s).unwrap().write_files(dir.path()).unwrap();
    let mut cfg = RunConfig::for_synthetic(&files, &s, Mode::External, dir.path().join("out"));
    cfg.scale = true;
    cfg.population = None;
    match Context::load(cfg) {
        Err(e @ PipelineError::Config(_)) => {
            assert!(e.to_string().contains(SCALE_NEEDS_POPULATION));
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn scaled_estimates_follow_the_population_table() {
    let s = spec(json!({"displacement_fraction": {"APA": 0.2}, "destination_distribution": {"TUG": 1.0}}));
    let dir = TempDir::new().unwrap();
    let files = generate(&s).unwrap().write_files(dir.path()).unwrap();
    let mut cfg = RunConfig::for_synthetic(&files, &s, Mode::External, dir.path().join("out"));
    cfg.scale = true;
    cfg.focal_cities = vec!["APA".into()];
    let out = compute(&Context::load(cfg).unwrap()).unwrap();
    assert!(!out.scaled.is_empty());
    for r in &out.scaled {
        assert_eq!(r.scale.population, 68839);
        assert!((r.estimate - r.displaced as f64 * r.scale.scaling_factor).abs() < 1e-9);
        let (lo, hi) = r.bounds.expect("cv model from baseline counts");
        assert!(lo <= r.estimate && r.estimate <= hi);
    }
}

#[test]
fn config_file_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(
        &path,
        json!({
            "mode": "external", "daily": "d.csv", "hierarchy": "h.csv",
            "baseline_start": "2025-08-04", "baseline_end": "2025-09-14",
            "disaster_onset": "2025-09-22", "observation_end": "2025-09-28",
            "suppression_k": "ten"
        })
        .to_string(),
    )
    .unwrap();
    let e = RunConfig::load(&path, &[]).unwrap_err();
    assert!(e.to_string().contains("suppression_k"), "{e}");
    let fixed = RunConfig::load(&path, &["suppression_k=12".into()]).unwrap();
    assert_eq!(fixed.params.suppression_k, 12);
    assert_eq!(fixed.hierarchy, dir.path().join("h.csv"));
}
