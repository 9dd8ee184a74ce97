// SPDX-License-Identifier: Apache-2.0

//! Report bundle writers.
//!
//! `stages/` holds per-user intermediates for re-running single stages and
//! is confidential. `report/` is the shareable bundle: every count in it
//! has gone through k-suppression.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::Datelike;
use serde_json::json;

use super::{Context, PipelineError, PipelineOutput};
use crate::metrics::{suppress, FlowRow, RatesOutput, ReturnSeries};
use crate::profile::fmt_pct;

/// Files present in every bundle. `report/population.csv` is added when
/// scaling is enabled.
pub const BUNDLE_FILES: &[&str] = &[
    "stages/ingest_report.json",
    "stages/signals.csv",
    "stages/profiles.csv",
    "stages/status.csv",
    "stages/cv_models.json",
    "report/metrics.csv",
    "report/naive_vs_ca.csv",
    "report/coverage.csv",
    "report/attrition.csv",
    "report/flows.csv",
    "report/returns.csv",
    "report/plot_data.json",
    "report/summary.txt",
];

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn count(c: u64, k: u64) -> String {
    suppress(c, k).map(|v| v.to_string()).unwrap_or_default()
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

pub fn write_stages(dir: &Path, out: &PipelineOutput) -> Result<(), PipelineError> {
    let stages = dir.join("stages");
    serde_json::to_writer_pretty(create(&stages.join("ingest_report.json"))?, &out.ingest)?;
    out.signals.write_csv(create(&stages.join("signals.csv"))?)?;
    out.cohort.write_csv(create(&stages.join("profiles.csv"))?)?;
    out.statuses.write_csv(create(&stages.join("status.csv"))?)?;
    serde_json::to_writer_pretty(create(&stages.join("cv_models.json"))?, &out.cv_models)?;
    Ok(())
}

/// Metrics for both methods, the side-by-side comparison, coverage and
/// attrition.
pub fn write_metrics_reports(dir: &Path, out: &PipelineOutput, k: u64) -> Result<(), PipelineError> {
    let report = dir.join("report");
    let mut all = out.context_aware.metrics.clone();
    all.extend(out.naive.metrics.iter().cloned());
    all.sort_by(|a, b| (&a.city, a.date, a.method).cmp(&(&b.city, b.date, b.method)));
    RatesOutput { metrics: all, warnings: Vec::new() }.write_csv(create(&report.join("metrics.csv"))?, k)?;

    let mut w = csv::Writer::from_writer(create(&report.join("naive_vs_ca.csv"))?);
    w.write_record([
        "city", "date", "weekday", "naive_pct", "ca_pct", "diff_pp", "missing_pct", "upper_pct", "holiday_flag",
    ])?;
    for (ca, naive) in out.context_aware.metrics.iter().zip(&out.naive.metrics) {
        debug_assert_eq!((&ca.city, ca.date), (&naive.city, naive.date));
        w.write_record([
            ca.city.clone(),
            ca.date.to_string(),
            ca.date.weekday().to_string(),
            f4(naive.rate),
            f4(ca.rate),
            f4(naive.rate - ca.rate),
            f4(ca.missing_rate),
            f4(ca.scenario.upper),
            ca.holiday.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&report.join("coverage.csv"))?);
    w.write_record(["city", "date", "N", "observed", "coverage_pct", "missing_pct"])?;
    for m in &out.context_aware.metrics {
        w.write_record([
            m.city.clone(),
            m.date.to_string(),
            count(m.n, k),
            count(m.n - m.missing, k),
            f4(m.coverage_rate()),
            f4(m.missing_rate),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&report.join("attrition.csv"))?);
    w.write_record([
        "city", "starting", "valid_baseline", "observed_post", "starting_pct", "valid_baseline_pct", "observed_post_pct",
    ])?;
    for a in &out.attrition {
        w.write_record([
            a.city.clone(),
            count(a.starting, k),
            count(a.valid_baseline, k),
            count(a.observed_post, k),
            fmt_pct(a.starting_pct()),
            fmt_pct(a.valid_baseline_pct()),
            fmt_pct(a.observed_post_pct()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_flows(dir: &Path, out: &PipelineOutput) -> Result<(), PipelineError> {
    FlowRow::write_csv(&out.flows, create(&dir.join("report").join("flows.csv"))?)?;
    Ok(())
}

pub fn write_returns(dir: &Path, out: &PipelineOutput, k: u64) -> Result<(), PipelineError> {
    ReturnSeries::write_csv(&out.returns, create(&dir.join("report").join("returns.csv"))?, k)?;
    Ok(())
}

/// Scaled estimates are blanked when the underlying count is suppressed.
pub fn write_population(dir: &Path, out: &PipelineOutput, k: u64) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(&dir.join("report").join("population.csv"))?);
    w.write_record(["city", "date", "population", "avg_daily_baseline", "scaling_factor", "estimate", "lo", "hi"])?;
    for r in &out.scaled {
        let hidden = suppress(r.displaced, k).is_none();
        let show = |v: Option<f64>| if hidden { String::new() } else { v.map(|x| format!("{x:.1}")).unwrap_or_default() };
        w.write_record([
            r.city.clone(),
            r.date.to_string(),
            r.scale.population.to_string(),
            f4(r.scale.avg_daily_baseline),
            f4(r.scale.scaling_factor),
            show(Some(r.estimate)),
            show(r.bounds.map(|b| b.0)),
            show(r.bounds.map(|b| b.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Percent-only series behind the time-series, scenario-band and
/// return-curve figures.
pub fn write_plot_data(dir: &Path, out: &PipelineOutput) -> Result<(), PipelineError> {
    let series: Vec<_> = out
        .context_aware
        .metrics
        .iter()
        .zip(&out.naive.metrics)
        .map(|(ca, naive)| {
            json!({
                "city": ca.city, "date": ca.date,
                "naive_pct": round4(naive.rate), "ca_pct": round4(ca.rate), "missing_pct": round4(ca.missing_rate),
            })
        })
        .collect();
    let band: Vec<_> = out
        .context_aware
        .metrics
        .iter()
        .map(|m| {
            json!({
                "city": m.city, "date": m.date,
                "lower": round4(m.scenario.lower), "mid": round4(m.scenario.mid), "upper": round4(m.scenario.upper),
                "cv_lo": m.cv_bounds.map(|b| round4(b.0)), "cv_hi": m.cv_bounds.map(|b| round4(b.1)),
            })
        })
        .collect();
    let curve: Vec<_> = out
        .returns
        .iter()
        .flat_map(|s| {
            s.dates.iter().zip(&s.cumulative_rate).map(move |(d, r)| {
                json!({"city": s.city, "date": d, "variant": s.variant.as_str(), "cum_return_pct": round4(*r)})
            })
        })
        .collect();
    let doc = json!({"time_series": series, "scenario_band": band, "return_curve": curve});
    let mut w = create(&dir.join("report").join("plot_data.json"))?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.flush()?;
    Ok(())
}

fn shown(c: u64, k: u64) -> String {
    suppress(c, k).map(|v| v.to_string()).unwrap_or_else(|| "suppressed".to_string())
}

pub fn write_summary(dir: &Path, ctx: &Context, out: &PipelineOutput) -> Result<(), PipelineError> {
    let k = ctx.params().suppression_k;
    let cal = &ctx.calendar;
    let mut s = String::new();
    let _ = writeln!(s, "Displacement report");
    let _ = writeln!(s, "baseline window: {} to {}", cal.baseline_start, cal.baseline_end);
    let _ = writeln!(s, "observation window: {} to {}", cal.disaster_onset, cal.observation_end);
    let _ = writeln!(s, "suppression threshold: {k}");
    let _ = writeln!(s, "cohort: users={} excluded={}", shown(out.cohort.len() as u64, k), shown(out.cohort.excluded_count() as u64, k));
    let _ = writeln!(
        s,
        "ingest: accepted={} duplicate={} out_of_window={} unknown_code={} malformed={} out_of_coverage={}",
        shown(out.ingest.accepted, k),
        shown(out.ingest.duplicate, k),
        shown(out.ingest.out_of_window, k),
        shown(out.ingest.unknown_code, k),
        shown(out.ingest.malformed, k),
        shown(out.ingest.out_of_coverage, k),
    );
    for (city, att) in out.cities.iter().zip(&out.attrition) {
        let _ = writeln!(s);
        let _ = writeln!(s, "[{city}]");
        let n = out.context_aware.metrics.iter().find(|m| &m.city == city).map(|m| m.n).unwrap_or(0);
        let _ = writeln!(s, "baseline users: N={}", shown(n, k));
        if let Some(cv) = out.cv_models.get(city) {
            let _ = writeln!(s, "cv baseline {:.4}, disaster {:.4}", cv.cv_baseline, cv.cv_disaster);
        }
        let _ = writeln!(
            s,
            "attrition: starting {}% -> valid baseline {}% -> observed post {}%",
            fmt_pct(att.starting_pct()),
            fmt_pct(att.valid_baseline_pct()),
            fmt_pct(att.observed_post_pct())
        );
        let _ = writeln!(
            s,
            "{:<10} {:<3} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9} holiday",
            "date", "day", "naive%", "ca%", "diff_pp", "missing%", "upper%", "cv_lo%", "cv_hi%", "coverage%"
        );
        for (ca, naive) in out.context_aware.metrics.iter().zip(&out.naive.metrics).filter(|(m, _)| &m.city == city) {
            let (lo, hi) = ca
                .cv_bounds
                .map(|(a, b)| (format!("{a:.1}"), format!("{b:.1}")))
                .unwrap_or_else(|| ("-".into(), "-".into()));
            let _ = writeln!(
                s,
                "{:<10} {:<3} {:>8.1} {:>8.1} {:>8.2} {:>8.1} {:>8.1} {:>8} {:>8} {:>9.1} {}",
                ca.date,
                ca.date.weekday(),
                naive.rate,
                ca.rate,
                naive.rate - ca.rate,
                ca.missing_rate,
                ca.scenario.upper,
                lo,
                hi,
                ca.coverage_rate(),
                if ca.holiday { "yes" } else { "" }
            );
        }
    }
    if !out.warnings.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "warnings:");
        for w in &out.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    let mut f = create(&dir.join("report").join("summary.txt"))?;
    f.write_all(s.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Writes stages, report and (when scaled) the population table.
pub fn write_bundle(dir: &Path, ctx: &Context, out: &PipelineOutput) -> Result<(), PipelineError> {
    let k = ctx.params().suppression_k;
    write_stages(dir, out)?;
    write_metrics_reports(dir, out, k)?;
    write_flows(dir, out)?;
    write_returns(dir, out, k)?;
    if ctx.config.scale {
        write_population(dir, out, k)?;
    }
    write_plot_data(dir, out)?;
    write_summary(dir, ctx, out)?;
    Ok(())
}
