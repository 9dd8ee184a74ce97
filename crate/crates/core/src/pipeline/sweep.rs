// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::run::city_day_counts;
use super::{Context, PipelineError};
use crate::detect::{detect_period, Method};
use crate::model::{DayType, Params};
use crate::profile::build_cohort;
use crate::signals::SignalSet;

/// One threshold configuration for one city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub city: String,
    pub weekend_min: u32,
    pub weekday_min: u32,
    pub qualifying: u64,
    /// Relative change in qualifying users against the configured thresholds.
    pub baseline_delta_pct: f64,
    pub mean_ca_rate: f64,
    pub mean_gap_pp: f64,
    pub is_default: bool,
}

impl SweepRow {
    pub fn write_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["city", "weekend_min", "weekday_min", "baseline_delta_pct", "mean_ca_pct", "mean_gap_pp", "default"])?;
        for r in rows {
            w.write_record([
                r.city.clone(),
                r.weekend_min.to_string(),
                r.weekday_min.to_string(),
                if r.is_default { "default".to_string() } else { format!("{:+.1}", r.baseline_delta_pct) },
                format!("{:.2}", r.mean_ca_rate),
                format!("{:.2}", r.mean_gap_pp),
                r.is_default.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Non-holiday observation weekdays not explicitly excluded.
pub fn clean_weekdays(ctx: &Context) -> Vec<NaiveDate> {
    ctx.calendar
        .observation_days()
        .filter(|d| DayType::of(*d) == DayType::Weekday)
        .filter(|d| !ctx.calendar.is_holiday(*d) && !ctx.config.exclude_dates.contains(d))
        .collect()
}

struct Means {
    qualifying: BTreeMap<String, u64>,
    ca: BTreeMap<String, f64>,
    gap: BTreeMap<String, f64>,
}

fn run_config(ctx: &Context, signals: &SignalSet, params: &Params, days: &[NaiveDate]) -> Result<Means, PipelineError> {
    let cohort = build_cohort(signals, &ctx.calendar, &ctx.hierarchy, params)?;
    let statuses = detect_period(&cohort, signals, days, &ctx.calendar, &ctx.hierarchy);
    let qualifying = cohort.city_sizes();
    let (mut ca, mut gap) = (BTreeMap::new(), BTreeMap::new());
    for city in qualifying.keys() {
        let c = city_day_counts(&statuses, Method::ContextAware, city);
        let n = city_day_counts(&statuses, Method::Naive, city);
        let rate = |x: u64, total: u64| if total == 0 { 0.0 } else { 100.0 * x as f64 / total as f64 };
        let m = c.len().max(1) as f64;
        ca.insert(city.clone(), c.values().map(|v| rate(v.displaced, v.n)).sum::<f64>() / m);
        let g: f64 = c.iter().map(|(d, v)| rate(n[d].displaced, n[d].n) - rate(v.displaced, v.n)).sum();
        gap.insert(city.clone(), g / m);
    }
    Ok(Means { qualifying, ca, gap })
}

/// Re-runs baseline through detection for every threshold pair and
/// averages rates over the clean observation weekdays.
pub fn sensitivity_sweep(
    ctx: &Context,
    signals: &SignalSet,
    weekend_set: &[u32],
    weekday_set: &[u32],
) -> Result<Vec<SweepRow>, PipelineError> {
    let days = clean_weekdays(ctx);
    if days.is_empty() {
        return Err(PipelineError::Config("no clean observation weekdays left for the sweep".into()));
    }
    let base = ctx.params().clone();
    let reference = run_config(ctx, signals, &base, &days)?;
    let cities: Vec<String> = if ctx.config.focal_cities.is_empty() {
        reference.qualifying.iter().filter(|(_, n)| **n > 0).map(|(c, _)| c.clone()).collect()
    } else {
        ctx.config.focal_cities.clone()
    };

    let mut rows = Vec::new();
    for &we in weekend_set {
        for &wd in weekday_set {
            let is_default = we == base.weekend_min_days && wd == base.weekday_min_days;
            let means = if is_default {
                None
            } else {
                let mut p = base.clone();
                p.weekend_min_days = we;
                p.weekday_min_days = wd;
                Some(run_config(ctx, signals, &p, &days)?)
            };
            let m = means.as_ref().unwrap_or(&reference);
            for city in &cities {
                let q = m.qualifying.get(city).copied().unwrap_or(0);
                let q0 = reference.qualifying.get(city).copied().unwrap_or(0);
                rows.push(SweepRow {
                    city: city.clone(),
                    weekend_min: we,
                    weekday_min: wd,
                    qualifying: q,
                    baseline_delta_pct: if q0 == 0 { 0.0 } else { 100.0 * (q as f64 / q0 as f64 - 1.0) },
                    mean_ca_rate: m.ca.get(city).copied().unwrap_or(0.0),
                    mean_gap_pp: m.gap.get(city).copied().unwrap_or(0.0),
                    is_default,
                });
            }
        }
    }
    Ok(rows)
}

/// One multiplier's bounds expressed relative to the point estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTableRow {
    pub multiplier: f64,
    pub disaster_cv: f64,
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub half_width_pct: f64,
    /// Change in width against the default multiplier; none on the default row.
    pub change_pct: Option<f64>,
    pub is_default: bool,
}

impl CvTableRow {
    pub fn write_csv<W: Write>(rows: &[CvTableRow], writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["multiplier", "disaster_cv", "bounds_lo_pct", "bounds_hi_pct", "relative_width_pct", "change_pct", "default"])?;
        for r in rows {
            w.write_record([
                format!("{}", r.multiplier),
                format!("{:.4}", r.disaster_cv),
                format!("{:.1}", r.lower_pct),
                format!("{:.1}", r.upper_pct),
                format!("{:.1}", r.half_width_pct),
                r.change_pct.map(|c| format!("{c:+.1}")).unwrap_or_default(),
                r.is_default.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cv_multiplier_table(cv_baseline: f64, multipliers: &[f64], params: &Params) -> Vec<CvTableRow> {
    let default_half = params.z_factor * cv_baseline * params.cv_multiplier;
    multipliers
        .iter()
        .map(|&m| {
            let disaster_cv = cv_baseline * m;
            let half = params.z_factor * disaster_cv;
            let is_default = (m - params.cv_multiplier).abs() < 1e-12;
            CvTableRow {
                multiplier: m,
                disaster_cv,
                lower_pct: (100.0 * (1.0 - half)).max(0.0),
                upper_pct: 100.0 * (1.0 + half),
                half_width_pct: 100.0 * half,
                change_pct: (!is_default && default_half > 0.0).then(|| 100.0 * (half / default_half - 1.0)),
                is_default,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        let rows = cv_multiplier_table(0.035, &[1.5, 2.0, 2.5], &Params::default());
        let widths: Vec<f64> = rows.iter().map(|r| r.half_width_pct.round()).collect();
        assert_eq!(widths, vec![10.0, 14.0, 17.0]);
        assert!(rows[1].is_default && rows[1].change_pct.is_none());
        assert!((rows[0].change_pct.unwrap() + 25.0).abs() < 1e-9);
        assert!((rows[2].change_pct.unwrap() - 25.0).abs() < 1e-9);
        assert_eq!(format!("{:.0}-{:.0}", rows[0].lower_pct, rows[0].upper_pct), "90-110");
    }
}
