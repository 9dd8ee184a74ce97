// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cv_bounds, pct, suppress, CvModel, MetricsError};
use crate::detect::{Method, StatusMatrix, Verdict};
use crate::model::Params;

/// Partial-identification band: all, half (configurable) or none of the
/// missing users displaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
}

impl Scenario {
    pub fn new(rate: f64, missing_rate: f64, mid_fraction: f64) -> Self {
        Scenario { lower: rate, mid: rate + mid_fraction * missing_rate, upper: rate + missing_rate }
    }

    /// Rate under the assumption that `fraction` of missing users are displaced.
    pub fn at(&self, fraction: f64) -> f64 {
        self.lower + fraction * (self.upper - self.lower)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityDayMetrics {
    pub city: String,
    pub date: NaiveDate,
    pub method: Method,
    pub n: u64,
    pub displaced: u64,
    pub missing: u64,
    /// Displaced users seen outside the loaded hierarchy.
    pub out_of_coverage: u64,
    pub rate: f64,
    pub missing_rate: f64,
    pub cv_bounds: Option<(f64, f64)>,
    pub scenario: Scenario,
    pub holiday: bool,
}

impl CityDayMetrics {
    pub fn at_expected(&self) -> u64 {
        self.n - self.displaced - self.missing
    }

    /// Share of baseline users observed anywhere that day.
    pub fn coverage_rate(&self) -> f64 {
        100.0 - self.missing_rate
    }
}

#[derive(Debug, Clone, Default)]
pub struct RatesOutput {
    pub metrics: Vec<CityDayMetrics>,
    pub warnings: Vec<String>,
}

impl RatesOutput {
    pub fn get(&self, city: &str, date: NaiveDate) -> Option<&CityDayMetrics> {
        self.metrics.iter().find(|m| m.city == city && m.date == date)
    }

    /// Metrics CSV with counts below `k` blanked.
    pub fn write_csv<W: Write>(&self, writer: W, k: u64) -> Result<(), csv::Error> {
        write_metrics_csv(&self.metrics, writer, k)
    }
}

pub(crate) fn fmt_opt_count(c: Option<u64>) -> String {
    c.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn write_metrics_csv<W: Write>(metrics: &[CityDayMetrics], writer: W, k: u64) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "city", "date", "method", "N", "D", "M", "rate_pct", "missing_pct", "cv_lo", "cv_hi", "scen_lo", "scen_mid",
        "scen_hi", "holiday_flag",
    ])?;
    let f = |v: f64| format!("{v:.4}");
    for m in metrics {
        let (cv_lo, cv_hi) = m.cv_bounds.map(|(a, b)| (f(a), f(b))).unwrap_or_default();
        w.write_record([
            m.city.clone(),
            m.date.to_string(),
            m.method.to_string(),
            fmt_opt_count(suppress(m.n, k)),
            fmt_opt_count(suppress(m.displaced, k)),
            fmt_opt_count(suppress(m.missing, k)),
            f(m.rate),
            f(m.missing_rate),
            cv_lo,
            cv_hi,
            f(m.scenario.lower),
            f(m.scenario.mid),
            f(m.scenario.upper),
            m.holiday.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n: u64,
    displaced: u64,
    missing: u64,
    out_of_coverage: u64,
    holiday: bool,
}

type Acc = BTreeMap<(String, NaiveDate), Tally>;

fn merge(mut a: Acc, b: Acc) -> Acc {
    for (key, t) in b {
        let e = a.entry(key).or_default();
        e.n += t.n;
        e.displaced += t.displaced;
        e.missing += t.missing;
        e.out_of_coverage += t.out_of_coverage;
        e.holiday |= t.holiday;
    }
    a
}

/// Daily displacement and missing rates per home city for one method.
///
/// `city_sizes` gives N_c. When `requested` is non-empty only those cities
/// are reported and each must have a positive N_c. Cities without a CV
/// model get no variability bounds and a warning.
pub fn daily_rates(
    statuses: &StatusMatrix,
    method: Method,
    city_sizes: &BTreeMap<String, u64>,
    cv_models: &BTreeMap<String, CvModel>,
    requested: &[String],
    params: &Params,
) -> Result<RatesOutput, MetricsError> {
    let cities: Vec<&String> = if requested.is_empty() {
        city_sizes.iter().filter(|(_, n)| **n > 0).map(|(c, _)| c).collect()
    } else {
        for c in requested {
            if city_sizes.get(c).copied().unwrap_or(0) == 0 {
                return Err(MetricsError::ZeroBaseline(c.clone()));
            }
        }
        requested.iter().collect()
    };

    let acc: Acc = statuses
        .rows()
        .par_iter()
        .filter(|r| r.method == method)
        .fold(Acc::new, |mut acc, r| {
            let t = acc.entry((r.home_city.clone(), r.date)).or_default();
            t.n += 1;
            t.holiday |= r.holiday;
            match r.verdict {
                Verdict::Displaced => {
                    t.displaced += 1;
                    if r.out_of_coverage() {
                        t.out_of_coverage += 1;
                    }
                }
                Verdict::Missing => t.missing += 1,
                Verdict::AtExpected => {}
            }
            acc
        })
        .reduce(Acc::new, merge);

    let dates = statuses.dates();
    let mut out = RatesOutput::default();
    for city in cities {
        let n_c = city_sizes[city];
        let cv = cv_models.get(city);
        if cv.is_none() {
            out.warnings.push(format!("no CV model for {city}: variability bounds omitted"));
        }
        for &date in &dates {
            let t = acc.get(&(city.clone(), date)).copied().unwrap_or_default();
            if t.n != n_c {
                return Err(MetricsError::Reconciliation(format!(
                    "{city} on {date}: {} statuses for {n_c} baseline users",
                    t.n
                )));
            }
            let rate = pct(t.displaced, n_c);
            let missing_rate = pct(t.missing, n_c);
            out.metrics.push(CityDayMetrics {
                city: city.clone(),
                date,
                method,
                n: n_c,
                displaced: t.displaced,
                missing: t.missing,
                out_of_coverage: t.out_of_coverage,
                rate,
                missing_rate,
                cv_bounds: cv.map(|m| cv_bounds(rate, m, params)),
                scenario: Scenario::new(rate, missing_rate, params.scenario_mid_fraction),
                holiday: t.holiday,
            });
        }
    }
    Ok(out)
}
