// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CvModel, MetricsError};
use crate::model::{DayType, Params};

/// Subscriber-to-person conversion for one city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationScale {
    pub city: String,
    pub population: u64,
    pub weekday_avg: f64,
    pub weekend_avg: f64,
    pub avg_daily_baseline: f64,
    pub scaling_factor: f64,
}

impl PopulationScale {
    pub fn new(city: impl Into<String>, population: u64, weekday_avg: f64, weekend_avg: f64) -> Result<Self, MetricsError> {
        let city = city.into();
        let avg_daily_baseline = (weekday_avg * 5.0 + weekend_avg * 2.0) / 7.0;
        if avg_daily_baseline <= 0.0 || population == 0 {
            return Err(MetricsError::ZeroDenominator(city));
        }
        Ok(PopulationScale {
            scaling_factor: population as f64 / avg_daily_baseline,
            city,
            population,
            weekday_avg,
            weekend_avg,
            avg_daily_baseline,
        })
    }

    /// Averages daily active counts by day type. A day type with no days
    /// falls back to the other one.
    pub fn from_active_counts(
        city: impl Into<String>,
        population: u64,
        counts: &BTreeMap<NaiveDate, u64>,
    ) -> Result<Self, MetricsError> {
        let mut sums = [(0.0, 0usize); 2];
        for (d, c) in counts {
            let slot = &mut sums[(DayType::of(*d) == DayType::Weekend) as usize];
            slot.0 += *c as f64;
            slot.1 += 1;
        }
        let avg = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let (wd, we) = (avg(sums[0]), avg(sums[1]));
        let weekday = wd.or(we).unwrap_or(0.0);
        let weekend = we.or(wd).unwrap_or(0.0);
        Self::new(city, population, weekday, weekend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledEstimate {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Scales a displaced-subscriber count to persons, with CV bounds.
pub fn scale_population(displaced: f64, scale: &PopulationScale, cv: &CvModel, params: &Params) -> ScaledEstimate {
    let h = cv.relative_half_width(params);
    let f = scale.scaling_factor;
    ScaledEstimate {
        estimate: displaced * f,
        lo: (displaced * (1.0 - h) * f).max(0.0),
        hi: displaced * (1.0 + h) * f,
    }
}

/// Reads an `admin_code,population` table.
pub fn read_population_csv<R: Read>(reader: R) -> Result<BTreeMap<String, u64>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["admin_code", "population"] {
        return Err(MetricsError::Parse { line: 1, message: "expected header admin_code,population".into() });
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let code = rec.get(0).unwrap_or_default().to_string();
        let pop = rec
            .get(1)
            .unwrap_or_default()
            .parse::<u64>()
            .map_err(|e| MetricsError::Parse { line, message: format!("population: {e}") })?;
        if out.insert(code.clone(), pop).is_some() {
            return Err(MetricsError::Parse { line, message: format!("duplicate admin_code '{code}'") });
        }
    }
    Ok(out)
}
