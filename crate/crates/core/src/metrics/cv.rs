// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::model::{Hierarchy, Params};
use crate::signals::SignalSet;

/// Fewer daily counts than this make the CV estimate unreliable.
pub const MIN_CV_DAYS: usize = 60;

/// Coefficient of variation of a city's daily active-subscriber count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvModel {
    pub city: String,
    pub cv_baseline: f64,
    pub cv_disaster: f64,
    /// Number of daily counts behind `cv_baseline` (0 when given directly).
    pub days: usize,
}

impl CvModel {
    pub fn new(city: impl Into<String>, cv_baseline: f64, multiplier: f64) -> Self {
        CvModel { city: city.into(), cv_baseline, cv_disaster: cv_baseline * multiplier, days: 0 }
    }

    /// Sample standard deviation over mean of the daily counts.
    pub fn from_counts(city: impl Into<String>, counts: &[f64], multiplier: f64) -> Result<Self, MetricsError> {
        let city = city.into();
        if counts.len() < 2 {
            return Err(MetricsError::InsufficientData(format!("need at least two daily counts for '{city}'")));
        }
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        if mean <= 0.0 {
            return Err(MetricsError::InsufficientData(format!("mean daily count for '{city}' is zero")));
        }
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let cv_baseline = var.sqrt() / mean;
        Ok(CvModel { city, cv_baseline, cv_disaster: cv_baseline * multiplier, days: counts.len() })
    }

    pub fn is_short(&self) -> bool {
        self.days > 0 && self.days < MIN_CV_DAYS
    }

    /// Relative half-width `z * cv_disaster`.
    pub fn relative_half_width(&self, params: &Params) -> f64 {
        params.z_factor * self.cv_disaster
    }
}

/// `rate * (1 ± z * cv_disaster)`, lower end clamped at zero.
pub fn cv_bounds(rate: f64, cv: &CvModel, params: &Params) -> (f64, f64) {
    let h = cv.relative_half_width(params);
    ((rate * (1.0 - h)).max(0.0), rate * (1.0 + h))
}

/// Distinct users observed in each city on each given day.
pub fn daily_active_counts(
    signals: &SignalSet,
    days: &[NaiveDate],
    hierarchy: &Hierarchy,
) -> BTreeMap<String, BTreeMap<NaiveDate, u64>> {
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, u64>> = BTreeMap::new();
    let wanted: std::collections::BTreeSet<NaiveDate> = days.iter().copied().collect();
    for s in signals.iter() {
        if !wanted.contains(&s.date) {
            continue;
        }
        if let Some(city) = s.observed().and_then(|c| hierarchy.city_of(c).ok()) {
            *out.entry(city.to_string()).or_default().entry(s.date).or_insert(0) += 1;
        }
    }
    // days with nobody observed still count as zero
    for per_day in out.values_mut() {
        for d in days {
            per_day.entry(*d).or_insert(0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn footnote_arithmetic() {
        let cv = CvModel::new("APA", 0.035, 2.0);
        assert_abs_diff_eq!(cv.cv_disaster, 0.07, epsilon = 1e-12);
        let (lo, hi) = cv_bounds(6.7, &cv, &Params::default());
        assert_eq!(format!("{lo:.1}"), "5.8");
        assert_eq!(format!("{hi:.1}"), "7.6");
    }

    #[test]
    fn zero_rate_collapses() {
        let cv = CvModel::new("APA", 0.035, 2.0);
        assert_eq!(cv_bounds(0.0, &cv, &Params::default()), (0.0, 0.0));
    }

    #[test]
    fn multiplier_widths() {
        for (mult, width) in [(1.5, 10.0), (2.0, 14.0), (2.5, 17.0)] {
            let cv = CvModel::new("APA", 0.035, mult);
            let (lo, hi) = cv_bounds(100.0, &cv, &Params::default());
            assert_eq!(((hi - lo) / 2.0).round(), width);
        }
    }

    #[test]
    fn lower_bound_clamped() {
        let cv = CvModel::new("X", 0.4, 2.0);
        assert_eq!(cv_bounds(5.0, &cv, &Params::default()).0, 0.0);
    }

    #[test]
    fn cv_from_counts() {
        // mean 100, sample sd sqrt(200/3)
        let cv = CvModel::from_counts("X", &[90.0, 100.0, 110.0, 100.0], 2.0).unwrap();
        assert_abs_diff_eq!(cv.cv_baseline, (200.0f64 / 3.0).sqrt() / 100.0, epsilon = 1e-12);
        assert!(cv.is_short());
        assert!(CvModel::from_counts("X", &[0.0, 0.0], 2.0).is_err());
        assert!(CvModel::from_counts("X", &[1.0], 2.0).is_err());
    }
}
