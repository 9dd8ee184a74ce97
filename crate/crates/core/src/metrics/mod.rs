// SPDX-License-Identifier: Apache-2.0

//! Aggregate metrics over status matrices: daily rates with scenario and
//! variability bounds, origin-destination flows, return dynamics and
//! population scaling. All count outputs pass through k-suppression.

mod cv;
mod flows;
mod intervals;
mod rates;
mod returns;
mod scale;

use thiserror::Error;

pub use cv::{cv_bounds, daily_active_counts, CvModel, MIN_CV_DAYS};
pub use flows::{od_flows, FlowMatrix, FlowRow, OTHER_DESTINATION};
pub use intervals::{
    bootstrap_interval, clopper_pearson, comparison_intervals, overdispersion_phi, percentile, wilson,
    IntervalComparison, IntervalWidths, MIN_DISPERSION_DAYS,
};
pub use rates::{daily_rates, CityDayMetrics, RatesOutput, Scenario};
pub use returns::{return_series, return_series_from_counts, ReturnSeries, ReturnVariant};
pub use scale::{read_population_csv, scale_population, PopulationScale, ScaledEstimate};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("city '{0}' has no baseline users")]
    ZeroBaseline(String),
    #[error("observation window is empty")]
    EmptyWindow,
    #[error("overdispersion needs at least {needed} baseline days, found {found}")]
    InsufficientBaseline { needed: usize, found: usize },
    #[error("average daily baseline for '{0}' is zero")]
    ZeroDenominator(String),
    #[error("{0}")]
    InsufficientData(String),
    #[error("count reconciliation failed: {0}")]
    Reconciliation(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Hides a positive count below `k`.
pub fn suppress(count: u64, k: u64) -> Option<u64> {
    if count > 0 && count < k {
        None
    } else {
        Some(count)
    }
}

pub(crate) fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suppression_threshold() {
        assert_eq!(suppress(0, 10), Some(0));
        assert_eq!(suppress(9, 10), None);
        assert_eq!(suppress(10, 10), Some(10));
        assert_eq!(suppress(1, 0), Some(1));
    }
}
