// SPDX-License-Identifier: Apache-2.0

//! Alternative interval methods, used only to compare against the
//! CV-based operational bounds.
//!
//! Binomial intervals (Clopper-Pearson, Wilson) capture within-day sampling
//! precision only. The overdispersion-adjusted interval inflates binomial
//! variance by the dispersion of baseline daily rates. The bootstrap
//! resamples users within the day and, per replicate, a baseline day's
//! relative deviation in active-subscriber volume scaled by the disaster
//! multiplier, so it reflects both within-day sampling and day-to-day
//! variability.

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use super::{cv_bounds, CvModel, MetricsError};
use crate::model::Params;
use crate::signals::seeded_rng;

pub const MIN_DISPERSION_DAYS: usize = 10;

/// Two-sided tail probability for a standard-normal multiplier.
fn alpha_for(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - normal.cdf(z))
}

/// Exact binomial interval for `k` successes in `n` trials, as proportions.
pub fn clopper_pearson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let alpha = alpha_for(z);
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).expect("valid shape").inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).expect("valid shape").inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Wilson score interval, as proportions.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Ratio of the observed variance of baseline daily rates to their mean
/// binomial variance, floored at 1. Input is `(displaced, n)` per day.
pub fn overdispersion_phi(baseline: &[(u64, u64)]) -> Result<f64, MetricsError> {
    let days: Vec<(f64, f64)> = baseline.iter().filter(|(_, n)| *n > 0).map(|&(k, n)| (k as f64 / n as f64, n as f64)).collect();
    if days.len() < MIN_DISPERSION_DAYS {
        return Err(MetricsError::InsufficientBaseline { needed: MIN_DISPERSION_DAYS, found: days.len() });
    }
    let m = days.len() as f64;
    let mean = days.iter().map(|(p, _)| p).sum::<f64>() / m;
    let observed = days.iter().map(|(p, _)| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let binomial = days.iter().map(|(p, n)| p * (1.0 - p) / n).sum::<f64>() / m;
    if binomial <= 0.0 {
        return Ok(1.0);
    }
    Ok((observed / binomial).max(1.0))
}

/// Linear-interpolation quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap of a daily rate (as a proportion).
///
/// Resampling `n` users with replacement from a day with `k` displaced
/// gives a displaced count distributed Binomial(n, k/n), which is drawn
/// directly. `volume_deviations` are baseline-day relative deviations of
/// active-subscriber volume from its mean; each replicate applies one of
/// them, scaled by `multiplier`. An empty slice gives the plain user
/// bootstrap.
pub fn bootstrap_interval<R: Rng>(
    k: u64,
    n: u64,
    volume_deviations: &[f64],
    multiplier: f64,
    replicates: usize,
    z: f64,
    rng: &mut R,
) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = k as f64 / n as f64;
    let binom = Binomial::new(n, p).expect("p in [0, 1]");
    let mut draws: Vec<f64> = (0..replicates)
        .map(|_| {
            let within = binom.sample(rng) as f64 / n as f64;
            let factor = if volume_deviations.is_empty() {
                1.0
            } else {
                1.0 + multiplier * volume_deviations[rng.random_range(0..volume_deviations.len())]
            };
            (within * factor).max(0.0)
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let alpha = alpha_for(z);
    (percentile(&draws, alpha / 2.0), percentile(&draws, 1.0 - alpha / 2.0))
}

/// Interval widths for one day, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalWidths {
    pub date: NaiveDate,
    pub rate: f64,
    pub clopper_pearson: f64,
    pub wilson: f64,
    pub cv_based: f64,
    pub overdispersion: f64,
    pub bootstrap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalComparison {
    pub city: String,
    pub phi: f64,
    pub per_day: Vec<IntervalWidths>,
    pub average: IntervalWidths,
}

impl IntervalComparison {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["city", "date", "rate_pct", "clopper_pearson_pp", "wilson_pp", "cv_pp", "overdispersion_pp", "bootstrap_pp"])?;
        let f = |v: f64| format!("{v:.4}");
        let row = |label: String, r: &IntervalWidths| {
            vec![
                self.city.clone(),
                label,
                f(r.rate),
                f(r.clopper_pearson),
                f(r.wilson),
                f(r.cv_based),
                f(r.overdispersion),
                f(r.bootstrap),
            ]
        };
        for r in &self.per_day {
            w.write_record(row(r.date.to_string(), r))?;
        }
        w.write_record(row("average".to_string(), &self.average))?;
        w.flush()?;
        Ok(())
    }
}

/// Compares interval widths for a city's post-disaster days.
///
/// * `days`: `(date, displaced, n)` per post-disaster day
/// * `baseline`: `(displaced, n)` per baseline day, for dispersion
/// * `active_counts`: daily active-subscriber counts behind the CV model
pub fn comparison_intervals(
    city: &str,
    days: &[(NaiveDate, u64, u64)],
    baseline: &[(u64, u64)],
    active_counts: &[f64],
    cv: &CvModel,
    params: &Params,
) -> Result<IntervalComparison, MetricsError> {
    if days.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let phi = overdispersion_phi(baseline)?;
    let mean_active = active_counts.iter().sum::<f64>() / active_counts.len().max(1) as f64;
    let deviations: Vec<f64> = if mean_active > 0.0 {
        active_counts.iter().map(|c| c / mean_active - 1.0).collect()
    } else {
        Vec::new()
    };
    let z = params.z_factor;

    let per_day: Vec<IntervalWidths> = days
        .iter()
        .map(|&(date, k, n)| {
            let p = if n == 0 { 0.0 } else { k as f64 / n as f64 };
            let (cp_lo, cp_hi) = clopper_pearson(k, n, z);
            let (w_lo, w_hi) = wilson(k, n, z);
            let (cv_lo, cv_hi) = cv_bounds(100.0 * p, cv, params);
            let od = if n == 0 { 0.0 } else { 2.0 * z * (phi * p * (1.0 - p) / n as f64).sqrt() };
            let mut rng = seeded_rng(params.rng_seed, city, &format!("bootstrap:{date}"));
            let (b_lo, b_hi) =
                bootstrap_interval(k, n, &deviations, params.cv_multiplier, params.bootstrap_replicates, z, &mut rng);
            IntervalWidths {
                date,
                rate: 100.0 * p,
                clopper_pearson: 100.0 * (cp_hi - cp_lo),
                wilson: 100.0 * (w_hi - w_lo),
                cv_based: cv_hi - cv_lo,
                overdispersion: 100.0 * od,
                bootstrap: 100.0 * (b_hi - b_lo),
            }
        })
        .collect();

    let m = per_day.len() as f64;
    let avg = |f: fn(&IntervalWidths) -> f64| per_day.iter().map(f).sum::<f64>() / m;
    let average = IntervalWidths {
        date: per_day[0].date,
        rate: avg(|r| r.rate),
        clopper_pearson: avg(|r| r.clopper_pearson),
        wilson: avg(|r| r.wilson),
        cv_based: avg(|r| r.cv_based),
        overdispersion: avg(|r| r.overdispersion),
        bootstrap: avg(|r| r.bootstrap),
    };
    Ok(IntervalComparison { city: city.to_string(), phi, per_day, average })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Score interval evaluated straight from its defining quadratic:
    /// (p - x)^2 = z^2 x (1 - x) / n, solved for x.
    fn wilson_oracle(k: f64, n: f64, z: f64) -> (f64, f64) {
        let p = k / n;
        let a = 1.0 + z * z / n;
        let b = -(2.0 * p + z * z / n);
        let c = p * p;
        let disc = (b * b - 4.0 * a * c).sqrt();
        ((-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a))
    }

    #[test]
    fn wilson_matches_quadratic_oracle() {
        let (lo, hi) = wilson(50, 1000, 1.96);
        let (olo, ohi) = wilson_oracle(50.0, 1000.0, 1.96);
        assert_abs_diff_eq!(lo, olo, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, ohi, epsilon = 1e-12);
        // frozen from the oracle
        assert_abs_diff_eq!(lo, 0.038130, epsilon = 1e-6);
        assert_abs_diff_eq!(hi, 0.065314, epsilon = 1e-6);
    }

    #[test]
    fn clopper_pearson_boundaries() {
        let z = 1.96;
        let alpha = alpha_for(z);
        let (lo, hi) = clopper_pearson(0, 100, z);
        assert_eq!(lo, 0.0);
        // closed form for k = 0: 1 - (alpha/2)^(1/n)
        assert_abs_diff_eq!(hi, 1.0 - (alpha / 2.0).powf(0.01), epsilon = 1e-6);
        let (lo, hi) = clopper_pearson(100, 100, z);
        assert_eq!(hi, 1.0);
        assert_abs_diff_eq!(lo, (alpha / 2.0).powf(0.01), epsilon = 1e-6);
    }

    #[test]
    fn clopper_pearson_is_wider_than_wilson() {
        for (k, n) in [(5, 100), (70, 1000), (700, 10000)] {
            let (a, b) = clopper_pearson(k, n, 1.96);
            let (c, d) = wilson(k, n, 1.96);
            assert!(b - a > d - c);
            // and covers the point estimate
            let p = k as f64 / n as f64;
            assert!(a < p && p < b);
        }
    }

    #[test]
    fn phi_is_floored_and_needs_ten_days() {
        let flat: Vec<(u64, u64)> = (0..12).map(|_| (50, 1000)).collect();
        assert_eq!(overdispersion_phi(&flat).unwrap(), 1.0);
        assert!(matches!(
            overdispersion_phi(&flat[..9]),
            Err(MetricsError::InsufficientBaseline { needed: 10, found: 9 })
        ));
        let noisy: Vec<(u64, u64)> = (0..12).map(|i| (if i % 2 == 0 { 20 } else { 80 }, 1000)).collect();
        let phi = overdispersion_phi(&noisy).unwrap();
        // var of alternating 0.02/0.08 with n-1 denominator over mean p(1-p)/n
        let expected = (12.0 * 0.03f64.powi(2) / 11.0) / ((0.02 * 0.98 + 0.08 * 0.92) / 2.0 / 1000.0);
        assert_abs_diff_eq!(phi, expected, epsilon = 1e-9);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_abs_diff_eq!(percentile(&v, 0.5), 2.5);
    }

    #[test]
    fn plain_bootstrap_tracks_binomial_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lo, hi) = bootstrap_interval(700, 10_000, &[], 2.0, 4000, 1.96, &mut rng);
        let (wlo, whi) = wilson(700, 10_000, 1.96);
        assert!(((hi - lo) / (whi - wlo) - 1.0).abs() < 0.1);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let dev = [-0.05, 0.0, 0.05];
        let a = bootstrap_interval(70, 1000, &dev, 2.0, 500, 1.96, &mut ChaCha8Rng::seed_from_u64(9));
        let b = bootstrap_interval(70, 1000, &dev, 2.0, 500, 1.96, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(bootstrap_interval(0, 1000, &dev, 2.0, 50, 1.96, &mut ChaCha8Rng::seed_from_u64(9)), (0.0, 0.0));
    }
}
