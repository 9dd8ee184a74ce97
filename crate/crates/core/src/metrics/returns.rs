// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::rates::fmt_opt_count;
use super::{suppress, MetricsError};
use crate::detect::{Method, StatusMatrix, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnVariant {
    /// Denominator is the peak over the whole window.
    Retrospective,
    /// Denominator is the peak up to each day.
    RunningMax,
}

impl ReturnVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ReturnVariant::Retrospective => "Retrospective",
            ReturnVariant::RunningMax => "RunningMax",
        }
    }
}

impl std::fmt::Display for ReturnVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Daily return events and cumulative return rate for one city.
///
/// Return counts are events, not unique users: a user displaced, back,
/// and displaced again contributes two events if they return twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub city: String,
    pub variant: ReturnVariant,
    pub dates: Vec<NaiveDate>,
    pub displaced: Vec<u64>,
    pub returns: Vec<u64>,
    /// Denominator used on each day.
    pub denominators: Vec<u64>,
    /// Peak of displaced plus cumulative returns over the window.
    pub max_displaced: u64,
    pub cumulative_rate: Vec<f64>,
}

impl ReturnSeries {
    pub fn cumulative_returns(&self) -> Vec<u64> {
        self.returns
            .iter()
            .scan(0u64, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// Returns CSV with return counts below `k` blanked.
    pub fn write_csv<W: Write>(series: &[ReturnSeries], writer: W, k: u64) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["city", "date", "R", "cum_return_pct", "variant"])?;
        for s in series {
            for i in 0..s.dates.len() {
                w.write_record([
                    s.city.clone(),
                    s.dates[i].to_string(),
                    fmt_opt_count(suppress(s.returns[i], k)),
                    format!("{:.4}", s.cumulative_rate[i]),
                    s.variant.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the series from per-day displaced and return-event counts.
pub fn return_series_from_counts(
    city: &str,
    dates: &[NaiveDate],
    displaced: &[u64],
    returns: &[u64],
    variant: ReturnVariant,
) -> Result<ReturnSeries, MetricsError> {
    if dates.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    if displaced.len() != dates.len() || returns.len() != dates.len() {
        return Err(MetricsError::InsufficientData("return series inputs differ in length".into()));
    }
    let mut cum = 0u64;
    let mut running = 0u64;
    let mut cumulative = Vec::with_capacity(dates.len());
    let mut peaks = Vec::with_capacity(dates.len());
    for (d, r) in displaced.iter().zip(returns) {
        cum += r;
        running = running.max(d + cum);
        cumulative.push(cum);
        peaks.push(running);
    }
    let max_displaced = running;
    let denominators: Vec<u64> = match variant {
        ReturnVariant::Retrospective => vec![max_displaced; dates.len()],
        ReturnVariant::RunningMax => peaks,
    };
    let cumulative_rate = cumulative
        .iter()
        .zip(&denominators)
        .map(|(&c, &den)| if den == 0 { 0.0 } else { 100.0 * c as f64 / den as f64 })
        .collect();
    Ok(ReturnSeries {
        city: city.to_string(),
        variant,
        dates: dates.to_vec(),
        displaced: displaced.to_vec(),
        returns: returns.to_vec(),
        denominators,
        max_displaced,
        cumulative_rate,
    })
}

/// Return series for one home city over every date in the matrix, from
/// context-aware verdicts. A return event is Displaced on the previous
/// date and AtExpected on the current one; Missing never counts.
pub fn return_series(statuses: &StatusMatrix, city: &str, variant: ReturnVariant) -> Result<ReturnSeries, MetricsError> {
    let dates: Vec<NaiveDate> = statuses.dates().into_iter().collect();
    let index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut per_user: BTreeMap<&str, Vec<Option<Verdict>>> = BTreeMap::new();
    for r in statuses.by_method(Method::ContextAware) {
        if r.home_city != city {
            continue;
        }
        per_user.entry(&r.user_id).or_insert_with(|| vec![None; dates.len()])[index[&r.date]] = Some(r.verdict);
    }
    let mut displaced = vec![0u64; dates.len()];
    let mut returns = vec![0u64; dates.len()];
    for verdicts in per_user.values() {
        for (t, v) in verdicts.iter().enumerate() {
            if *v == Some(Verdict::Displaced) {
                displaced[t] += 1;
            }
            if t > 0 && verdicts[t - 1] == Some(Verdict::Displaced) && *v == Some(Verdict::AtExpected) {
                returns[t] += 1;
            }
        }
    }
    return_series_from_counts(city, &dates, &displaced, &returns, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{DayStatus, RuleFired};
    use proptest::prelude::*;

    fn matrix(sequences: &[&[Verdict]]) -> StatusMatrix {
        let start = NaiveDate::from_ymd_opt(2025, 9, 22).unwrap();
        let mut rows = Vec::new();
        for (u, seq) in sequences.iter().enumerate() {
            for (t, v) in seq.iter().enumerate() {
                rows.push(DayStatus {
                    user_id: format!("u{u}"),
                    date: start + chrono::Days::new(t as u64),
                    home_city: "APA".into(),
                    observed_city: (*v != Verdict::Missing).then(|| "X".into()),
                    verdict: *v,
                    rule_fired: RuleFired::LocalResidentAny,
                    method: Method::ContextAware,
                    holiday: false,
                });
            }
        }
        StatusMatrix::from_rows(rows)
    }

    use Verdict::{AtExpected as A, Displaced as D, Missing as M};

    #[test]
    fn single_return() {
        let s = return_series(&matrix(&[&[D, A]]), "APA", ReturnVariant::Retrospective).unwrap();
        assert_eq!(s.returns, vec![0, 1]);
        assert_eq!(s.max_displaced, 1);
        assert_eq!(s.cumulative_rate, vec![0.0, 100.0]);
    }

    #[test]
    fn missing_is_not_a_return() {
        let s = return_series(&matrix(&[&[D, M]]), "APA", ReturnVariant::Retrospective).unwrap();
        assert_eq!(s.returns, vec![0, 0]);
        assert_eq!(s.max_displaced, 1);
    }

    #[test]
    fn re_displacement_cycle_counts_two_events() {
        let s = return_series(&matrix(&[&[D, A, D, A]]), "APA", ReturnVariant::Retrospective).unwrap();
        assert_eq!(s.returns, vec![0, 1, 0, 1]);
        // D + cumulative R per day: 1, 1, 2, 2
        assert_eq!(s.max_displaced, 2);
        assert_eq!(s.cumulative_rate, vec![0.0, 50.0, 50.0, 100.0]);
    }

    #[test]
    fn empty_window() {
        assert!(matches!(
            return_series(&StatusMatrix::default(), "APA", ReturnVariant::Retrospective),
            Err(MetricsError::EmptyWindow)
        ));
    }

    #[test]
    fn running_max_denominators() {
        let s = return_series_from_counts(
            "X",
            &[NaiveDate::MIN, NaiveDate::MIN, NaiveDate::MIN],
            &[4, 1, 6],
            &[0, 3, 0],
            ReturnVariant::RunningMax,
        )
        .unwrap();
        assert_eq!(s.denominators, vec![4, 4, 9]);
        assert_eq!(s.max_displaced, 9);
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(A), Just(D), Just(M)]
    }

    proptest! {
        #[test]
        fn retrospective_is_monotone_and_bounded(
            seqs in prop::collection::vec(prop::collection::vec(verdict(), 6), 1..20)
        ) {
            let refs: Vec<&[Verdict]> = seqs.iter().map(|s| s.as_slice()).collect();
            let m = matrix(&refs);
            let s = return_series(&m, "APA", ReturnVariant::Retrospective).unwrap();
            for w in s.cumulative_rate.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(s.cumulative_rate.iter().all(|&r| (0.0..=100.0).contains(&r)));
            let r = return_series(&m, "APA", ReturnVariant::RunningMax).unwrap();
            prop_assert!(r.cumulative_rate.iter().all(|&x| (0.0..=100.0).contains(&x)));
        }
    }
}
