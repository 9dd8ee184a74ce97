// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::io::BufRead;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Minimum non-holiday baseline span for home detection.
pub const MIN_BASELINE_DAYS: usize = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn of(date: NaiveDate) -> DayType {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }
}

/// Calendar day type plus the holiday annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DayInfo {
    pub day_type: DayType,
    pub holiday: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisCalendar {
    pub baseline_start: NaiveDate,
    pub baseline_end: NaiveDate,
    pub disaster_onset: NaiveDate,
    pub observation_end: NaiveDate,
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
    #[serde(default)]
    pub cv_baseline_window: Option<(NaiveDate, NaiveDate)>,
}

impl AnalysisCalendar {
    pub fn new(
        baseline_start: NaiveDate,
        baseline_end: NaiveDate,
        disaster_onset: NaiveDate,
        observation_end: NaiveDate,
    ) -> Result<Self, ModelError> {
        let cal = AnalysisCalendar {
            baseline_start,
            baseline_end,
            disaster_onset,
            observation_end,
            holidays: BTreeSet::new(),
            cv_baseline_window: None,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn with_holidays(mut self, holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.holidays.extend(holidays);
        self
    }

    pub fn with_cv_window(mut self, start: NaiveDate, end: NaiveDate) -> Result<Self, ModelError> {
        if start > end {
            return Err(ModelError::CalendarOrder("cv window start after end".into()));
        }
        self.cv_baseline_window = Some((start, end));
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.baseline_start > self.baseline_end {
            return Err(ModelError::CalendarOrder("baseline_start after baseline_end".into()));
        }
        if self.baseline_end >= self.disaster_onset {
            return Err(ModelError::CalendarOrder("baseline_end must precede disaster_onset".into()));
        }
        if self.disaster_onset > self.observation_end {
            return Err(ModelError::CalendarOrder("disaster_onset after observation_end".into()));
        }
        if let Some((s, e)) = self.cv_baseline_window {
            if s > e {
                return Err(ModelError::CalendarOrder("cv window start after end".into()));
            }
        }
        Ok(())
    }

    /// Non-fatal calendar problems (currently: a baseline shorter than six weeks).
    pub fn warnings(&self) -> Vec<String> {
        let usable = self.baseline_days().count();
        if usable < MIN_BASELINE_DAYS {
            vec![format!(
                "baseline covers {usable} non-holiday days; at least {MIN_BASELINE_DAYS} are recommended for home detection"
            )]
        } else {
            Vec::new()
        }
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }

    pub fn day_info(&self, date: NaiveDate) -> DayInfo {
        DayInfo { day_type: DayType::of(date), holiday: self.is_holiday(date) }
    }

    /// Ingestion window: baseline start through the end of observation.
    pub fn in_window(&self, date: NaiveDate) -> bool {
        date >= self.baseline_start && date <= self.observation_end
    }

    /// Baseline day that is not a holiday.
    pub fn is_baseline_day(&self, date: NaiveDate) -> bool {
        date >= self.baseline_start && date <= self.baseline_end && !self.is_holiday(date)
    }

    pub fn is_observation_day(&self, date: NaiveDate) -> bool {
        date >= self.disaster_onset && date <= self.observation_end
    }

    /// Non-holiday baseline days in order.
    pub fn baseline_days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        days_between(self.baseline_start, self.baseline_end).filter(|d| !self.is_holiday(*d))
    }

    /// Post-disaster days in order; holidays are kept (they are only flagged).
    pub fn observation_days(&self) -> impl Iterator<Item = NaiveDate> {
        days_between(self.disaster_onset, self.observation_end)
    }

    /// Non-holiday days of the CV window, falling back to the baseline when
    /// no separate window is configured. The flag reports the fallback.
    pub fn cv_days(&self) -> (Vec<NaiveDate>, bool) {
        match self.cv_baseline_window {
            Some((s, e)) => (days_between(s, e).filter(|d| !self.is_holiday(*d)).collect(), false),
            None => (self.baseline_days().collect(), true),
        }
    }
}

/// Inclusive day range.
pub fn days_between(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start.iter_days().take_while(move |d| *d <= end)
}

/// Reads one ISO-8601 date per line; blank lines and `#` comments are skipped.
pub fn read_holidays<R: BufRead>(reader: R) -> Result<BTreeSet<NaiveDate>, ModelError> {
    let mut out = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ModelError::Csv { line: i + 1, message: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(trimmed, "%Y-%m-%d")
            .map_err(|e| ModelError::Csv { line: i + 1, message: format!("bad holiday date {trimmed:?}: {e}") })?;
        out.insert(date);
    }
    Ok(out)
}
