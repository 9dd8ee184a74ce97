// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

/// Nighttime window at minute resolution. `end` is inclusive, so the
/// default 21:00-04:59 covers 21:00:00 up to 04:59:59.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NightWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

/// Where a timestamp falls relative to the nighttime window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSlot {
    /// Night belonging to the same calendar date.
    Night,
    /// Post-midnight tail of the previous date's night.
    NightTail,
    Day,
}

impl NightWindow {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Self {
        NightWindow { start, end }
    }

    pub fn wraps_midnight(&self) -> bool {
        self.end < self.start
    }

    fn minute(t: NaiveTime) -> u32 {
        t.hour() * 60 + t.minute()
    }

    pub fn classify(&self, t: NaiveTime) -> TimeSlot {
        let (s, e, m) = (Self::minute(self.start), Self::minute(self.end), Self::minute(t));
        if self.wraps_midnight() {
            if m >= s {
                TimeSlot::Night
            } else if m <= e {
                TimeSlot::NightTail
            } else {
                TimeSlot::Day
            }
        } else if m >= s && m <= e {
            TimeSlot::Night
        } else {
            TimeSlot::Day
        }
    }
}

impl Default for NightWindow {
    fn default() -> Self {
        NightWindow {
            start: NaiveTime::from_hms_opt(21, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(4, 59, 0).unwrap(),
        }
    }
}

impl fmt::Display for NightWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start.format("%H:%M"), self.end.format("%H:%M"))
    }
}

impl FromStr for NightWindow {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadParam(format!("nighttime window {s:?} is not HH:MM-HH:MM"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let start = NaiveTime::parse_from_str(a.trim(), "%H:%M").map_err(|_| bad())?;
        let end = NaiveTime::parse_from_str(b.trim(), "%H:%M").map_err(|_| bad())?;
        Ok(NightWindow { start, end })
    }
}

impl Serialize for NightWindow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NightWindow {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tunable method parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub nighttime_window: NightWindow,
    pub weekend_min_days: u32,
    pub weekday_min_days: u32,
    pub cv_multiplier: f64,
    pub z_factor: f64,
    pub suppression_k: u64,
    pub rng_seed: u64,
    /// Share of missing users assumed displaced in the middle scenario.
    pub scenario_mid_fraction: f64,
    pub bootstrap_replicates: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            nighttime_window: NightWindow::default(),
            weekend_min_days: 2,
            weekday_min_days: 5,
            cv_multiplier: 2.0,
            z_factor: 1.96,
            suppression_k: 10,
            rng_seed: 0,
            scenario_mid_fraction: 0.5,
            bootstrap_replicates: 1000,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::BadParam(m.to_string()));
        if self.weekend_min_days < 1 {
            return fail("weekend_min_days must be at least 1");
        }
        if self.weekday_min_days < 1 {
            return fail("weekday_min_days must be at least 1");
        }
        if !(self.cv_multiplier > 0.0 && self.cv_multiplier.is_finite()) {
            return fail("cv_multiplier must be positive");
        }
        if !(self.z_factor > 0.0 && self.z_factor.is_finite()) {
            return fail("z_factor must be positive");
        }
        if !(0.0..=1.0).contains(&self.scenario_mid_fraction) {
            return fail("scenario_mid_fraction must lie in [0, 1]");
        }
        if self.bootstrap_replicates == 0 {
            return fail("bootstrap_replicates must be positive");
        }
        Ok(())
    }
}
