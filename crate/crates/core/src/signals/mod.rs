// SPDX-License-Identifier: Apache-2.0

//! Daily location signals.
//!
//! Every downstream stage consumes exactly one residential-like and one
//! activity-like location per user-day. In external mode both come from the
//! single vendor value. In internal mode they are computed from intra-day
//! events: the residential signal is the modal nighttime unit (falling back
//! to the daytime mode), the activity signal is the modal daytime unit.

mod ingest;
mod mode;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnalysisCalendar, LocationEvent, Params, TimeSlot};

pub use ingest::{ingest_daily, ingest_events, read_daily_csv, read_events_csv, RawRecord, TimestampParser};
pub use mode::{derive_seed, mode_with_seeded_tiebreak, seeded_rng};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("mode of an empty set")]
    EmptyInput,
    #[error("{malformed} of {total} rows are malformed; refusing to continue")]
    AbortThresholdExceeded { malformed: u64, total: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quality {
    High,
    Medium,
    Low,
    NotAvailable,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::High => "High",
            Quality::Medium => "Medium",
            Quality::Low => "Low",
            Quality::NotAvailable => "NotAvailable",
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "High" => Ok(Quality::High),
            "Medium" => Ok(Quality::Medium),
            "Low" => Ok(Quality::Low),
            "NotAvailable" => Ok(Quality::NotAvailable),
            other => Err(format!("unknown quality '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailySignal {
    pub user_id: String,
    pub date: NaiveDate,
    pub residential: Option<String>,
    pub activity: Option<String>,
    pub quality: Quality,
}

impl DailySignal {
    /// Vendor pass-through: one value fills both roles.
    pub fn external(user_id: impl Into<String>, date: NaiveDate, location: impl Into<String>) -> Self {
        let location = location.into();
        DailySignal {
            user_id: user_id.into(),
            date,
            residential: Some(location.clone()),
            activity: Some(location),
            quality: Quality::NotAvailable,
        }
    }

    /// Location used to decide where the user was: residential first.
    pub fn observed(&self) -> Option<&str> {
        self.residential.as_deref().or(self.activity.as_deref())
    }
}

/// Row counts per outcome. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: u64,
    pub duplicate: u64,
    pub out_of_window: u64,
    pub unknown_code: u64,
    pub malformed: u64,
    /// Post-disaster rows with codes outside the hierarchy, kept as
    /// out-of-coverage observations instead of being dropped.
    #[serde(default)]
    pub out_of_coverage: u64,
}

impl IngestReport {
    pub fn total(&self) -> u64 {
        self.accepted + self.duplicate + self.out_of_window + self.unknown_code + self.malformed
    }

    pub fn merge(&self, other: &IngestReport) -> IngestReport {
        IngestReport {
            accepted: self.accepted + other.accepted,
            duplicate: self.duplicate + other.duplicate,
            out_of_window: self.out_of_window + other.out_of_window,
            unknown_code: self.unknown_code + other.unknown_code,
            malformed: self.malformed + other.malformed,
            out_of_coverage: self.out_of_coverage + other.out_of_coverage,
        }
    }

    pub fn check_abort(&self) -> Result<(), SignalError> {
        let total = self.total();
        if total > 0 && self.malformed * 2 > total {
            return Err(SignalError::AbortThresholdExceeded { malformed: self.malformed, total });
        }
        Ok(())
    }
}

/// Per-user signals, each user's days sorted by date.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignalSet {
    by_user: BTreeMap<String, Vec<DailySignal>>,
}

impl SignalSet {
    pub fn new() -> Self {
        SignalSet::default()
    }

    /// Builds from arbitrary signals; a later duplicate (user, date) is dropped.
    pub fn from_signals(signals: impl IntoIterator<Item = DailySignal>) -> Self {
        let mut by_user: BTreeMap<String, Vec<DailySignal>> = BTreeMap::new();
        for s in signals {
            by_user.entry(s.user_id.clone()).or_default().push(s);
        }
        for days in by_user.values_mut() {
            days.sort_by_key(|s| s.date);
            days.dedup_by_key(|s| s.date);
        }
        SignalSet { by_user }
    }

    pub(crate) fn from_map(by_user: BTreeMap<String, Vec<DailySignal>>) -> Self {
        SignalSet { by_user }
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.by_user.keys().map(String::as_str)
    }

    pub fn user_count(&self) -> usize {
        self.by_user.len()
    }

    pub fn len(&self) -> usize {
        self.by_user.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_user.is_empty()
    }

    pub fn for_user(&self, user: &str) -> &[DailySignal] {
        self.by_user.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn on(&self, user: &str, date: NaiveDate) -> Option<&DailySignal> {
        let days = self.for_user(user);
        days.binary_search_by_key(&date, |s| s.date).ok().map(|i| &days[i])
    }

    pub fn per_user(&self) -> impl Iterator<Item = (&str, &[DailySignal])> {
        self.by_user.iter().map(|(u, v)| (u.as_str(), v.as_slice()))
    }

    pub(crate) fn per_user_map(&self) -> &BTreeMap<String, Vec<DailySignal>> {
        &self.by_user
    }

    pub fn iter(&self) -> impl Iterator<Item = &DailySignal> {
        self.by_user.values().flatten()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["user_id", "date", "residential", "activity", "quality"])?;
        for s in self.iter() {
            w.write_record([
                s.user_id.as_str(),
                &s.date.to_string(),
                s.residential.as_deref().unwrap_or(""),
                s.activity.as_deref().unwrap_or(""),
                s.quality.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SignalError> {
        #[derive(Deserialize)]
        struct Row {
            user_id: String,
            date: NaiveDate,
            residential: Option<String>,
            activity: Option<String>,
            quality: String,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i as u64 + 2;
            let row = row?;
            let quality = row.quality.parse().map_err(|message| SignalError::Parse { line, message })?;
            let residential = row.residential.filter(|s| !s.is_empty());
            let activity = row.activity.filter(|s| !s.is_empty());
            if residential.is_none() && activity.is_none() {
                return Err(SignalError::Parse { line, message: "signal without any location".into() });
            }
            out.push(DailySignal { user_id: row.user_id, date: row.date, residential, activity, quality });
        }
        Ok(SignalSet::from_signals(out))
    }
}

/// Computes internal-mode daily signals from intra-day events.
///
/// Events in the post-midnight tail of the nighttime window belong to the
/// previous date. Days whose attributed date falls outside the calendar
/// window are dropped.
pub fn derive_internal(events: &[LocationEvent], calendar: &AnalysisCalendar, params: &Params) -> SignalSet {
    // user -> date -> (night codes, day codes)
    type Buckets = BTreeMap<NaiveDate, (Vec<String>, Vec<String>)>;
    let mut grouped: BTreeMap<&str, Buckets> = BTreeMap::new();
    for ev in events {
        let (date, night) = attribute(ev, params);
        if !calendar.in_window(date) {
            continue;
        }
        let slot = grouped.entry(ev.user_id.as_str()).or_default().entry(date).or_default();
        if night {
            slot.0.push(ev.location.clone());
        } else {
            slot.1.push(ev.location.clone());
        }
    }

    let seed = params.rng_seed;
    let by_user: BTreeMap<String, Vec<DailySignal>> = grouped
        .into_par_iter()
        .map(|(user, days)| {
            let signals = days
                .into_iter()
                .map(|(date, (night, day))| day_signal(user, date, &night, &day, seed))
                .collect();
            (user.to_string(), signals)
        })
        .collect();
    SignalSet::from_map(by_user)
}

/// Attributed date and whether the event is nighttime.
fn attribute(ev: &LocationEvent, params: &Params) -> (NaiveDate, bool) {
    let date = ev.timestamp.date();
    match params.nighttime_window.classify(ev.timestamp.time()) {
        TimeSlot::Night => (date, true),
        TimeSlot::NightTail => (date.pred_opt().unwrap_or(date), true),
        TimeSlot::Day => (date, false),
    }
}

fn day_signal(user: &str, date: NaiveDate, night: &[String], day: &[String], seed: u64) -> DailySignal {
    let mode = |values: &[String], purpose: &str| -> Option<String> {
        if values.is_empty() {
            None
        } else {
            mode_with_seeded_tiebreak(values, seed, user, &format!("{purpose}:{date}")).ok()
        }
    };
    let activity = mode(day, "activity");
    let residential = mode(night, "residential").or_else(|| activity.clone());
    let quality = if night.len() + day.len() < 2 {
        Quality::Low
    } else if !night.is_empty() {
        Quality::High
    } else {
        Quality::Medium
    };
    DailySignal { user_id: user.to_string(), date, residential, activity, quality }
}
