// SPDX-License-Identifier: Apache-2.0

//! Domain types shared across the pipeline: admin hierarchy, analysis
//! calendar, parameters and raw location records.

mod calendar;
mod hierarchy;
mod params;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calendar::{days_between, read_holidays, AnalysisCalendar, DayInfo, DayType, MIN_BASELINE_DAYS};
pub use hierarchy::{AdminLevel, AdminUnit, Hierarchy, OUT_OF_COVERAGE};
pub use params::{NightWindow, Params, TimeSlot};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown admin code '{0}'")]
    UnknownCode(String),
    #[error("admin code '{0}' has no ADM3 ancestor")]
    HierarchyGap(String),
    #[error("admin code '{code}' is {level}, above city level")]
    AboveCityLevel { code: String, level: AdminLevel },
    #[error("duplicate admin code '{0}'")]
    DuplicateCode(String),
    #[error("empty admin code")]
    EmptyCode,
    #[error("unit '{code}' references missing parent '{parent}'")]
    UnknownParent { code: String, parent: String },
    #[error("unit '{code}' ({level}) has parent '{parent}' at {parent_level}")]
    ParentLevel { code: String, level: AdminLevel, parent: String, parent_level: AdminLevel },
    #[error("unknown admin level '{0}'")]
    BadLevel(String),
    #[error("calendar: {0}")]
    CalendarOrder(String),
    #[error("parameter: {0}")]
    BadParam(String),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// One vendor-supplied location for a user on a day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyLocation {
    pub user_id: String,
    pub date: NaiveDate,
    pub location: String,
}

/// One intra-day observation, timestamp in the configured local time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationEvent {
    pub user_id: String,
    pub timestamp: NaiveDateTime,
    pub location: String,
}
