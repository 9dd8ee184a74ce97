// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime};

use super::{DailySignal, IngestReport, SignalError, SignalSet};
use crate::model::{AnalysisCalendar, Hierarchy, LocationEvent, Params, TimeSlot};

/// One unparsed input row. `when` is a date (external mode) or a timestamp
/// (internal mode).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub user_id: String,
    pub when: String,
    pub admin_code: String,
}

impl RawRecord {
    pub fn new(user_id: impl Into<String>, when: impl Into<String>, admin_code: impl Into<String>) -> Self {
        RawRecord { user_id: user_id.into(), when: when.into(), admin_code: admin_code.into() }
    }
}

fn read_rows<R: Read>(reader: R, second: &str) -> Result<Vec<Result<RawRecord, String>>, SignalError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["user_id", second, "admin_code"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(SignalError::Parse {
            line: 1,
            message: format!("expected header '{}', found '{}'", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        out.push(match rec {
            Ok(r) if r.len() == 3 => Ok(RawRecord::new(&r[0], &r[1], &r[2])),
            Ok(r) => Err(format!("expected 3 fields, found {}", r.len())),
            Err(e) => Err(e.to_string()),
        });
    }
    Ok(out)
}

/// Reads external-mode CSV (`user_id,date,admin_code`). Rows that are not
/// structurally valid come back as `Err` so ingestion can count them.
pub fn read_daily_csv<R: Read>(reader: R) -> Result<Vec<Result<RawRecord, String>>, SignalError> {
    read_rows(reader, "date")
}

/// Reads internal-mode CSV (`user_id,timestamp,admin_code`).
pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<Result<RawRecord, String>>, SignalError> {
    read_rows(reader, "timestamp")
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Ingests vendor daily locations.
///
/// The first valid record per (user, date) wins; later ones are counted as
/// duplicates. Unknown codes are dropped during the baseline but kept as
/// out-of-coverage observations after onset, where they mean "seen somewhere
/// outside the hierarchy" rather than "not seen".
pub fn ingest_daily<I>(
    rows: I,
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
) -> Result<(SignalSet, IngestReport), SignalError>
where
    I: IntoIterator<Item = Result<RawRecord, String>>,
{
    let mut report = IngestReport::default();
    let mut seen: HashSet<(String, NaiveDate)> = HashSet::new();
    let mut by_user: BTreeMap<String, Vec<DailySignal>> = BTreeMap::new();

    for row in rows {
        let Ok(row) = row else {
            report.malformed += 1;
            continue;
        };
        let (user, code) = (row.user_id.trim(), row.admin_code.trim());
        let date = parse_date(row.when.trim());
        let (Some(date), false, false) = (date, user.is_empty(), code.is_empty()) else {
            report.malformed += 1;
            continue;
        };
        if !calendar.in_window(date) {
            report.out_of_window += 1;
            continue;
        }
        let known = hierarchy.contains(code);
        if !known && !calendar.is_observation_day(date) {
            report.unknown_code += 1;
            continue;
        }
        if !seen.insert((user.to_string(), date)) {
            report.duplicate += 1;
            continue;
        }
        if !known {
            report.out_of_coverage += 1;
        }
        report.accepted += 1;
        by_user.entry(user.to_string()).or_default().push(DailySignal::external(user, date, code));
    }
    report.check_abort()?;
    for days in by_user.values_mut() {
        days.sort_by_key(|s| s.date);
    }
    Ok((SignalSet::from_map(by_user), report))
}

/// Parses ISO-8601 timestamps (seconds precision) into the configured
/// local time. Timestamps without an offset are taken as already local.
#[derive(Debug, Clone, Copy, Default)]
pub struct TimestampParser {
    pub local_offset: Option<FixedOffset>,
}

impl TimestampParser {
    pub fn new(local_offset: Option<FixedOffset>) -> Self {
        TimestampParser { local_offset }
    }

    pub fn parse(&self, s: &str) -> Option<NaiveDateTime> {
        let s = s.trim();
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
            if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(t);
            }
        }
        let t = DateTime::parse_from_rfc3339(s).ok()?;
        Some(match self.local_offset {
            Some(off) => t.with_timezone(&off).naive_local(),
            None => t.naive_local(),
        })
    }
}

/// Ingests intra-day events. The window check uses the attributed date
/// (nighttime tails belong to the previous day).
pub fn ingest_events<I>(
    rows: I,
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
    params: &Params,
    parser: TimestampParser,
) -> Result<(Vec<LocationEvent>, IngestReport), SignalError>
where
    I: IntoIterator<Item = Result<RawRecord, String>>,
{
    let mut report = IngestReport::default();
    let mut events = Vec::new();
    for row in rows {
        let Ok(row) = row else {
            report.malformed += 1;
            continue;
        };
        let (user, code) = (row.user_id.trim(), row.admin_code.trim());
        let ts = parser.parse(&row.when);
        let (Some(ts), false, false) = (ts, user.is_empty(), code.is_empty()) else {
            report.malformed += 1;
            continue;
        };
        let date = match params.nighttime_window.classify(ts.time()) {
            TimeSlot::NightTail => ts.date().pred_opt().unwrap_or(ts.date()),
            _ => ts.date(),
        };
        if !calendar.in_window(date) {
            report.out_of_window += 1;
            continue;
        }
        let known = hierarchy.contains(code);
        if !known && !calendar.is_observation_day(date) {
            report.unknown_code += 1;
            continue;
        }
        if !known {
            report.out_of_coverage += 1;
        }
        report.accepted += 1;
        events.push(LocationEvent { user_id: user.to_string(), timestamp: ts, location: code.to_string() });
    }
    report.check_abort()?;
    Ok((events, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdminLevel, AdminUnit};

    fn cal() -> AnalysisCalendar {
        AnalysisCalendar::new(
            "2025-08-10".parse().unwrap(),
            "2025-09-21".parse().unwrap(),
            "2025-09-22".parse().unwrap(),
            "2025-10-06".parse().unwrap(),
        )
        .unwrap()
    }

    fn hier() -> Hierarchy {
        Hierarchy::new([
            AdminUnit::new("A", "A", AdminLevel::Adm3, None),
            AdminUnit::new("B", "B", AdminLevel::Adm3, None),
        ])
        .unwrap()
    }

    fn ok(u: &str, w: &str, c: &str) -> Result<RawRecord, String> {
        Ok(RawRecord::new(u, w, c))
    }

    #[test]
    fn first_wins_dedup() {
        let rows = vec![ok("u1", "2025-08-11", "A"), ok("u1", "2025-08-11", "A"), ok("u1", "2025-08-11", "B")];
        let (set, report) = ingest_daily(rows, &cal(), &hier()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.on("u1", "2025-08-11".parse().unwrap()).unwrap().residential.as_deref(), Some("A"));
        assert_eq!(report.duplicate, 2);
        assert_eq!(report.accepted, 1);
    }

    #[test]
    fn window_filter() {
        let (set, report) = ingest_daily(vec![ok("u1", "2025-01-01", "A")], &cal(), &hier()).unwrap();
        assert!(set.is_empty());
        assert_eq!(report.out_of_window, 1);
    }

    #[test]
    fn empty_stream() {
        let (set, report) = ingest_daily(Vec::new(), &cal(), &hier()).unwrap();
        assert!(set.is_empty());
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn unknown_codes_depend_on_period() {
        let rows = vec![ok("u1", "2025-08-11", "ZZ"), ok("u1", "2025-09-23", "ZZ")];
        let (set, report) = ingest_daily(rows, &cal(), &hier()).unwrap();
        assert_eq!(report.unknown_code, 1);
        assert_eq!(report.out_of_coverage, 1);
        assert_eq!(report.accepted, 1);
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn malformed_rows_counted_then_abort() {
        let rows = vec![ok("", "2025-08-11", "A"), ok("u1", "11/08/2025", "A"), ok("u2", "2025-08-11", "A")];
        let err = ingest_daily(rows, &cal(), &hier()).unwrap_err();
        assert!(matches!(err, SignalError::AbortThresholdExceeded { malformed: 2, total: 3 }));

        let rows = vec![Err("bad".to_string()), ok("u2", "2025-08-11", "A")];
        let (_, report) = ingest_daily(rows, &cal(), &hier()).unwrap();
        assert_eq!(report.malformed, 1);
        assert_eq!(report.total(), 2);
    }

    #[test]
    fn csv_header_required() {
        assert!(read_daily_csv("a,b,c\nu1,2025-08-11,A\n".as_bytes()).is_err());
        let rows = read_daily_csv("user_id,date,admin_code\nu1,2025-08-11,A\nu2,2025-08-11\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].is_ok());
        assert!(rows[1].is_err());
    }

    #[test]
    fn event_ingest_attributes_tail_and_converts_offsets() {
        let parser = TimestampParser::new(Some(FixedOffset::east_opt(8 * 3600).unwrap()));
        let rows = vec![
            ok("u1", "2025-08-10T02:00:00", "A"), // tail of 08-09: out of window
            ok("u1", "2025-08-10T14:00:00Z", "A"), // 22:00 local
            ok("u1", "2025-08-12 10:00:00", "B"),
            ok("u1", "noon", "B"),
        ];
        let (events, report) = ingest_events(rows, &cal(), &hier(), &Params::default(), parser).unwrap();
        assert_eq!(report.out_of_window, 1);
        assert_eq!(report.malformed, 1);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].timestamp.to_string(), "2025-08-10 22:00:00");
    }
}
