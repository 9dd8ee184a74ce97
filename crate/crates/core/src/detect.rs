// SPDX-License-Identifier: Apache-2.0

//! Per-user-per-day displacement verdicts.
//!
//! The context-aware rule expects inter-city commuters in either their home
//! or work city on weekdays and in the home city otherwise; every other
//! profile is expected at home. The naive rule expects everyone at home.
//! A cohort member without a signal on a day is `Missing` under both.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnalysisCalendar, DayInfo, DayType, Hierarchy, OUT_OF_COVERAGE};
use crate::profile::{Cohort, CohortMember, MobilityProfile, ProfileKind};
use crate::signals::{DailySignal, SignalSet};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident),+ $(,)? }) => {
        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => stringify!($variant),)+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($variant) => Ok($name::$variant),)+
                    other => Err(format!(concat!("unknown ", stringify!($name), " '{}'"), other)),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    AtExpected,
    Displaced,
    Missing,
}
string_enum!(Verdict { AtExpected, Displaced, Missing });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    ContextAware,
    Naive,
}
string_enum!(Method { ContextAware, Naive });

impl Method {
    pub const BOTH: [Method; 2] = [Method::ContextAware, Method::Naive];
}

/// Which row of the rule matrix produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleFired {
    LocalResidentAny,
    IntraCityCommuterAny,
    InterCityCommuterWeekend,
    InterCityCommuterWeekday,
    WeekendOnlyAny,
    NaiveUniform,
    NoSignal,
}
string_enum!(RuleFired {
    LocalResidentAny,
    IntraCityCommuterAny,
    InterCityCommuterWeekend,
    InterCityCommuterWeekday,
    WeekendOnlyAny,
    NaiveUniform,
    NoSignal,
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayStatus {
    pub user_id: String,
    pub date: NaiveDate,
    pub home_city: String,
    pub observed_city: Option<String>,
    pub verdict: Verdict,
    pub rule_fired: RuleFired,
    pub method: Method,
    pub holiday: bool,
}

impl DayStatus {
    pub fn out_of_coverage(&self) -> bool {
        self.observed_city.as_deref() == Some(OUT_OF_COVERAGE)
    }
}

/// Expected ADM3 cities for a profile on a given day. Holidays do not
/// change the set.
pub fn expected_cities<'a>(profile: &'a MobilityProfile, home_city: &'a str, day: DayInfo) -> BTreeSet<&'a str> {
    let mut out = BTreeSet::from([home_city]);
    if profile.kind == ProfileKind::InterCityCommuter && day.day_type == DayType::Weekday {
        if let Some(work) = profile.work_city.as_deref() {
            out.insert(work);
        }
    }
    out
}

fn context_rule(kind: ProfileKind, day_type: DayType) -> RuleFired {
    match (kind, day_type) {
        (ProfileKind::LocalResident, _) => RuleFired::LocalResidentAny,
        (ProfileKind::IntraCityCommuter, _) => RuleFired::IntraCityCommuterAny,
        (ProfileKind::InterCityCommuter, DayType::Weekend) => RuleFired::InterCityCommuterWeekend,
        (ProfileKind::InterCityCommuter, DayType::Weekday) => RuleFired::InterCityCommuterWeekday,
        (ProfileKind::WeekendOnly, _) => RuleFired::WeekendOnlyAny,
    }
}

/// Verdict for one cohort member on one day.
pub fn detect_day(
    signal: Option<&DailySignal>,
    member: &CohortMember,
    date: NaiveDate,
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
    method: Method,
) -> DayStatus {
    let day = calendar.day_info(date);
    let home_city = member.baseline.home_city.as_str();
    let observed_city = signal.and_then(DailySignal::observed).map(|code| {
        hierarchy.city_of(code).map(str::to_string).unwrap_or_else(|_| OUT_OF_COVERAGE.to_string())
    });

    let (verdict, rule_fired) = match (&observed_city, method) {
        (None, _) => (Verdict::Missing, RuleFired::NoSignal),
        (Some(city), Method::Naive) => {
            let v = if city == home_city { Verdict::AtExpected } else { Verdict::Displaced };
            (v, RuleFired::NaiveUniform)
        }
        (Some(city), Method::ContextAware) => {
            let expected = expected_cities(&member.profile, home_city, day);
            let v = if expected.contains(city.as_str()) { Verdict::AtExpected } else { Verdict::Displaced };
            (v, context_rule(member.profile.kind, day.day_type))
        }
    };

    DayStatus {
        user_id: member.baseline.user_id.clone(),
        date,
        home_city: home_city.to_string(),
        observed_city,
        verdict,
        rule_fired,
        method,
        holiday: day.holiday,
    }
}

/// Complete status grid, ordered by (user, date, method).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatusMatrix {
    rows: Vec<DayStatus>,
}

impl StatusMatrix {
    pub fn from_rows(mut rows: Vec<DayStatus>) -> Self {
        rows.sort_by(|a, b| (&a.user_id, a.date, a.method).cmp(&(&b.user_id, b.date, b.method)));
        StatusMatrix { rows }
    }

    pub fn rows(&self) -> &[DayStatus] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn by_method(&self, method: Method) -> impl Iterator<Item = &DayStatus> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn dates(&self) -> BTreeSet<NaiveDate> {
        self.rows.iter().map(|r| r.date).collect()
    }

    /// Audit CSV: `user_id,date,method,verdict,observed_city,rule_fired`
    /// followed by `home_city,holiday`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["user_id", "date", "method", "verdict", "observed_city", "rule_fired", "home_city", "holiday"])?;
        for r in &self.rows {
            w.write_record([
                r.user_id.as_str(),
                &r.date.to_string(),
                r.method.as_str(),
                r.verdict.as_str(),
                r.observed_city.as_deref().unwrap_or(""),
                r.rule_fired.as_str(),
                &r.home_city,
                if r.holiday { "true" } else { "false" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DetectError> {
        #[derive(Deserialize)]
        struct Row {
            user_id: String,
            date: NaiveDate,
            method: String,
            verdict: String,
            observed_city: Option<String>,
            rule_fired: String,
            home_city: String,
            holiday: bool,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i as u64 + 2;
            let row = row?;
            let parse_err = |message| DetectError::Parse { line, message };
            rows.push(DayStatus {
                user_id: row.user_id,
                date: row.date,
                home_city: row.home_city,
                observed_city: row.observed_city.filter(|s| !s.is_empty()),
                verdict: row.verdict.parse().map_err(parse_err)?,
                rule_fired: row.rule_fired.parse().map_err(parse_err)?,
                method: row.method.parse().map_err(parse_err)?,
                holiday: row.holiday,
            });
        }
        Ok(StatusMatrix::from_rows(rows))
    }
}

/// Runs both methods for every cohort member on every given day.
pub fn detect_period(
    cohort: &Cohort,
    signals: &SignalSet,
    days: &[NaiveDate],
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
) -> StatusMatrix {
    let members: Vec<&CohortMember> = cohort.members().collect();
    let rows: Vec<DayStatus> = members
        .par_iter()
        .flat_map_iter(|member| {
            let user = member.baseline.user_id.as_str();
            days.iter().flat_map(move |&date| {
                let signal = signals.on(user, date);
                Method::BOTH.into_iter().map(move |m| detect_day(signal, member, date, calendar, hierarchy, m))
            })
        })
        .collect();
    // members are iterated in user order and days/methods in order, so rows are already sorted
    StatusMatrix { rows }
}

/// Convenience wrapper over the post-disaster window.
pub fn detect_observation_window(
    cohort: &Cohort,
    signals: &SignalSet,
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
) -> StatusMatrix {
    let days: Vec<NaiveDate> = calendar.observation_days().collect();
    detect_period(cohort, signals, &days, calendar, hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdminLevel, AdminUnit};
    use crate::profile::{BaselineSource, ResidentialBaseline};

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn cal() -> AnalysisCalendar {
        AnalysisCalendar::new(d("2025-08-10"), d("2025-09-21"), d("2025-09-22"), d("2025-10-06")).unwrap()
    }

    fn hier() -> Hierarchy {
        Hierarchy::new([
            AdminUnit::new("C1", "C1", AdminLevel::Adm3, None),
            AdminUnit::new("C2", "C2", AdminLevel::Adm3, None),
            AdminUnit::new("C3", "C3", AdminLevel::Adm3, None),
            AdminUnit::new("B1", "B1", AdminLevel::Adm4, Some("C1")),
            AdminUnit::new("B9", "B9", AdminLevel::Adm4, Some("C2")),
        ])
        .unwrap()
    }

    fn member(user: &str, kind: ProfileKind, work: Option<&str>) -> CohortMember {
        CohortMember {
            baseline: ResidentialBaseline {
                user_id: user.into(),
                home: "B1".into(),
                home_city: "C1".into(),
                source: BaselineSource::Weekend,
                weekend_days_observed: 4,
                weekday_days_observed: 10,
            },
            profile: MobilityProfile {
                user_id: user.into(),
                kind,
                work_city: work.map(str::to_string),
                weekday_modal: work.map(|_| "B9".to_string()),
            },
        }
    }

    const TUESDAY: &str = "2025-09-23";
    const SATURDAY: &str = "2025-09-27";

    #[test]
    fn expected_sets() {
        let commuter = member("u", ProfileKind::InterCityCommuter, Some("C2"));
        let c = cal();
        let tue = expected_cities(&commuter.profile, "C1", c.day_info(d(TUESDAY)));
        assert_eq!(tue, BTreeSet::from(["C1", "C2"]));
        let sat = expected_cities(&commuter.profile, "C1", c.day_info(d(SATURDAY)));
        assert_eq!(sat, BTreeSet::from(["C1"]));
        let local = member("v", ProfileKind::LocalResident, None);
        assert_eq!(expected_cities(&local.profile, "C1", c.day_info(d(TUESDAY))), BTreeSet::from(["C1"]));
    }

    #[test]
    fn commuter_at_work() {
        let m = member("u", ProfileKind::InterCityCommuter, Some("C2"));
        let c = cal();
        let h = hier();
        let tue = DailySignal::external("u", d(TUESDAY), "B9");
        let ca = detect_day(Some(&tue), &m, d(TUESDAY), &c, &h, Method::ContextAware);
        let naive = detect_day(Some(&tue), &m, d(TUESDAY), &c, &h, Method::Naive);
        assert_eq!(ca.verdict, Verdict::AtExpected);
        assert_eq!(ca.rule_fired, RuleFired::InterCityCommuterWeekday);
        assert_eq!(naive.verdict, Verdict::Displaced);

        let sat = DailySignal::external("u", d(SATURDAY), "B9");
        for method in Method::BOTH {
            assert_eq!(detect_day(Some(&sat), &m, d(SATURDAY), &c, &h, method).verdict, Verdict::Displaced);
        }
    }

    #[test]
    fn missing_under_both() {
        let m = member("u", ProfileKind::LocalResident, None);
        for method in Method::BOTH {
            let s = detect_day(None, &m, d(TUESDAY), &cal(), &hier(), method);
            assert_eq!(s.verdict, Verdict::Missing);
            assert_eq!(s.observed_city, None);
        }
    }

    #[test]
    fn residential_preferred_over_activity() {
        let m = member("u", ProfileKind::LocalResident, None);
        let s = DailySignal {
            user_id: "u".into(),
            date: d(TUESDAY),
            residential: Some("B1".into()),
            activity: Some("C3".into()),
            quality: crate::signals::Quality::High,
        };
        let st = detect_day(Some(&s), &m, d(TUESDAY), &cal(), &hier(), Method::Naive);
        assert_eq!(st.verdict, Verdict::AtExpected);
    }

    #[test]
    fn out_of_coverage_is_displaced() {
        let m = member("u", ProfileKind::LocalResident, None);
        let s = DailySignal::external("u", d(TUESDAY), "OVERSEAS");
        let st = detect_day(Some(&s), &m, d(TUESDAY), &cal(), &hier(), Method::ContextAware);
        assert_eq!(st.verdict, Verdict::Displaced);
        assert!(st.out_of_coverage());
    }

    #[test]
    fn holiday_weekday_keeps_commuter_exception() {
        let c = cal().with_holidays([d(TUESDAY)]);
        let m = member("u", ProfileKind::InterCityCommuter, Some("C2"));
        let s = DailySignal::external("u", d(TUESDAY), "B9");
        let st = detect_day(Some(&s), &m, d(TUESDAY), &c, &hier(), Method::ContextAware);
        assert_eq!(st.verdict, Verdict::AtExpected);
        assert!(st.holiday);
    }

    #[test]
    fn period_matrix_shape_and_csv() {
        let cohort = Cohort::from_members([
            member("a", ProfileKind::LocalResident, None),
            member("b", ProfileKind::InterCityCommuter, Some("C2")),
        ]);
        let signals = SignalSet::from_signals([
            DailySignal::external("a", d(TUESDAY), "B1"),
            DailySignal::external("b", d(TUESDAY), "B9"),
        ]);
        let days = [d(TUESDAY), d("2025-09-24")];
        let m = detect_period(&cohort, &signals, &days, &cal(), &hier());
        assert_eq!(m.len(), 2 * 2 * 2);
        assert_eq!(m, StatusMatrix::from_rows(m.rows().to_vec()));

        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(StatusMatrix::read_csv(buf.as_slice()).unwrap(), m);

        let empty = detect_period(&cohort, &signals, &[], &cal(), &hier());
        assert!(empty.is_empty());
    }

    #[test]
    fn single_user_day_at_home() {
        let cohort = Cohort::from_members([member("a", ProfileKind::LocalResident, None)]);
        let signals = SignalSet::from_signals([DailySignal::external("a", d(TUESDAY), "B1")]);
        let m = detect_period(&cohort, &signals, &[d(TUESDAY)], &cal(), &hier());
        assert_eq!(m.len(), 2);
        assert!(m.rows().iter().all(|r| r.verdict == Verdict::AtExpected));
    }
}
