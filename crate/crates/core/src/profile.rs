// SPDX-License-Identifier: Apache-2.0

//! Residential baselines and mobility profiles.
//!
//! The home is the mode of weekend residential signals when at least
//! `weekend_min_days` weekend days were observed, else the mode of weekday
//! residential signals with at least `weekday_min_days`, else the user is
//! excluded. The profile compares that home with the modal weekday
//! activity location.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AdminLevel, AnalysisCalendar, DayType, Hierarchy, ModelError, Params};
use crate::signals::{mode_with_seeded_tiebreak, DailySignal, SignalSet};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("user '{0}' has no valid residential baseline")]
    MissingBaseline(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaselineSource {
    Weekend,
    WeekdayFallback,
}

impl fmt::Display for BaselineSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineSource::Weekend => "Weekend",
            BaselineSource::WeekdayFallback => "WeekdayFallback",
        })
    }
}

impl FromStr for BaselineSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Weekend" => Ok(BaselineSource::Weekend),
            "WeekdayFallback" => Ok(BaselineSource::WeekdayFallback),
            other => Err(format!("unknown baseline source '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidentialBaseline {
    pub user_id: String,
    /// Finest available unit.
    pub home: String,
    pub home_city: String,
    pub source: BaselineSource,
    pub weekend_days_observed: u32,
    pub weekday_days_observed: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineOutcome {
    Established(ResidentialBaseline),
    Excluded { user_id: String, weekend_days_observed: u32, weekday_days_observed: u32 },
}

impl BaselineOutcome {
    pub fn user_id(&self) -> &str {
        match self {
            BaselineOutcome::Established(b) => &b.user_id,
            BaselineOutcome::Excluded { user_id, .. } => user_id,
        }
    }

    pub fn established(&self) -> Option<&ResidentialBaseline> {
        match self {
            BaselineOutcome::Established(b) => Some(b),
            BaselineOutcome::Excluded { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileKind {
    LocalResident,
    IntraCityCommuter,
    InterCityCommuter,
    WeekendOnly,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] = [
        ProfileKind::LocalResident,
        ProfileKind::IntraCityCommuter,
        ProfileKind::InterCityCommuter,
        ProfileKind::WeekendOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::LocalResident => "LocalResident",
            ProfileKind::IntraCityCommuter => "IntraCityCommuter",
            ProfileKind::InterCityCommuter => "InterCityCommuter",
            ProfileKind::WeekendOnly => "WeekendOnly",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProfileKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown profile kind '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobilityProfile {
    pub user_id: String,
    pub kind: ProfileKind,
    /// Present iff `kind` is `InterCityCommuter`.
    pub work_city: Option<String>,
    pub weekday_modal: Option<String>,
}

fn baseline_signals<'a>(
    signals: &'a [DailySignal],
    calendar: &'a AnalysisCalendar,
) -> impl Iterator<Item = (DayType, &'a DailySignal)> + 'a {
    signals
        .iter()
        .filter(|s| calendar.is_baseline_day(s.date))
        .map(|s| (DayType::of(s.date), s))
}

/// Applies the weekend-first residential rule to one user's signals.
pub fn establish_baseline(
    user_id: &str,
    signals: &[DailySignal],
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
    params: &Params,
) -> Result<BaselineOutcome, ProfileError> {
    let mut weekend = Vec::new();
    let mut weekday = Vec::new();
    for (day_type, s) in baseline_signals(signals, calendar) {
        if let Some(r) = s.residential.as_deref() {
            match day_type {
                DayType::Weekend => weekend.push(r),
                DayType::Weekday => weekday.push(r),
            }
        }
    }
    let weekend_days_observed = weekend.len() as u32;
    let weekday_days_observed = weekday.len() as u32;

    let (values, source, purpose) = if weekend_days_observed >= params.weekend_min_days {
        (&weekend, BaselineSource::Weekend, "baseline:weekend")
    } else if weekday_days_observed >= params.weekday_min_days {
        (&weekday, BaselineSource::WeekdayFallback, "baseline:weekday")
    } else {
        return Ok(BaselineOutcome::Excluded {
            user_id: user_id.to_string(),
            weekend_days_observed,
            weekday_days_observed,
        });
    };

    let home = mode_with_seeded_tiebreak(values.iter(), params.rng_seed, user_id, purpose)
        .expect("threshold is at least one day");
    let home_city = hierarchy.city_of(&home)?.to_string();
    Ok(BaselineOutcome::Established(ResidentialBaseline {
        user_id: user_id.to_string(),
        home,
        home_city,
        source,
        weekend_days_observed,
        weekday_days_observed,
    }))
}

/// Classifies the mobility profile from weekday activity signals.
pub fn classify_profile(
    outcome: &BaselineOutcome,
    signals: &[DailySignal],
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
    params: &Params,
) -> Result<MobilityProfile, ProfileError> {
    let baseline = outcome
        .established()
        .ok_or_else(|| ProfileError::MissingBaseline(outcome.user_id().to_string()))?;
    let user_id = baseline.user_id.as_str();
    let activity: Vec<&str> = baseline_signals(signals, calendar)
        .filter(|(t, _)| *t == DayType::Weekday)
        .filter_map(|(_, s)| s.activity.as_deref())
        .collect();

    if activity.is_empty() {
        return Ok(MobilityProfile {
            user_id: user_id.to_string(),
            kind: ProfileKind::WeekendOnly,
            work_city: None,
            weekday_modal: None,
        });
    }
    let modal = mode_with_seeded_tiebreak(&activity, params.rng_seed, user_id, "profile:weekday_activity")
        .expect("non-empty");
    let modal_city = hierarchy.city_of(&modal)?;
    let (kind, work_city) = if modal == baseline.home {
        (ProfileKind::LocalResident, None)
    } else if modal_city == baseline.home_city {
        (ProfileKind::IntraCityCommuter, None)
    } else {
        (ProfileKind::InterCityCommuter, Some(modal_city.to_string()))
    };
    Ok(MobilityProfile { user_id: user_id.to_string(), kind, work_city, weekday_modal: Some(modal) })
}

/// A user with a valid baseline and their profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMember {
    pub baseline: ResidentialBaseline,
    pub profile: MobilityProfile,
}

/// Baseline outcome for every user seen in the signals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    members: BTreeMap<String, CohortMember>,
    excluded: BTreeMap<String, (u32, u32)>,
    warnings: Vec<String>,
}

impl Cohort {
    pub fn from_members(members: impl IntoIterator<Item = CohortMember>) -> Self {
        Cohort {
            members: members.into_iter().map(|m| (m.baseline.user_id.clone(), m)).collect(),
            excluded: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn members(&self) -> impl Iterator<Item = &CohortMember> {
        self.members.values()
    }

    pub fn get(&self, user: &str) -> Option<&CohortMember> {
        self.members.get(user)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.len()
    }

    pub fn is_excluded(&self, user: &str) -> bool {
        self.excluded.contains_key(user)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// N_c: cohort members per home city.
    pub fn city_sizes(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for m in self.members.values() {
            *out.entry(m.baseline.home_city.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn profile_counts(&self) -> BTreeMap<ProfileKind, u64> {
        let mut out: BTreeMap<ProfileKind, u64> = ProfileKind::ALL.iter().map(|k| (*k, 0)).collect();
        for m in self.members.values() {
            *out.get_mut(&m.profile.kind).unwrap() += 1;
        }
        out
    }

    /// Snapshot as `user_id,home,home_city,source,kind,work_city` followed by
    /// `weekday_modal,weekend_days,weekday_days`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "user_id",
            "home",
            "home_city",
            "source",
            "kind",
            "work_city",
            "weekday_modal",
            "weekend_days",
            "weekday_days",
        ])?;
        for m in self.members.values() {
            let b = &m.baseline;
            w.write_record([
                b.user_id.as_str(),
                &b.home,
                &b.home_city,
                &b.source.to_string(),
                m.profile.kind.as_str(),
                m.profile.work_city.as_deref().unwrap_or(""),
                m.profile.weekday_modal.as_deref().unwrap_or(""),
                &b.weekend_days_observed.to_string(),
                &b.weekday_days_observed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ProfileError> {
        #[derive(Deserialize)]
        struct Row {
            user_id: String,
            home: String,
            home_city: String,
            source: String,
            kind: String,
            work_city: Option<String>,
            #[serde(default)]
            weekday_modal: Option<String>,
            #[serde(default)]
            weekend_days: u32,
            #[serde(default)]
            weekday_days: u32,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut members = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i as u64 + 2;
            let row = row?;
            let source = row.source.parse().map_err(|message| ProfileError::Parse { line, message })?;
            let kind: ProfileKind = row.kind.parse().map_err(|message| ProfileError::Parse { line, message })?;
            let work_city = row.work_city.filter(|s| !s.is_empty());
            if (kind == ProfileKind::InterCityCommuter) != work_city.is_some() {
                return Err(ProfileError::Parse { line, message: "work_city must be set exactly for inter-city commuters".into() });
            }
            members.push(CohortMember {
                baseline: ResidentialBaseline {
                    user_id: row.user_id.clone(),
                    home: row.home,
                    home_city: row.home_city,
                    source,
                    weekend_days_observed: row.weekend_days,
                    weekday_days_observed: row.weekday_days,
                },
                profile: MobilityProfile {
                    user_id: row.user_id,
                    kind,
                    work_city,
                    weekday_modal: row.weekday_modal.filter(|s| !s.is_empty()),
                },
            });
        }
        Ok(Cohort::from_members(members))
    }
}

/// Establishes baselines and profiles for every user, in parallel.
/// A member, or the observed (weekend, weekday) day counts of an excluded user.
type UserOutcome = Result<Result<CohortMember, (u32, u32)>, ProfileError>;

pub fn build_cohort(
    signals: &SignalSet,
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
    params: &Params,
) -> Result<Cohort, ProfileError> {
    let results: Vec<(String, UserOutcome)> = signals
        .per_user_map()
        .par_iter()
        .map(|(user, days)| {
            let res = establish_baseline(user, days, calendar, hierarchy, params).and_then(|outcome| match &outcome {
                BaselineOutcome::Excluded { weekend_days_observed, weekday_days_observed, .. } => {
                    Ok(Err((*weekend_days_observed, *weekday_days_observed)))
                }
                BaselineOutcome::Established(b) => {
                    let profile = classify_profile(&outcome, days, calendar, hierarchy, params)?;
                    Ok(Ok(CohortMember { baseline: b.clone(), profile }))
                }
            });
            (user.clone(), res)
        })
        .collect();

    let mut cohort = Cohort::default();
    for (user, res) in results {
        match res? {
            Ok(member) => {
                cohort.members.insert(user, member);
            }
            Err(counts) => {
                cohort.excluded.insert(user, counts);
            }
        }
    }
    let city_level_homes = cohort
        .members
        .values()
        .all(|m| hierarchy.get(&m.baseline.home).map(|u| u.level) == Some(AdminLevel::Adm3));
    if !cohort.members.is_empty() && city_level_homes {
        cohort.warnings.push(
            "inputs are city-level only: intra-city commuters cannot be separated and are reported as local residents"
                .to_string(),
        );
    }
    Ok(cohort)
}

/// Staged attrition for one focal city.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttritionReport {
    pub city: String,
    /// Users observed in the city on any non-holiday baseline day.
    pub starting: u64,
    pub valid_baseline: u64,
    pub observed_post: u64,
}

impl AttritionReport {
    fn pct(&self, n: u64) -> Option<f64> {
        (self.starting > 0).then(|| 100.0 * n as f64 / self.starting as f64)
    }

    pub fn starting_pct(&self) -> Option<f64> {
        self.pct(self.starting)
    }

    pub fn valid_baseline_pct(&self) -> Option<f64> {
        self.pct(self.valid_baseline)
    }

    pub fn observed_post_pct(&self) -> Option<f64> {
        self.pct(self.observed_post)
    }
}

/// Renders a percentage with one decimal, or `n/a` for an empty denominator.
pub fn fmt_pct(p: Option<f64>) -> String {
    p.map(|v| format!("{v:.1}")).unwrap_or_else(|| "n/a".to_string())
}

pub fn attrition_report(
    city: &str,
    signals: &SignalSet,
    cohort: &Cohort,
    calendar: &AnalysisCalendar,
    hierarchy: &Hierarchy,
) -> AttritionReport {
    let in_city = |code: Option<&str>| code.and_then(|c| hierarchy.city_of(c).ok()) == Some(city);
    let mut report = AttritionReport { city: city.to_string(), starting: 0, valid_baseline: 0, observed_post: 0 };
    for (user, days) in signals.per_user() {
        let seen = days
            .iter()
            .filter(|s| calendar.is_baseline_day(s.date))
            .any(|s| in_city(s.residential.as_deref()) || in_city(s.activity.as_deref()));
        if !seen {
            continue;
        }
        report.starting += 1;
        if cohort.get(user).is_some() {
            report.valid_baseline += 1;
            if days.iter().any(|s| calendar.is_observation_day(s.date)) {
                report.observed_post += 1;
            }
        }
    }
    report
}
