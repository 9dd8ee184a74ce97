// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic populations with planted ground truth.
//!
//! A scenario plants users of five archetypes across a set of cities,
//! displaces a fraction of them at onset, lets them return with a daily
//! hazard and hides some user-days as missing. The latent truth is rendered
//! both as vendor-style daily records and as intra-day events, so the same
//! population can be pushed through either ingestion mode and scored.

mod generate;
mod score;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AnalysisCalendar;

pub use generate::{generate, DayCell, GroundTruth, Latent, SynthFiles, SyntheticData, TruthLabel, UserTruth};
pub use score::{profile_recovery, score, Confusion, ProfileRecovery, ScoreReport, ScoreRow};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    SpecInvalid(String),
    #[error("status grid does not match truth: {0}")]
    GridMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Planted behaviour pattern. Inter-city commuting comes in two schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    /// Home unit all day, every day.
    LocalResident,
    /// Weekdays at a work unit in the home city, nights at home.
    IntraCityCommuter,
    /// Weekdays at a work unit in another city, nights at home.
    InterCityDaily,
    /// Monday to Friday at the work city day and night, weekends at home.
    InterCityWeekly,
    /// Only observed on weekends.
    WeekendOnly,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::LocalResident,
        Archetype::IntraCityCommuter,
        Archetype::InterCityDaily,
        Archetype::InterCityWeekly,
        Archetype::WeekendOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::LocalResident => "LocalResident",
            Archetype::IntraCityCommuter => "IntraCityCommuter",
            Archetype::InterCityDaily => "InterCityDaily",
            Archetype::InterCityWeekly => "InterCityWeekly",
            Archetype::WeekendOnly => "WeekendOnly",
        }
    }

    pub fn is_inter_city(self) -> bool {
        matches!(self, Archetype::InterCityDaily | Archetype::InterCityWeekly)
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown archetype '{s}'"))
    }
}

/// How the emulated vendor collapses a user-day into one daily value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum VendorEmulation {
    /// Daytime location wins (transactions concentrate in working hours).
    #[default]
    DaytimeModal,
    /// Nighttime location wins.
    NighttimeWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitySpec {
    pub code: String,
    #[serde(default)]
    pub name: Option<String>,
    pub population: u64,
    pub barangays: u32,
    /// Share of synthetic users living here. Defaults to population share.
    #[serde(default)]
    pub user_share: Option<f64>,
}

fn default_events() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_users: usize,
    pub cities: Vec<CitySpec>,
    pub archetype_mix: BTreeMap<Archetype, f64>,
    pub calendar: AnalysisCalendar,
    /// Probability of being displaced at onset, per home city.
    #[serde(default)]
    pub displacement_fraction: BTreeMap<String, f64>,
    /// Destination city weights; the home city is dropped and the rest renormalized.
    #[serde(default)]
    pub destination_distribution: BTreeMap<String, f64>,
    #[serde(default)]
    pub missing_daily_prob: f64,
    /// Replaces `missing_daily_prob` from onset on, e.g. for network outages.
    #[serde(default)]
    pub post_onset_missing_prob: Option<f64>,
    #[serde(default)]
    pub return_hazard: f64,
    /// Per-day probability a user's signal lands in a unit of another city.
    #[serde(default)]
    pub observation_noise: f64,
    /// Standard deviation of a day-level multiplier on the noise probability.
    #[serde(default)]
    pub noise_jitter: f64,
    /// Standard deviation of a day-level multiplier on the observation probability.
    #[serde(default)]
    pub activity_jitter: f64,
    #[serde(default)]
    pub vendor_emulation: VendorEmulation,
    #[serde(default = "default_events")]
    pub night_events: u32,
    #[serde(default = "default_events")]
    pub day_events: u32,
}

fn check_prob(name: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::SpecInvalid(format!("{name} = {p} is not a probability")))
    }
}

fn check_sum(name: &str, values: impl Iterator<Item = f64>) -> Result<(), SynthError> {
    let mut total = 0.0;
    for v in values {
        if v.is_nan() || v < 0.0 {
            return Err(SynthError::SpecInvalid(format!("{name} has a negative weight")));
        }
        total += v;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(SynthError::SpecInvalid(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::SpecInvalid(m));
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if self.cities.is_empty() {
            return bad("no cities".into());
        }
        let mut codes = BTreeSet::new();
        for c in &self.cities {
            if c.code.is_empty() || c.code.contains(',') {
                return bad(format!("bad city code '{}'", c.code));
            }
            if !codes.insert(c.code.as_str()) {
                return bad(format!("duplicate city '{}'", c.code));
            }
            if c.barangays < 2 {
                return bad(format!("city '{}' needs at least two barangays", c.code));
            }
            if c.population == 0 {
                return bad(format!("city '{}' has zero population", c.code));
            }
        }
        let shares: Vec<Option<f64>> = self.cities.iter().map(|c| c.user_share).collect();
        if shares.iter().any(Option::is_some) {
            if shares.iter().any(Option::is_none) {
                return bad("user_share must be given for all cities or none".into());
            }
            check_sum("user_share", shares.iter().flatten().copied())?;
        }

        check_sum("archetype_mix", self.archetype_mix.values().copied())?;
        let inter = self.archetype_mix.iter().any(|(a, w)| a.is_inter_city() && *w > 0.0);
        if inter && self.cities.len() < 2 {
            return bad("inter-city commuters need at least two cities".into());
        }

        self.calendar.validate().map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
        check_prob("missing_daily_prob", self.missing_daily_prob)?;
        if let Some(p) = self.post_onset_missing_prob {
            check_prob("post_onset_missing_prob", p)?;
        }
        check_prob("return_hazard", self.return_hazard)?;
        check_prob("observation_noise", self.observation_noise)?;
        if !(self.noise_jitter >= 0.0 && self.activity_jitter >= 0.0) {
            return bad("jitter must be non-negative".into());
        }
        if self.night_events == 0 || self.day_events == 0 {
            return bad("night_events and day_events must be positive".into());
        }

        for (city, f) in &self.displacement_fraction {
            if !codes.contains(city.as_str()) {
                return bad(format!("displacement_fraction names unknown city '{city}'"));
            }
            check_prob("displacement_fraction", *f)?;
        }
        for city in self.destination_distribution.keys() {
            if !codes.contains(city.as_str()) {
                return bad(format!("destination_distribution names unknown city '{city}'"));
            }
        }
        if !self.destination_distribution.is_empty() {
            check_sum("destination_distribution", self.destination_distribution.values().copied())?;
        }
        for (city, f) in &self.displacement_fraction {
            let elsewhere = self.destination_distribution.iter().any(|(d, w)| d != city && *w > 0.0);
            if *f > 0.0 && !elsewhere {
                return bad(format!("no destination outside '{city}' for its displaced users"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_json() -> &'static str {
        r#"{
            "seed": 7,
            "n_users": 200,
            "cities": [
                {"code": "APA", "population": 68839, "barangays": 6, "user_share": 0.7},
                {"code": "TUG", "population": 166334, "barangays": 4, "user_share": 0.3}
            ],
            "archetype_mix": {"LocalResident": 0.7, "InterCityDaily": 0.3},
            "calendar": {
                "baseline_start": "2025-08-04", "baseline_end": "2025-09-14",
                "disaster_onset": "2025-09-22", "observation_end": "2025-09-26"
            },
            "displacement_fraction": {"APA": 0.1},
            "destination_distribution": {"TUG": 1.0}
        }"#
    }

    #[test]
    fn parses_and_validates() {
        let spec = ScenarioSpec::from_json(sample_json()).unwrap();
        assert_eq!(spec.vendor_emulation, VendorEmulation::DaytimeModal);
        assert_eq!(spec.night_events, 2);
    }

    #[test]
    fn rejects_bad_mix() {
        let mut spec = ScenarioSpec::from_json(sample_json()).unwrap();
        spec.archetype_mix.insert(Archetype::WeekendOnly, 0.1);
        assert!(matches!(spec.validate(), Err(SynthError::SpecInvalid(_))));
    }

    #[test]
    fn rejects_unknown_field_and_bad_probability() {
        let text = sample_json().replace("\"seed\": 7", "\"seed\": 7, \"bogus\": 1");
        assert!(ScenarioSpec::from_json(&text).is_err());
        let mut spec = ScenarioSpec::from_json(sample_json()).unwrap();
        spec.return_hazard = 1.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn displaced_users_need_somewhere_to_go() {
        let mut spec = ScenarioSpec::from_json(sample_json()).unwrap();
        spec.destination_distribution = BTreeMap::from([("APA".to_string(), 1.0)]);
        assert!(spec.validate().is_err());
    }
}
