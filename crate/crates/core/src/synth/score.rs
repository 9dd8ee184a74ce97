// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Archetype, GroundTruth, Latent, SynthError};
use crate::detect::{Method, StatusMatrix, Verdict};
use crate::metrics::suppress;
use crate::model::DayType;
use crate::profile::{Cohort, ProfileKind};

/// Confusion counts for the Displaced class. Days the detector marks
/// Missing cannot be scored and are tallied separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub unscored: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    fn add(&mut self, truth: bool, predicted: Option<bool>) {
        match (truth, predicted) {
            (_, None) => self.unscored += 1,
            (true, Some(true)) => self.tp += 1,
            (false, Some(true)) => self.fp += 1,
            (false, Some(false)) => self.tn += 1,
            (true, Some(false)) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: Method,
    /// `all`, `inter_city` or an archetype name.
    pub subgroup: String,
    /// `all`, `weekday` or `weekend`.
    pub day_type: String,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
}

impl ScoreReport {
    pub fn get(&self, method: Method, subgroup: &str, day_type: &str) -> Option<&Confusion> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.subgroup == subgroup && r.day_type == day_type)
            .map(|r| &r.confusion)
    }

    /// Counts below `k` are blanked; ratios are kept.
    pub fn write_csv<W: Write>(&self, writer: W, k: u64) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method", "subgroup", "day_type", "tp", "fp", "tn", "fn", "unscored", "precision", "recall", "fpr",
        ])?;
        let c = |v: u64| suppress(v, k).map(|x| x.to_string()).unwrap_or_default();
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for r in &self.rows {
            let m = &r.confusion;
            w.write_record([
                r.method.to_string(),
                r.subgroup.clone(),
                r.day_type.clone(),
                c(m.tp),
                c(m.fp),
                c(m.tn),
                c(m.fn_),
                c(m.unscored),
                f(m.precision()),
                f(m.recall()),
                f(m.fpr()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores detector verdicts against planted truth, per method, overall and
/// per archetype, split by weekday and weekend.
pub fn score(statuses: &StatusMatrix, truth: &GroundTruth) -> Result<ScoreReport, SynthError> {
    let mut acc: BTreeMap<(Method, String, &'static str), Confusion> = BTreeMap::new();
    let mut grids: BTreeMap<Method, u64> = BTreeMap::new();
    for r in statuses.rows() {
        let cell = truth
            .cell(&r.user_id, r.date)
            .ok_or_else(|| SynthError::GridMismatch(format!("no truth for {} on {}", r.user_id, r.date)))?;
        let archetype = truth.users[truth.user_index(&r.user_id).expect("found above")].archetype;
        *grids.entry(r.method).or_insert(0) += 1;
        let planted = cell.latent == Latent::Displaced;
        let predicted = match r.verdict {
            Verdict::Missing => None,
            v => Some(v == Verdict::Displaced),
        };
        let day = match DayType::of(r.date) {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        };
        let mut groups = vec!["all".to_string(), archetype.as_str().to_string()];
        if archetype.is_inter_city() {
            groups.push("inter_city".to_string());
        }
        for g in groups {
            for d in ["all", day] {
                acc.entry((r.method, g.clone(), d)).or_default().add(planted, predicted);
            }
        }
    }
    let sizes: Vec<u64> = grids.values().copied().collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(SynthError::GridMismatch(format!("methods cover different grids: {grids:?}")));
    }
    Ok(ScoreReport {
        rows: acc
            .into_iter()
            .map(|((method, subgroup, day_type), confusion)| ScoreRow {
                method,
                subgroup,
                day_type: day_type.to_string(),
                confusion,
            })
            .collect(),
    })
}

/// Agreement between classified profiles and planted archetypes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecovery {
    pub matched: u64,
    pub total: u64,
    pub table: BTreeMap<Archetype, BTreeMap<ProfileKind, u64>>,
}

impl ProfileRecovery {
    pub fn rate(&self) -> Option<f64> {
        ratio(self.matched, self.total)
    }
}

fn expected_kind(a: Archetype) -> ProfileKind {
    match a {
        Archetype::LocalResident => ProfileKind::LocalResident,
        Archetype::IntraCityCommuter => ProfileKind::IntraCityCommuter,
        Archetype::InterCityDaily | Archetype::InterCityWeekly => ProfileKind::InterCityCommuter,
        Archetype::WeekendOnly => ProfileKind::WeekendOnly,
    }
}

pub fn profile_recovery(cohort: &Cohort, truth: &GroundTruth) -> ProfileRecovery {
    let mut out = ProfileRecovery::default();
    for m in cohort.members() {
        let Some(i) = truth.user_index(&m.profile.user_id) else { continue };
        let archetype = truth.users[i].archetype;
        out.total += 1;
        if m.profile.kind == expected_kind(archetype) {
            out.matched += 1;
        }
        *out.table.entry(archetype).or_default().entry(m.profile.kind).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_ratios() {
        let mut c = Confusion::default();
        for (t, p) in [(true, Some(true)), (true, Some(false)), (false, Some(true)), (false, Some(false)), (false, None)] {
            c.add(t, p);
        }
        assert_eq!(c.precision(), Some(0.5));
        assert_eq!(c.recall(), Some(0.5));
        assert_eq!(c.fpr(), Some(0.5));
        assert_eq!(c.unscored, 1);
        assert_eq!(Confusion::default().precision(), None);
    }
}
