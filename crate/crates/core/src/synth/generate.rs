// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate, NaiveTime};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Archetype, ScenarioSpec, SynthError, VendorEmulation};
use crate::model::{days_between, AdminLevel, AdminUnit, DayType, Hierarchy};
use crate::signals::{seeded_rng, RawRecord};

const REGION: &str = "R00";
const PROVINCE: &str = "P00";
const NO_NOISE: u32 = u32::MAX;

/// Where a user truly is on a day, before observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Latent {
    Home,
    AtWork,
    Displaced,
}

/// Per user-day label as seen through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthLabel {
    Home,
    AtWork,
    DisplacedTo,
    Missing,
}

impl TruthLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthLabel::Home => "Home",
            TruthLabel::AtWork => "AtWork",
            TruthLabel::DisplacedTo => "DisplacedTo",
            TruthLabel::Missing => "Missing",
        }
    }
}

/// One user-day. Units index into [`GroundTruth::units`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayCell {
    pub latent: Latent,
    pub night: u32,
    pub day: u32,
    noise: u32,
    pub observed: bool,
}

impl DayCell {
    pub fn label(&self) -> TruthLabel {
        match (self.observed, self.latent) {
            (false, _) => TruthLabel::Missing,
            (true, Latent::Home) => TruthLabel::Home,
            (true, Latent::AtWork) => TruthLabel::AtWork,
            (true, Latent::Displaced) => TruthLabel::DisplacedTo,
        }
    }

    pub fn noise(&self) -> Option<u32> {
        (self.noise != NO_NOISE).then_some(self.noise)
    }

    /// Unit reported by the emulated vendor for this day.
    pub fn vendor_unit(&self, emulation: VendorEmulation) -> u32 {
        self.noise().unwrap_or(match emulation {
            VendorEmulation::DaytimeModal => self.day,
            VendorEmulation::NighttimeWeighted => self.night,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub archetype: Archetype,
    pub home: String,
    pub home_city: String,
    pub work: Option<String>,
    pub work_city: Option<String>,
    /// Destination city if displaced at onset.
    pub destination_city: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub users: Vec<UserTruth>,
    pub days: Vec<NaiveDate>,
    /// `cells[user][day]`, aligned with `users` and `days`.
    pub cells: Vec<Vec<DayCell>>,
    pub units: Vec<String>,
    pub unit_city: Vec<String>,
}

impl GroundTruth {
    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.user_id.as_str().cmp(user_id)).ok()
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.days.first()?;
        let i = (date - first).num_days();
        (i >= 0 && (i as usize) < self.days.len()).then_some(i as usize)
    }

    pub fn cell(&self, user_id: &str, date: NaiveDate) -> Option<&DayCell> {
        Some(&self.cells[self.user_index(user_id)?][self.day_index(date)?])
    }

    /// City of the user's latent position that day.
    pub fn latent_city(&self, cell: &DayCell) -> &str {
        &self.unit_city[cell.day as usize]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["user_id", "date", "label", "latent", "city"])?;
        for (u, row) in self.users.iter().zip(&self.cells) {
            for (d, c) in self.days.iter().zip(row) {
                let latent = match c.latent {
                    Latent::Home => "Home",
                    Latent::AtWork => "AtWork",
                    Latent::Displaced => "Displaced",
                };
                let date = d.to_string();
                w.write_record([u.user_id.as_str(), &date, c.label().as_str(), latent, self.latent_city(c)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_users_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["user_id", "archetype", "home", "home_city", "work", "work_city", "destination_city"])?;
        for u in &self.users {
            w.write_record([
                u.user_id.as_str(),
                u.archetype.as_str(),
                &u.home,
                &u.home_city,
                u.work.as_deref().unwrap_or(""),
                u.work_city.as_deref().unwrap_or(""),
                u.destination_city.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Paths written by [`SyntheticData::write_files`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthFiles {
    pub hierarchy: PathBuf,
    pub holidays: PathBuf,
    pub daily: PathBuf,
    pub events: PathBuf,
    pub population: PathBuf,
    pub truth: PathBuf,
    pub truth_users: PathBuf,
    pub scenario: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: ScenarioSpec,
    pub hierarchy: Hierarchy,
    pub population: BTreeMap<String, u64>,
    pub truth: GroundTruth,
}

struct Geography {
    units: Vec<String>,
    unit_city: Vec<String>,
    /// First unit index and count per city, in spec order.
    ranges: Vec<(u32, u32)>,
    hierarchy: Hierarchy,
}

impl Geography {
    fn build(spec: &ScenarioSpec) -> Result<Self, SynthError> {
        let mut admin = vec![
            AdminUnit::new(REGION, "Synthetic Region", AdminLevel::Adm1, None),
            AdminUnit::new(PROVINCE, "Synthetic Province", AdminLevel::Adm2, Some(REGION)),
        ];
        let (mut units, mut unit_city, mut ranges) = (Vec::new(), Vec::new(), Vec::new());
        for c in &spec.cities {
            let name = c.name.clone().unwrap_or_else(|| c.code.clone());
            admin.push(AdminUnit::new(&c.code, &name, AdminLevel::Adm3, Some(PROVINCE)));
            ranges.push((units.len() as u32, c.barangays));
            for b in 1..=c.barangays {
                let code = format!("{}-{b:03}", c.code);
                admin.push(AdminUnit::new(&code, format!("{name} Barangay {b}"), AdminLevel::Adm4, Some(&c.code)));
                units.push(code);
                unit_city.push(c.code.clone());
            }
        }
        let hierarchy = Hierarchy::new(admin).map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
        Ok(Geography { units, unit_city, ranges, hierarchy })
    }

    fn unit(&self, city: usize, u: f64) -> u32 {
        let (start, n) = self.ranges[city];
        start + pick_index(u, n as usize) as u32
    }

    /// A unit of `city` other than `not`.
    fn other_unit(&self, city: usize, not: u32, u: f64) -> u32 {
        let (start, n) = self.ranges[city];
        let i = start + pick_index(u, n as usize - 1) as u32;
        if i >= not {
            i + 1
        } else {
            i
        }
    }
}

fn pick_index(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n.saturating_sub(1))
}

/// Index whose cumulative weight first exceeds `u`, skipping zero weights.
fn pick_weighted(u: f64, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        acc += w / total;
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    last
}

struct DayFactor {
    weekday: bool,
    holiday: bool,
    post_onset: bool,
    first_day: bool,
    observe: f64,
    noise: f64,
}

/// Draws a full scenario. Every user has its own random stream and draws
/// the same number of values regardless of parameters, so changing one
/// probability moves only the outcomes that depend on it.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    let geo = Geography::build(spec)?;
    let cal = &spec.calendar;
    let days: Vec<NaiveDate> = days_between(cal.baseline_start, cal.observation_end).collect();

    let factors: Vec<DayFactor> = days
        .iter()
        .map(|&date| {
            let mut rng = seeded_rng(spec.seed, "day", &date.to_string());
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let post_onset = date >= cal.disaster_onset;
            let missing = if post_onset {
                spec.post_onset_missing_prob.unwrap_or(spec.missing_daily_prob)
            } else {
                spec.missing_daily_prob
            };
            DayFactor {
                weekday: DayType::of(date) == DayType::Weekday,
                holiday: cal.is_holiday(date),
                post_onset,
                first_day: date == cal.disaster_onset,
                observe: ((1.0 - missing) * (1.0 + spec.activity_jitter * a)).clamp(0.0, 1.0),
                noise: (spec.observation_noise * (1.0 + spec.noise_jitter * b).max(0.0)).clamp(0.0, 1.0),
            }
        })
        .collect();

    let shares: Vec<f64> = if spec.cities[0].user_share.is_some() {
        spec.cities.iter().map(|c| c.user_share.unwrap_or(0.0)).collect()
    } else {
        spec.cities.iter().map(|c| c.population as f64).collect()
    };
    let mix: Vec<f64> = Archetype::ALL.iter().map(|a| spec.archetype_mix.get(a).copied().unwrap_or(0.0)).collect();
    let city_pos: BTreeMap<&str, usize> = spec.cities.iter().enumerate().map(|(i, c)| (c.code.as_str(), i)).collect();
    let width = (spec.n_users.max(2) - 1).to_string().len().max(6);

    let generated: Vec<(UserTruth, Vec<DayCell>)> = (0..spec.n_users)
        .into_par_iter()
        .map(|i| {
            let user_id = format!("U{i:0width$}");
            let mut rng = seeded_rng(spec.seed, &user_id, "synth:user");
            let draws: [f64; 8] = std::array::from_fn(|_| rng.random());
            let [u_arch, u_city, u_home, u_wcity, u_wunit, u_disp, u_dcity, u_dunit] = draws;

            let archetype = Archetype::ALL[pick_weighted(u_arch, &mix).expect("mix sums to one")];
            let hc = pick_weighted(u_city, &shares).expect("positive shares");
            let home = geo.unit(hc, u_home);
            let work = match archetype {
                Archetype::IntraCityCommuter => Some(geo.other_unit(hc, home, u_wunit)),
                Archetype::InterCityDaily | Archetype::InterCityWeekly => {
                    let mut wc = pick_index(u_wcity, spec.cities.len() - 1);
                    if wc >= hc {
                        wc += 1;
                    }
                    Some(geo.unit(wc, u_wunit))
                }
                _ => None,
            };
            let home_code = spec.cities[hc].code.as_str();
            let fraction = spec.displacement_fraction.get(home_code).copied().unwrap_or(0.0);
            let destination = (u_disp < fraction)
                .then(|| {
                    let weights: Vec<f64> = spec
                        .cities
                        .iter()
                        .map(|c| if c.code == home_code { 0.0 } else { spec.destination_distribution.get(&c.code).copied().unwrap_or(0.0) })
                        .collect();
                    pick_weighted(u_dcity, &weights).map(|dc| geo.unit(dc, u_dunit))
                })
                .flatten();

            let mut displaced = false;
            let cells = factors
                .iter()
                .map(|f| {
                    let day_draws: [f64; 4] = std::array::from_fn(|_| rng.random());
                    let [u_obs, u_noise, u_target, u_return] = day_draws;
                    if f.first_day && destination.is_some() {
                        displaced = true;
                    } else if displaced && f.post_onset && u_return < spec.return_hazard {
                        displaced = false;
                    }
                    let working = f.weekday && !f.holiday;
                    let (latent, night, day) = match (displaced, destination, work) {
                        (true, Some(d), _) => (Latent::Displaced, d, d),
                        (_, _, Some(w)) if working => match archetype {
                            Archetype::InterCityWeekly => (Latent::AtWork, w, w),
                            _ => (Latent::AtWork, home, w),
                        },
                        _ => (Latent::Home, home, home),
                    };
                    let observed = !(archetype == Archetype::WeekendOnly && f.weekday) && u_obs < f.observe;
                    let noise = if observed && u_noise < f.noise {
                        let here = city_pos[geo.unit_city[day as usize].as_str()];
                        if spec.cities.len() > 1 {
                            // one draw picks the city, its fractional part the unit
                            let scaled = u_target * (spec.cities.len() - 1) as f64;
                            let mut c = pick_index(u_target, spec.cities.len() - 1);
                            if c >= here {
                                c += 1;
                            }
                            geo.unit(c, scaled.fract())
                        } else {
                            geo.other_unit(here, day, u_target)
                        }
                    } else {
                        NO_NOISE
                    };
                    DayCell { latent, night, day, noise, observed }
                })
                .collect();

            let truth = UserTruth {
                user_id,
                archetype,
                home: geo.units[home as usize].clone(),
                home_city: home_code.to_string(),
                work: work.map(|w| geo.units[w as usize].clone()),
                work_city: work.map(|w| geo.unit_city[w as usize].clone()),
                destination_city: destination.map(|d| geo.unit_city[d as usize].clone()),
            };
            (truth, cells)
        })
        .collect();

    let (users, cells): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    let population = spec.cities.iter().map(|c| (c.code.clone(), c.population)).collect();
    Ok(SyntheticData {
        spec: spec.clone(),
        hierarchy: geo.hierarchy,
        population,
        truth: GroundTruth { users, days, cells, units: geo.units, unit_city: geo.unit_city },
    })
}

fn minute_in(rng: &mut impl Rng, date: NaiveDate, from_hour: u32, to_hour: u32) -> String {
    let minutes = (to_hour - from_hour) * 60;
    let m = from_hour * 60 + rng.random_range(0..minutes);
    let t = NaiveTime::from_hms_opt(m / 60, m % 60, rng.random_range(0..60)).expect("valid time");
    date.and_time(t).format("%Y-%m-%d %H:%M:%S").to_string()
}

impl SyntheticData {
    /// Vendor-style daily records, one per observed user-day.
    pub fn external_records(&self) -> Vec<RawRecord> {
        let t = &self.truth;
        let mut out = Vec::new();
        for (u, row) in t.users.iter().zip(&t.cells) {
            for (d, c) in t.days.iter().zip(row) {
                if c.observed {
                    let unit = c.vendor_unit(self.spec.vendor_emulation) as usize;
                    out.push(RawRecord::new(&u.user_id, d.to_string(), &t.units[unit]));
                }
            }
        }
        out
    }

    /// Intra-day events: nights 21:00-23:59 or after midnight up to 04:59
    /// (attributed to the previous day), days 08:00-17:59.
    pub fn event_records(&self) -> Vec<RawRecord> {
        let t = &self.truth;
        let per_user: Vec<Vec<RawRecord>> = t
            .users
            .par_iter()
            .zip(&t.cells)
            .map(|(u, row)| {
                let mut events = Vec::new();
                for (d, c) in t.days.iter().zip(row) {
                    if !c.observed {
                        continue;
                    }
                    let mut rng = seeded_rng(self.spec.seed, &u.user_id, &format!("events:{d}"));
                    let night = &t.units[c.noise().unwrap_or(c.night) as usize];
                    let day = &t.units[c.noise().unwrap_or(c.day) as usize];
                    let mut stamped = Vec::new();
                    for _ in 0..self.spec.day_events {
                        stamped.push((minute_in(&mut rng, *d, 8, 18), day));
                    }
                    for _ in 0..self.spec.night_events {
                        let ts = if rng.random_bool(0.3) {
                            minute_in(&mut rng, *d + Days::new(1), 0, 5)
                        } else {
                            minute_in(&mut rng, *d, 21, 24)
                        };
                        stamped.push((ts, night));
                    }
                    stamped.sort();
                    events.extend(stamped.into_iter().map(|(ts, unit)| RawRecord::new(&u.user_id, ts, unit)));
                }
                events
            })
            .collect();
        per_user.into_iter().flatten().collect()
    }

    pub fn write_daily_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        write_records(&self.external_records(), "date", writer)
    }

    pub fn write_events_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        write_records(&self.event_records(), "timestamp", writer)
    }

    pub fn write_population_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["admin_code", "population"])?;
        for (code, pop) in &self.population {
            w.write_record([code.clone(), pop.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every input format plus the truth tables into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<SynthFiles, SynthError> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            hierarchy: dir.join("hierarchy.csv"),
            holidays: dir.join("holidays.txt"),
            daily: dir.join("daily.csv"),
            events: dir.join("events.csv"),
            population: dir.join("population.csv"),
            truth: dir.join("truth.csv"),
            truth_users: dir.join("truth_users.csv"),
            scenario: dir.join("scenario.json"),
        };
        let create = |p: &Path| -> Result<BufWriter<File>, SynthError> { Ok(BufWriter::new(File::create(p)?)) };
        self.hierarchy.write_csv(create(&files.hierarchy)?)?;
        let mut h = create(&files.holidays)?;
        for d in &self.spec.calendar.holidays {
            writeln!(h, "{d}")?;
        }
        h.flush()?;
        self.write_daily_csv(create(&files.daily)?)?;
        self.write_events_csv(create(&files.events)?)?;
        self.write_population_csv(create(&files.population)?)?;
        self.truth.write_csv(create(&files.truth)?)?;
        self.truth.write_users_csv(create(&files.truth_users)?)?;
        let mut s = create(&files.scenario)?;
        serde_json::to_writer_pretty(&mut s, &self.spec)?;
        s.flush()?;
        Ok(files)
    }
}

fn write_records<W: Write>(records: &[RawRecord], when: &str, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", when, "admin_code"])?;
    for r in records {
        w.write_record([&r.user_id, &r.when, &r.admin_code])?;
    }
    w.flush()?;
    Ok(())
}
