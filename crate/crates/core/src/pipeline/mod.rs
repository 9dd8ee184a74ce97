// SPDX-License-Identifier: Apache-2.0

//! End-to-end orchestration from a single flat JSON config.
//!
//! Relative paths in a config file are resolved against the file's
//! directory. `key=value` overrides are applied to the JSON before it is
//! deserialized, so every field, including model parameters, can be set
//! from the command line.

mod report;
mod run;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::detect::DetectError;
use crate::metrics::{read_population_csv, MetricsError};
use crate::model::{read_holidays, AdminLevel, AnalysisCalendar, Hierarchy, ModelError, Params};
use crate::profile::ProfileError;
use crate::signals::SignalError;
use crate::synth::{ScenarioSpec, SynthError, SynthFiles};

pub use report::{
    write_bundle, write_flows, write_metrics_reports, write_plot_data, write_population, write_returns, write_stages,
    write_summary, BUNDLE_FILES,
};
pub use run::{
    analyze, build_context_cohort, compute, cv_count_series, cv_models, ingest, interval_comparison, run_pipeline,
    PipelineOutput, ScaledRow,
};
pub use sweep::{clean_weekdays, cv_multiplier_table, sensitivity_sweep, CvTableRow, SweepRow};

pub const SCALE_NEEDS_POPULATION: &str = "population table required for scale stage";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("aborted: {0}")]
    Abort(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Input(_) => 3,
            PipelineError::Abort(_) => 4,
            PipelineError::Invariant(_) => 5,
        }
    }
}

impl From<SignalError> for PipelineError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::AbortThresholdExceeded { .. } => PipelineError::Abort(e.to_string()),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::CalendarOrder(_) | ModelError::BadParam(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Reconciliation(_) => PipelineError::Invariant(e.to_string()),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<ProfileError> for PipelineError {
    fn from(e: ProfileError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<DetectError> for PipelineError {
    fn from(e: DetectError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::SpecInvalid(_) | SynthError::Json(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One vendor-aggregated location per user-day.
    External,
    /// Timestamped intra-day events.
    Internal,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub daily: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
    pub hierarchy: PathBuf,
    #[serde(default)]
    pub holidays: Option<PathBuf>,
    #[serde(default)]
    pub population: Option<PathBuf>,
    /// `admin_code,date,active_count` table for the CV window.
    #[serde(default)]
    pub cv_counts: Option<PathBuf>,
    pub baseline_start: NaiveDate,
    pub baseline_end: NaiveDate,
    pub disaster_onset: NaiveDate,
    pub observation_end: NaiveDate,
    #[serde(default)]
    pub cv_window_start: Option<NaiveDate>,
    #[serde(default)]
    pub cv_window_end: Option<NaiveDate>,
    /// Holidays given inline, merged with the holidays file.
    #[serde(default)]
    pub holiday_dates: BTreeSet<NaiveDate>,
    #[serde(flatten)]
    pub params: Params,
    #[serde(default)]
    pub focal_cities: Vec<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Local offset such as `+08:00` for RFC 3339 event timestamps.
    #[serde(default)]
    pub timezone_offset: Option<String>,
    #[serde(default)]
    pub scale: bool,
    /// Observation days left out of sweep averages.
    #[serde(default)]
    pub exclude_dates: BTreeSet<NaiveDate>,
}

/// Applies `key=value` overrides. Values that parse as JSON are used as
/// such, anything else as a string.
pub fn apply_overrides(value: &mut Value, overrides: &[String]) -> Result<(), PipelineError> {
    let obj = value.as_object_mut().ok_or_else(|| PipelineError::Config("config root must be an object".into()))?;
    for o in overrides {
        let (key, raw) =
            o.split_once('=').ok_or_else(|| PipelineError::Config(format!("override '{o}' is not key=value")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        obj.insert(key.trim().to_string(), v);
    }
    Ok(())
}

impl RunConfig {
    /// Deserializes a config object, naming the offending field on error.
    pub fn from_value(value: Value) -> Result<Self, PipelineError> {
        let keys: Vec<String> = value.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
        let cfg: RunConfig = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
            // errors inside the flattened parameters lose their path; find it on Params alone
            let e = match serde_path_to_error::deserialize::<_, Params>(value) {
                Err(pe) => pe.to_string(),
                Ok(_) => e.to_string(),
            };
            PipelineError::Config(format!("field {e}"))
        })?;
        let known = serde_json::to_value(&cfg).expect("config serializes");
        let known = known.as_object().expect("object");
        if let Some(k) = keys.iter().find(|k| !known.contains_key(k.as_str())) {
            return Err(PipelineError::Config(format!("field '{k}': unknown field")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies overrides and resolves relative paths
    /// against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut value, overrides)?;
        let mut cfg = Self::from_value(value)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// A config reading the files written by `SyntheticData::write_files`,
    /// with default parameters.
    pub fn for_synthetic(files: &SynthFiles, spec: &ScenarioSpec, mode: Mode, output_dir: PathBuf) -> Self {
        let cal = &spec.calendar;
        let (cv_window_start, cv_window_end) = match cal.cv_baseline_window {
            Some((s, e)) => (Some(s), Some(e)),
            None => (None, None),
        };
        RunConfig {
            mode,
            daily: (mode == Mode::External).then(|| files.daily.clone()),
            events: (mode == Mode::Internal).then(|| files.events.clone()),
            hierarchy: files.hierarchy.clone(),
            holidays: Some(files.holidays.clone()),
            population: Some(files.population.clone()),
            cv_counts: None,
            baseline_start: cal.baseline_start,
            baseline_end: cal.baseline_end,
            disaster_onset: cal.disaster_onset,
            observation_end: cal.observation_end,
            cv_window_start,
            cv_window_end,
            holiday_dates: BTreeSet::new(),
            params: Params::default(),
            focal_cities: Vec::new(),
            output_dir,
            timezone_offset: None,
            scale: false,
            exclude_dates: BTreeSet::new(),
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.daily, &mut self.events, &mut self.holidays, &mut self.population, &mut self.cv_counts]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.hierarchy);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match self.mode {
            Mode::External if self.daily.is_none() => {
                return Err(PipelineError::Config("field 'daily': required in external mode".into()))
            }
            Mode::Internal if self.events.is_none() => {
                return Err(PipelineError::Config("field 'events': required in internal mode".into()))
            }
            _ => {}
        }
        if self.cv_window_start.is_some() != self.cv_window_end.is_some() {
            return Err(PipelineError::Config("cv_window_start and cv_window_end go together".into()));
        }
        self.params.validate()?;
        self.calendar_without_files()?;
        if let Some(tz) = &self.timezone_offset {
            tz.parse::<FixedOffset>()
                .map_err(|e| PipelineError::Config(format!("field 'timezone_offset': {e}")))?;
        }
        Ok(())
    }

    fn calendar_without_files(&self) -> Result<AnalysisCalendar, PipelineError> {
        let mut cal = AnalysisCalendar::new(self.baseline_start, self.baseline_end, self.disaster_onset, self.observation_end)?
            .with_holidays(self.holiday_dates.iter().copied());
        if let (Some(s), Some(e)) = (self.cv_window_start, self.cv_window_end) {
            cal = cal.with_cv_window(s, e)?;
        }
        Ok(cal)
    }
}

fn open(path: &Path, field: &str) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::Config(format!("field '{field}': cannot open {}: {e}", path.display())))
}

/// A validated config with its static inputs loaded.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub calendar: AnalysisCalendar,
    pub hierarchy: Hierarchy,
    pub population: Option<BTreeMap<String, u64>>,
    pub cv_counts: Option<BTreeMap<String, BTreeMap<NaiveDate, u64>>>,
    pub warnings: Vec<String>,
}

impl Context {
    pub fn load(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut calendar = config.calendar_without_files()?;
        if let Some(p) = &config.holidays {
            calendar = calendar.with_holidays(read_holidays(open(p, "holidays")?)?);
        }
        let hierarchy = Hierarchy::from_csv(open(&config.hierarchy, "hierarchy")?)?;
        for c in &config.focal_cities {
            match hierarchy.get(c) {
                Some(u) if u.level == AdminLevel::Adm3 => {}
                _ => return Err(PipelineError::Config(format!("field 'focal_cities': '{c}' is not a city in the hierarchy"))),
            }
        }
        if config.scale && config.population.is_none() {
            return Err(PipelineError::Config(SCALE_NEEDS_POPULATION.into()));
        }
        let population = match &config.population {
            Some(p) => Some(read_population_csv(open(p, "population")?)?),
            None => None,
        };
        let cv_counts = match &config.cv_counts {
            Some(p) => Some(read_cv_counts(open(p, "cv_counts")?)?),
            None => None,
        };
        let mut warnings = calendar.warnings();
        warnings.extend(hierarchy.warnings().iter().cloned());
        Ok(Context { config, calendar, hierarchy, population, cv_counts, warnings })
    }

    pub fn params(&self) -> &Params {
        &self.config.params
    }
}

/// Reads `admin_code,date,active_count`.
pub fn read_cv_counts<R: std::io::Read>(reader: R) -> Result<BTreeMap<String, BTreeMap<NaiveDate, u64>>, PipelineError> {
    #[derive(Deserialize)]
    struct Row {
        admin_code: String,
        date: NaiveDate,
        active_count: u64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, u64>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| PipelineError::Input(format!("cv_counts line {}: {e}", i + 2)))?;
        out.entry(row.admin_code).or_default().insert(row.date, row.active_count);
    }
    Ok(out)
}
