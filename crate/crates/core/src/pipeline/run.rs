// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use chrono::{FixedOffset, NaiveDate};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{report, Context, Mode, PipelineError, RunConfig, SCALE_NEEDS_POPULATION};
use crate::detect::{detect_observation_window, detect_period, Method, StatusMatrix};
use crate::metrics::{
    comparison_intervals, daily_active_counts, daily_rates, od_flows, return_series, scale_population, CvModel, FlowRow, IntervalComparison, PopulationScale,
    RatesOutput, ReturnSeries, ReturnVariant,
};
use crate::profile::{attrition_report, build_cohort, AttritionReport, Cohort};
use crate::signals::{
    derive_internal, ingest_daily, ingest_events, read_daily_csv, read_events_csv, IngestReport, SignalSet,
    TimestampParser,
};

/// Displaced persons for one city-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledRow {
    pub city: String,
    pub date: NaiveDate,
    pub displaced: u64,
    pub scale: PopulationScale,
    pub estimate: f64,
    /// Absent when the city has no CV model.
    pub bounds: Option<(f64, f64)>,
}

/// Everything a run computes, before it is written out.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub ingest: IngestReport,
    pub signals: SignalSet,
    pub cohort: Cohort,
    pub statuses: StatusMatrix,
    pub cities: Vec<String>,
    pub cv_models: BTreeMap<String, CvModel>,
    pub context_aware: RatesOutput,
    pub naive: RatesOutput,
    pub flows: Vec<FlowRow>,
    pub returns: Vec<ReturnSeries>,
    pub scaled: Vec<ScaledRow>,
    pub attrition: Vec<AttritionReport>,
    pub warnings: Vec<String>,
}

fn open(path: &std::path::Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(|e| PipelineError::Config(format!("cannot open {}: {e}", path.display())))
}

/// Reads and validates location records into daily signals.
pub fn ingest(ctx: &Context) -> Result<(SignalSet, IngestReport), PipelineError> {
    let cfg = &ctx.config;
    let (signals, report) = match cfg.mode {
        Mode::External => {
            let rows = read_daily_csv(open(cfg.daily.as_ref().expect("validated"))?)?;
            ingest_daily(rows, &ctx.calendar, &ctx.hierarchy)?
        }
        Mode::Internal => {
            let rows = read_events_csv(open(cfg.events.as_ref().expect("validated"))?)?;
            let offset = cfg.timezone_offset.as_deref().map(|s| s.parse::<FixedOffset>().expect("validated"));
            let (events, report) =
                ingest_events(rows, &ctx.calendar, &ctx.hierarchy, ctx.params(), TimestampParser::new(offset))?;
            (derive_internal(&events, &ctx.calendar, ctx.params()), report)
        }
    };
    report.check_abort()?;
    info!("ingested {} user-days for {} users", signals.len(), signals.user_count());
    Ok((signals, report))
}

pub fn build_context_cohort(ctx: &Context, signals: &SignalSet) -> Result<Cohort, PipelineError> {
    Ok(build_cohort(signals, &ctx.calendar, &ctx.hierarchy, ctx.params())?)
}

/// Daily active counts per city over the CV window, from the configured
/// counts table or from the signals.
pub fn cv_count_series(ctx: &Context, signals: &SignalSet) -> (BTreeMap<String, BTreeMap<NaiveDate, u64>>, Vec<String>) {
    let mut warnings = Vec::new();
    let (days, fallback) = ctx.calendar.cv_days();
    let counts = match &ctx.cv_counts {
        Some(table) => table
            .iter()
            .map(|(city, series)| {
                let kept = series
                    .iter()
                    .filter(|(d, _)| fallback || days.binary_search(d).is_ok())
                    .map(|(d, c)| (*d, *c))
                    .collect();
                (city.clone(), kept)
            })
            .collect(),
        None => {
            if fallback {
                warnings.push("no CV window configured: CV uses the baseline window".to_string());
            }
            daily_active_counts(signals, &days, &ctx.hierarchy)
        }
    };
    (counts, warnings)
}

/// CV models for the given cities. Cities without usable counts get a
/// warning instead of a model.
pub fn cv_models(ctx: &Context, signals: &SignalSet, cities: &[String]) -> (BTreeMap<String, CvModel>, Vec<String>) {
    let (counts, mut warnings) = cv_count_series(ctx, signals);
    let mut models = BTreeMap::new();
    for city in cities {
        let series: Vec<f64> = counts.get(city).map(|s| s.values().map(|&c| c as f64).collect()).unwrap_or_default();
        match CvModel::from_counts(city.as_str(), &series, ctx.params().cv_multiplier) {
            Ok(m) => {
                if m.is_short() {
                    warnings.push(format!("CV for {city} rests on {} days; estimates may be unreliable", m.days));
                }
                models.insert(city.clone(), m);
            }
            Err(e) => warnings.push(format!("no CV model for {city}: {e}")),
        }
    }
    (models, warnings)
}

/// Interval widths for one city's post-disaster days, with dispersion
/// taken from context-aware rates over the baseline days.
pub fn interval_comparison(
    ctx: &Context,
    signals: &SignalSet,
    cohort: &Cohort,
    statuses: &StatusMatrix,
    city: &str,
) -> Result<IntervalComparison, PipelineError> {
    let days: Vec<(NaiveDate, u64, u64)> = city_day_counts(statuses, Method::ContextAware, city)
        .into_iter()
        .map(|(d, c)| (d, c.displaced, c.n))
        .collect();
    let baseline_days: Vec<NaiveDate> = ctx.calendar.baseline_days().collect();
    let baseline_statuses = detect_period(cohort, signals, &baseline_days, &ctx.calendar, &ctx.hierarchy);
    let baseline: Vec<(u64, u64)> = city_day_counts(&baseline_statuses, Method::ContextAware, city)
        .into_values()
        .map(|c| (c.displaced, c.n))
        .collect();
    let (counts, _) = cv_count_series(ctx, signals);
    let active: Vec<f64> = counts.get(city).map(|s| s.values().map(|&c| c as f64).collect()).unwrap_or_default();
    let cv = CvModel::from_counts(city, &active, ctx.params().cv_multiplier)?;
    Ok(comparison_intervals(city, &days, &baseline, &active, &cv, ctx.params())?)
}

/// Metrics, flows, returns, scaling and attrition for detected statuses.
pub fn analyze(
    ctx: &Context,
    signals: SignalSet,
    ingest: IngestReport,
    cohort: Cohort,
    statuses: StatusMatrix,
) -> Result<PipelineOutput, PipelineError> {
    let cfg = &ctx.config;
    let params = ctx.params();
    let k = params.suppression_k;
    let sizes = cohort.city_sizes();
    let cities: Vec<String> = if cfg.focal_cities.is_empty() {
        sizes.iter().filter(|(_, n)| **n > 0).map(|(c, _)| c.clone()).collect()
    } else {
        cfg.focal_cities.clone()
    };
    let mut warnings = ctx.warnings.clone();
    warnings.extend(cohort.warnings().iter().cloned());

    let (cv, cv_warnings) = cv_models(ctx, &signals, &cities);
    warnings.extend(cv_warnings);
    let context_aware = daily_rates(&statuses, Method::ContextAware, &sizes, &cv, &cities, params)?;
    let naive = daily_rates(&statuses, Method::Naive, &sizes, &cv, &cities, params)?;
    warnings.extend(context_aware.warnings.iter().cloned());

    let mut flows = Vec::new();
    for date in statuses.dates() {
        let m = od_flows(&statuses, date, params);
        flows.extend(m.rows(k).into_iter().filter(|r| cities.contains(&r.origin)));
    }

    let mut returns = Vec::new();
    for city in &cities {
        for variant in [ReturnVariant::Retrospective, ReturnVariant::RunningMax] {
            returns.push(return_series(&statuses, city, variant)?);
        }
    }

    let mut scaled = Vec::new();
    if cfg.scale {
        let population = ctx.population.as_ref().ok_or_else(|| PipelineError::Config(SCALE_NEEDS_POPULATION.into()))?;
        let baseline_days: Vec<NaiveDate> = ctx.calendar.baseline_days().collect();
        let active = daily_active_counts(&signals, &baseline_days, &ctx.hierarchy);
        for city in &cities {
            let pop = *population
                .get(city)
                .ok_or_else(|| PipelineError::Input(format!("population table has no row for '{city}'")))?;
            let empty = BTreeMap::new();
            let scale = PopulationScale::from_active_counts(city.as_str(), pop, active.get(city).unwrap_or(&empty))?;
            for m in context_aware.metrics.iter().filter(|m| &m.city == city) {
                let bounds = cv.get(city).map(|model| {
                    let e = scale_population(m.displaced as f64, &scale, model, params);
                    (e.lo, e.hi)
                });
                scaled.push(ScaledRow {
                    city: city.clone(),
                    date: m.date,
                    displaced: m.displaced,
                    estimate: m.displaced as f64 * scale.scaling_factor,
                    scale: scale.clone(),
                    bounds,
                });
            }
        }
    }

    let attrition =
        cities.iter().map(|c| attrition_report(c, &signals, &cohort, &ctx.calendar, &ctx.hierarchy)).collect();

    for w in &warnings {
        warn!("{w}");
    }
    Ok(PipelineOutput {
        ingest,
        signals,
        cohort,
        statuses,
        cities,
        cv_models: cv,
        context_aware,
        naive,
        flows,
        returns,
        scaled,
        attrition,
        warnings,
    })
}

/// Ingest through metrics, in memory.
pub fn compute(ctx: &Context) -> Result<PipelineOutput, PipelineError> {
    let (signals, report) = ingest(ctx)?;
    let cohort = build_context_cohort(ctx, &signals)?;
    info!("cohort of {} users, {} excluded", cohort.len(), cohort.excluded_count());
    let statuses = detect_observation_window(&cohort, &signals, &ctx.calendar, &ctx.hierarchy);
    analyze(ctx, signals, report, cohort, statuses)
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    version: &'a str,
    started_at: String,
    finished_at: String,
    config: &'a RunConfig,
}

/// Runs every stage and writes the bundle to the configured output dir.
/// Timestamps go only to `run_metadata.json`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let ctx = Context::load(config.clone())?;
    let out = compute(&ctx)?;
    report::write_bundle(&config.output_dir, &ctx, &out)?;
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        config,
    };
    let f = File::create(config.output_dir.join("run_metadata.json"))?;
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct CityDayCounts {
    pub displaced: u64,
    pub missing: u64,
    pub n: u64,
}

/// Per-date counts of one city's verdicts for one method.
pub(crate) fn city_day_counts(statuses: &StatusMatrix, method: Method, city: &str) -> BTreeMap<NaiveDate, CityDayCounts> {
    let mut out: BTreeMap<NaiveDate, CityDayCounts> = BTreeMap::new();
    for r in statuses.by_method(method).filter(|r| r.home_city == city) {
        let c = out.entry(r.date).or_insert(CityDayCounts { displaced: 0, missing: 0, n: 0 });
        c.n += 1;
        match r.verdict {
            crate::detect::Verdict::Displaced => c.displaced += 1,
            crate::detect::Verdict::Missing => c.missing += 1,
            crate::detect::Verdict::AtExpected => {}
        }
    }
    out
}
