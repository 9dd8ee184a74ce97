// SPDX-License-Identifier: Apache-2.0

//! `displace` command-line driver.
//!
//! Stage subcommands read and write `stages/` files under the output
//! directory, so any stage can be re-run on its own once its inputs exist.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use displace_core::detect::{detect_observation_window, StatusMatrix};
use displace_core::metrics::{IntervalComparison, ReturnSeries};
use displace_core::model::Params;
use displace_core::pipeline::{
    analyze, build_context_cohort, clean_weekdays, cv_count_series, cv_multiplier_table, ingest, interval_comparison,
    run_pipeline, sensitivity_sweep, write_bundle, write_flows, write_metrics_reports, write_population, write_returns,
    Context, CvTableRow, Mode, PipelineError, PipelineOutput, RunConfig, SweepRow,
};
use displace_core::profile::Cohort;
use displace_core::signals::{IngestReport, SignalSet};
use displace_core::synth::{generate, profile_recovery, score, ScenarioSpec};

const OUTPUT_ENV: &str = "DISPLACE_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "displace", version, about = "Displacement estimation from mobile location records")]
struct Cli {
    /// Flat JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set cv_multiplier=2.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    External,
    Internal,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every stage, writing the full bundle.
    Run,
    /// Validate records into daily signals.
    Ingest,
    /// Residential baselines from stored signals.
    Baseline,
    /// Baselines plus mobility profiles.
    Profile,
    /// Naive and context-aware verdicts for the observation window.
    Detect,
    /// Daily rates, coverage and attrition.
    Metrics,
    /// Origin-destination flows.
    Flows,
    /// Return series.
    Returns,
    /// Population-scaled estimates.
    Scale,
    /// Full report bundle from stored stages.
    Report,
    /// Generate a synthetic scenario and a config that reads it.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "external")]
        mode: ModeArg,
    },
    /// Score stored verdicts against a scenario's ground truth.
    Score {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Re-run baseline through detection over a grid of thresholds.
    SweepThresholds {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        weekend: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
        weekday: Vec<u32>,
        /// Observation days left out of the averages.
        #[arg(long, value_delimiter = ',')]
        exclude_dates: Vec<NaiveDate>,
    },
    /// Bounds width per CV multiplier.
    SweepCv {
        #[arg(long, value_delimiter = ',', default_value = "1.5,2.0,2.5")]
        multipliers: Vec<f64>,
        /// Baseline CV to use instead of one computed from the data.
        #[arg(long)]
        cv: Option<f64>,
    },
    /// Binomial, CV, overdispersion and bootstrap interval widths.
    CompareIntervals {
        #[arg(long)]
        city: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let path = cli.config.as_ref().ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path, &cli.set)?;
    if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
        cfg.output_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn load_context(cli: &Cli) -> Result<Context, PipelineError> {
    Context::load(load_config(cli)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open_stage(dir: &Path, name: &str, producer: &str) -> Result<BufReader<File>, PipelineError> {
    let path = dir.join("stages").join(name);
    File::open(&path).map(BufReader::new).map_err(|e| {
        PipelineError::Config(format!("cannot open {} ({e}); run `displace {producer}` first", path.display()))
    })
}

fn read_signals(dir: &Path) -> Result<SignalSet, PipelineError> {
    Ok(SignalSet::read_csv(open_stage(dir, "signals.csv", "ingest")?)?)
}

fn read_ingest_report(dir: &Path) -> Result<IngestReport, PipelineError> {
    Ok(serde_json::from_reader(open_stage(dir, "ingest_report.json", "ingest")?)?)
}

fn read_cohort(dir: &Path) -> Result<Cohort, PipelineError> {
    Ok(Cohort::read_csv(open_stage(dir, "profiles.csv", "profile")?)?)
}

fn read_status(dir: &Path) -> Result<StatusMatrix, PipelineError> {
    Ok(StatusMatrix::read_csv(open_stage(dir, "status.csv", "detect")?)?)
}

/// Analysis over stored stages.
fn stored_analysis(ctx: &Context) -> Result<PipelineOutput, PipelineError> {
    let dir = &ctx.config.output_dir;
    analyze(ctx, read_signals(dir)?, read_ingest_report(dir)?, read_cohort(dir)?, read_status(dir)?)
}

fn write_cohort(ctx: &Context, cohort: &Cohort) -> Result<(), PipelineError> {
    let path = ctx.config.output_dir.join("stages").join("profiles.csv");
    let mut w = create(&path)?;
    cohort.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Run => {
            let out = run_pipeline(&load_config(&cli)?)?;
            println!("pipeline finished: {} cities, {} warnings", out.cities.len(), out.warnings.len());
        }
        Command::Ingest => {
            let ctx = load_context(&cli)?;
            let (signals, report) = ingest(&ctx)?;
            let stages = ctx.config.output_dir.join("stages");
            let mut w = create(&stages.join("signals.csv"))?;
            signals.write_csv(&mut w)?;
            w.flush()?;
            serde_json::to_writer_pretty(create(&stages.join("ingest_report.json"))?, &report)?;
            println!(
                "accepted={} duplicate={} out_of_window={} unknown_code={} malformed={}",
                report.accepted, report.duplicate, report.out_of_window, report.unknown_code, report.malformed
            );
        }
        Command::Baseline | Command::Profile => {
            let ctx = load_context(&cli)?;
            let signals = read_signals(&ctx.config.output_dir)?;
            let cohort = build_context_cohort(&ctx, &signals)?;
            write_cohort(&ctx, &cohort)?;
            if matches!(cli.command, Command::Baseline) {
                let mut by_source: BTreeMap<String, u64> = BTreeMap::new();
                for m in cohort.members() {
                    *by_source.entry(m.baseline.source.to_string()).or_default() += 1;
                }
                for (k, n) in by_source {
                    println!("{k}: {n}");
                }
                println!("excluded: {}", cohort.excluded_count());
            } else {
                for (kind, n) in cohort.profile_counts() {
                    println!("{}: {n}", kind.as_str());
                }
                println!("excluded: {}", cohort.excluded_count());
            }
        }
        Command::Detect => {
            let ctx = load_context(&cli)?;
            let dir = &ctx.config.output_dir;
            let statuses = detect_observation_window(&read_cohort(dir)?, &read_signals(dir)?, &ctx.calendar, &ctx.hierarchy);
            let mut w = create(&dir.join("stages").join("status.csv"))?;
            statuses.write_csv(&mut w)?;
            w.flush()?;
            println!("{} user-day verdicts per method", statuses.len() / 2);
        }
        Command::Metrics => {
            let ctx = load_context(&cli)?;
            let out = stored_analysis(&ctx)?;
            let dir = &ctx.config.output_dir;
            write_metrics_reports(dir, &out, ctx.params().suppression_k)?;
            serde_json::to_writer_pretty(create(&dir.join("stages").join("cv_models.json"))?, &out.cv_models)?;
            println!("wrote metrics for {} cities", out.cities.len());
        }
        Command::Flows => {
            let ctx = load_context(&cli)?;
            let out = stored_analysis(&ctx)?;
            write_flows(&ctx.config.output_dir, &out)?;
            println!("wrote {} flow rows", out.flows.len());
        }
        Command::Returns => {
            let ctx = load_context(&cli)?;
            let out = stored_analysis(&ctx)?;
            write_returns(&ctx.config.output_dir, &out, ctx.params().suppression_k)?;
            print_returns(&out.returns);
        }
        Command::Scale => {
            let mut cfg = load_config(&cli)?;
            cfg.scale = true;
            let ctx = Context::load(cfg)?;
            let out = stored_analysis(&ctx)?;
            write_population(&ctx.config.output_dir, &out, ctx.params().suppression_k)?;
            println!("wrote {} scaled rows", out.scaled.len());
        }
        Command::Report => {
            let ctx = load_context(&cli)?;
            let out = stored_analysis(&ctx)?;
            write_bundle(&ctx.config.output_dir, &ctx, &out)?;
            println!("report bundle written to {}", ctx.config.output_dir.display());
        }
        Command::Simulate { scenario, out, mode } => {
            let spec = read_scenario(scenario)?;
            let data = generate(&spec)?;
            let files = data.write_files(out)?;
            let mode = match mode {
                ModeArg::External => Mode::External,
                ModeArg::Internal => Mode::Internal,
            };
            let mut cfg = RunConfig::for_synthetic(&files, &spec, mode, out.join("output"));
            // paths relative to the config file so the directory can be moved
            let rel = |p: &Path| PathBuf::from(p.file_name().expect("file name"));
            cfg.daily = cfg.daily.as_deref().map(rel);
            cfg.events = cfg.events.as_deref().map(rel);
            cfg.hierarchy = rel(&cfg.hierarchy);
            cfg.holidays = cfg.holidays.as_deref().map(rel);
            cfg.population = cfg.population.as_deref().map(rel);
            cfg.output_dir = PathBuf::from("output");
            let mut w = create(&out.join("config.json"))?;
            serde_json::to_writer_pretty(&mut w, &cfg)?;
            w.flush()?;
            println!("{} users written to {}", spec.n_users, out.display());
        }
        Command::Score { scenario } => {
            let spec = read_scenario(scenario)?;
            let (dir, k) = match &cli.config {
                Some(_) => {
                    let cfg = load_config(&cli)?;
                    (cfg.output_dir, cfg.params.suppression_k)
                }
                None => (
                    std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("output")),
                    Params::default().suppression_k,
                ),
            };
            let data = generate(&spec)?;
            let report = score(&read_status(&dir)?, &data.truth)?;
            let mut w = create(&dir.join("report").join("score.csv"))?;
            report.write_csv(&mut w, k)?;
            w.flush()?;
            if let Ok(cohort) = read_cohort(&dir) {
                let rec = profile_recovery(&cohort, &data.truth);
                println!("profile recovery: {}/{}", rec.matched, rec.total);
            }
            for row in report.rows.iter().filter(|r| r.subgroup == "all" && r.day_type == "all") {
                let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
                println!(
                    "{}: precision {}% recall {}% fpr {}%",
                    row.method.as_str(),
                    pct(row.confusion.precision()),
                    pct(row.confusion.recall()),
                    pct(row.confusion.fpr())
                );
            }
        }
        Command::SweepThresholds { weekend, weekday, exclude_dates } => {
            let mut cfg = load_config(&cli)?;
            cfg.exclude_dates.extend(exclude_dates.iter().copied());
            let ctx = Context::load(cfg)?;
            let signals = read_signals(&ctx.config.output_dir)?;
            info!("sweep over {} clean weekdays", clean_weekdays(&ctx).len());
            let rows = sensitivity_sweep(&ctx, &signals, weekend, weekday)?;
            let path = ctx.config.output_dir.join("report").join("sweep_thresholds.csv");
            let mut w = create(&path)?;
            SweepRow::write_csv(&rows, &mut w)?;
            w.flush()?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
        Command::SweepCv { multipliers, cv } => {
            let (tables, dir, params) = match cv {
                Some(cv) => {
                    let (dir, params) = match &cli.config {
                        Some(_) => {
                            let cfg = load_config(&cli)?;
                            (cfg.output_dir, cfg.params)
                        }
                        None => (
                            std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("output")),
                            Params::default(),
                        ),
                    };
                    (vec![(None, *cv)], dir, params)
                }
                None => {
                    let ctx = load_context(&cli)?;
                    let signals = read_signals(&ctx.config.output_dir)?;
                    let (counts, _) = cv_count_series(&ctx, &signals);
                    let mut tables = Vec::new();
                    for (city, series) in counts {
                        if !ctx.config.focal_cities.is_empty() && !ctx.config.focal_cities.contains(&city) {
                            continue;
                        }
                        let series: Vec<f64> = series.values().map(|&c| c as f64).collect();
                        match displace_core::metrics::CvModel::from_counts(city.as_str(), &series, ctx.params().cv_multiplier) {
                            Ok(m) => tables.push((Some(city), m.cv_baseline)),
                            Err(e) => eprintln!("skipping {city}: {e}"),
                        }
                    }
                    (tables, ctx.config.output_dir.clone(), ctx.params().clone())
                }
            };
            for (city, cv) in tables {
                let rows = cv_multiplier_table(cv, multipliers, &params);
                let name = match &city {
                    Some(c) => format!("sweep_cv_{c}.csv"),
                    None => "sweep_cv.csv".to_string(),
                };
                let path = dir.join("report").join(name);
                let mut w = create(&path)?;
                CvTableRow::write_csv(&rows, &mut w)?;
                w.flush()?;
                println!("cv {cv:.4}: {}", path.display());
            }
        }
        Command::CompareIntervals { city } => {
            let ctx = load_context(&cli)?;
            let dir = &ctx.config.output_dir;
            let (signals, cohort, statuses) = (read_signals(dir)?, read_cohort(dir)?, read_status(dir)?);
            let cities: Vec<String> = match city {
                Some(c) => vec![c.clone()],
                None if !ctx.config.focal_cities.is_empty() => ctx.config.focal_cities.clone(),
                None => cohort.city_sizes().into_iter().filter(|(_, n)| *n > 0).map(|(c, _)| c).collect(),
            };
            for c in cities {
                let cmp: IntervalComparison = interval_comparison(&ctx, &signals, &cohort, &statuses, &c)?;
                let path = dir.join("report").join(format!("intervals_{c}.csv"));
                let mut w = create(&path)?;
                cmp.write_csv(&mut w)?;
                w.flush()?;
                let a = &cmp.average;
                println!(
                    "{c}: phi {:.2}; mean width pp binomial {:.2} wilson {:.2} cv {:.2} bootstrap {:.2} overdispersion {:.2}",
                    cmp.phi, a.clopper_pearson, a.wilson, a.cv_based, a.bootstrap, a.overdispersion
                );
            }
        }
    }
    Ok(())
}

fn read_scenario(path: &Path) -> Result<ScenarioSpec, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(ScenarioSpec::from_json(&text)?)
}

fn print_returns(series: &[ReturnSeries]) {
    for s in series {
        let last = s.cumulative_rate.last().copied().unwrap_or(0.0);
        println!("{} {}: cumulative return {last:.1}%", s.city, s.variant);
    }
}
