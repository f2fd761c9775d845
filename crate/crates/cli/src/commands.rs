use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ecodrive_core::classifier::{
    cross_validate, load_model, save_model, train_on, tree_seed, Dataset,
};
use ecodrive_core::clustering::{
    cluster_journey, write_cluster_report, LabelRuleConfig, Overrides,
};
use ecodrive_core::engine::{jsonl_sink, read_decisions, run_stream};
use ecodrive_core::fuzzy::FuzzyConfig;
use ecodrive_core::simulator::{
    build_best_index, combine, generate_journey, simulate_savings, weather_fixture,
    write_savings_table, DriverStyle, GeneratorProfile, SavingsReport, SimError,
};
use ecodrive_core::telemetry::{
    aggregate_events, parse_telemetry, read_events, split_journeys, write_events, write_telemetry,
    AggregateOptions, Schema, SplitOptions,
};
use ecodrive_core::weather::{FixtureProvider, HttpProvider, NoWeather, WeatherProvider};
use ecodrive_core::{DrivingEvent, EfficiencyLabel};
use serde::Serialize;

use crate::config::{PipelineConfig, WeatherSource};
use crate::CliError;

pub const TELEMETRY: &str = "telemetry.csv";
pub const WEATHER_FIXTURES: &str = "weather_fixtures.json";
pub const EVENTS: &str = "events.jsonl";
pub const LABELED_EVENTS: &str = "labeled_events.jsonl";
pub const CLUSTER_REPORT: &str = "cluster_report.tsv";
pub const MODEL: &str = "model.json";
pub const EVALUATION: &str = "evaluation.json";
pub const DECISIONS: &str = "decisions.jsonl";
pub const SAVINGS: &str = "savings.json";
pub const SAVINGS_TABLE: &str = "savings_table.csv";

/// Seed streams derived from the configured seed. The forest uses the seed
/// itself.
const STREAM_FOLDS: u64 = 1;
const STREAM_GENERATE: u64 = 2;

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

pub struct Context {
    cfg: PipelineConfig,
    out: PathBuf,
    verbose: bool,
}

impl Context {
    pub fn new(cfg: PipelineConfig, out: PathBuf, verbose: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out).map_err(|e| {
            CliError::Usage(format!(
                "cannot create output directory {}: {e}",
                out.display()
            ))
        })?;
        Ok(Context { cfg, out, verbose })
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// `explicit`, else `configured`, else `<out>/name`; must exist.
    fn input(
        &self,
        explicit: Option<PathBuf>,
        configured: Option<&PathBuf>,
        name: &str,
    ) -> Result<PathBuf, CliError> {
        let path = explicit
            .or_else(|| configured.cloned())
            .unwrap_or_else(|| self.out_path(name));
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "input file {} not found",
                path.display()
            )));
        }
        Ok(path)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out_path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| domain(format!("cannot create {}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(domain)?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(domain)
    }

    fn rules(&self) -> Result<LabelRuleConfig, CliError> {
        match &self.cfg.paths.label_rules {
            Some(p) => LabelRuleConfig::load(p).map_err(|e| CliError::Usage(e.to_string())),
            None => Ok(LabelRuleConfig::default()),
        }
    }

    fn fuzzy(&self) -> Result<FuzzyConfig, CliError> {
        match &self.cfg.paths.fuzzy {
            Some(p) => {
                FuzzyConfig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
            }
            None => Ok(FuzzyConfig::default()),
        }
    }

    fn weather(&self) -> Result<Box<dyn WeatherProvider>, CliError> {
        match self.cfg.weather.source {
            WeatherSource::None => Ok(Box::new(NoWeather)),
            WeatherSource::Http => HttpProvider::new(self.cfg.weather.http.clone())
                .map(|p| Box::new(p) as Box<dyn WeatherProvider>)
                .map_err(|e| CliError::Usage(e.to_string())),
            WeatherSource::Fixture => {
                let path = self
                    .cfg
                    .paths
                    .weather_fixtures
                    .clone()
                    .unwrap_or_else(|| self.out_path(WEATHER_FIXTURES));
                if !path.is_file() {
                    self.log("no weather fixtures; every minute gets the fallback descriptor");
                    return Ok(Box::new(NoWeather));
                }
                FixtureProvider::load(&path)
                    .map(|p| Box::new(p) as Box<dyn WeatherProvider>)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn ingest(&self, input: Option<PathBuf>) -> Result<(), CliError> {
        let path = self.input(input, self.cfg.paths.telemetry.as_ref(), TELEMETRY)?;
        let file =
            File::open(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let parsed = parse_telemetry(BufReader::new(file), &Schema::default()).map_err(domain)?;
        for issue in &parsed.issues {
            self.log(format!("rejected: {issue}"));
        }
        let n_records = parsed.records.len();
        let (n_issues, n_malformed, n_range) = (
            parsed.issues.len(),
            parsed.malformed_count(),
            parsed.range_violation_count(),
        );
        let journeys = split_journeys(parsed.records, &SplitOptions::default());
        let weather = self.weather()?;
        let opts = AggregateOptions {
            tz_offset_minutes: self.cfg.tz_offset_minutes,
        };
        let mut events = Vec::new();
        let mut fallbacks = 0;
        for j in &journeys {
            let agg = aggregate_events(j, weather.as_ref(), &opts);
            self.log(format!(
                "journey {}: {} records, {} events",
                j.id,
                j.records.len(),
                agg.events.len()
            ));
            fallbacks += agg.weather_fallbacks;
            events.extend(agg.events);
        }
        write_events(self.create(EVENTS)?, &events).map_err(domain)?;
        println!("{n_records} records accepted");
        println!(
            "{} rows rejected ({} malformed, {} out of range, {} out of order)",
            n_issues,
            n_malformed,
            n_range,
            n_issues - n_malformed - n_range
        );
        println!("{} journeys, {} events", journeys.len(), events.len());
        println!("{fallbacks} events used the fallback weather descriptor");
        Ok(())
    }

    pub fn cluster(&self, events: Option<PathBuf>) -> Result<(), CliError> {
        let events = load_events(&self.input(events, None, EVENTS)?)?;
        let rules = self.rules()?;
        let overrides = match &self.cfg.paths.overrides {
            Some(p) => Overrides::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => Overrides::default(),
        };
        let params = self.cfg.clustering.params();
        let mut labeled = Vec::with_capacity(events.len());
        let mut summaries = Vec::new();
        for (id, members) in group_by_journey(&events) {
            let members: Vec<DrivingEvent> = members.into_iter().cloned().collect();
            let result =
                cluster_journey(&id, &members, &params, &rules, &overrides).map_err(domain)?;
            if let Some(w) = &result.warning {
                eprintln!("warning: {w}");
            }
            self.log(format!("journey {id}: {} clusters", result.summaries.len()));
            labeled.extend(result.events);
            summaries.extend(result.summaries);
        }
        write_events(self.create(LABELED_EVENTS)?, &labeled).map_err(domain)?;
        let mut report = self.create(CLUSTER_REPORT)?;
        write_cluster_report(&mut report, &summaries)
            .and_then(|_| report.flush())
            .map_err(domain)?;
        let count = |l: EfficiencyLabel| labeled.iter().filter(|e| e.label == l).count();
        println!("{} clusters", summaries.len());
        println!(
            "{} events labeled: {} efficient, {} inefficient, {} unlabeled",
            labeled.len(),
            count(EfficiencyLabel::Efficient),
            count(EfficiencyLabel::Inefficient),
            count(EfficiencyLabel::Unlabeled)
        );
        Ok(())
    }

    /// Labeled events, with unlabeled ones dropped.
    fn training_data(
        &self,
        labeled: Option<PathBuf>,
    ) -> Result<(Vec<DrivingEvent>, usize), CliError> {
        let events = load_events(&self.input(labeled, None, LABELED_EVENTS)?)?;
        let total = events.len();
        let kept: Vec<DrivingEvent> = events
            .into_iter()
            .filter(|e| e.label != EfficiencyLabel::Unlabeled)
            .collect();
        let dropped = total - kept.len();
        if kept.is_empty() {
            return Err(CliError::Domain(format!(
                "no labeled events to train on ({dropped} unlabeled); run `cluster` first"
            )));
        }
        if dropped > 0 {
            println!("{dropped} unlabeled events excluded");
        }
        Ok((kept, dropped))
    }

    pub fn train(&self, labeled: Option<PathBuf>) -> Result<(), CliError> {
        let (events, _) = self.training_data(labeled)?;
        let order = self.rules()?.severity_order;
        let data = Dataset::from_events(&events, &order).map_err(domain)?;
        let params = self.cfg.forest_params();
        println!(
            "training on {} events: ntree={} mtry={} min_leaf={} max_depth={} seed={}",
            data.len(),
            params.ntree,
            params.mtry,
            params.min_leaf,
            params
                .max_depth
                .map_or("none".to_string(), |d| d.to_string()),
            params.seed
        );
        let (model, diag) = train_on(&data, &params, order).map_err(domain)?;
        if let (Some(lo), Some(hi)) = (
            diag.oob_fraction.iter().copied().reduce(f64::min),
            diag.oob_fraction.iter().copied().reduce(f64::max),
        ) {
            self.log(format!("out-of-bag fraction per tree: {lo:.3}..{hi:.3}"));
        }
        let path = self
            .cfg
            .paths
            .model
            .clone()
            .unwrap_or_else(|| self.out_path(MODEL));
        save_model(&model, &path).map_err(domain)?;
        match model.oob_error {
            Some(e) => println!("OOB error: {:.4}", e),
            None => println!("OOB error: n/a"),
        }
        println!("model written to {}", path.display());
        Ok(())
    }

    pub fn evaluate(&self, labeled: Option<PathBuf>, folds: Option<usize>) -> Result<(), CliError> {
        let folds = folds.unwrap_or(self.cfg.evaluate.folds);
        if folds < 2 {
            return Err(CliError::Usage("--folds must be at least 2".into()));
        }
        let (events, _) = self.training_data(labeled)?;
        let order = self.rules()?.severity_order;
        let data = Dataset::from_events(&events, &order).map_err(domain)?;
        let params = self.cfg.forest_params();
        let (report, _) = cross_validate(
            &data,
            &params,
            folds,
            tree_seed(self.cfg.seed, STREAM_FOLDS),
            &order,
        )
        .map_err(domain)?;

        #[derive(Serialize)]
        struct Evaluation<'a> {
            folds: usize,
            ntree: usize,
            mtry: usize,
            seed: u64,
            #[serde(flatten)]
            report: &'a ecodrive_core::classifier::EvaluationReport,
        }
        self.write_json(
            EVALUATION,
            &Evaluation {
                folds,
                ntree: params.ntree,
                mtry: params.mtry,
                seed: params.seed,
                report: &report,
            },
        )?;
        println!("{folds}-fold cross-validation over {} events", data.len());
        print!("{}", report.to_table());
        if report.kappa_degenerate {
            println!("(kappa undefined: chance agreement is 1)");
        }
        Ok(())
    }

    pub fn replay(&self, events: Option<PathBuf>, model: Option<PathBuf>) -> Result<(), CliError> {
        let events = load_events(&self.input(events, None, EVENTS)?)?;
        let model_path = self.input(model, self.cfg.paths.model.as_ref(), MODEL)?;
        let model = load_model(&model_path)
            .map_err(|e| domain(format!("{}: {e}", model_path.display())))?;
        let fuzzy = self.fuzzy()?;
        let mut w = self.create(DECISIONS)?;
        let decisions = run_stream(&events, &model, &fuzzy, jsonl_sink(&mut w)).map_err(domain)?;
        w.flush().map_err(domain)?;
        let mut by_action: BTreeMap<String, usize> = BTreeMap::new();
        for d in &decisions {
            let key = d.action.map_or("none".to_string(), |a| a.to_string());
            *by_action.entry(key).or_default() += 1;
        }
        println!("{} decisions", decisions.len());
        for (action, n) in by_action {
            println!("  {action}: {n}");
        }
        Ok(())
    }

    pub fn simulate(
        &self,
        events: Option<PathBuf>,
        decisions: Option<PathBuf>,
        history: Option<PathBuf>,
    ) -> Result<(), CliError> {
        let events = load_events(&self.input(events, None, EVENTS)?)?;
        let decisions_path = self.input(decisions, None, DECISIONS)?;
        let file = File::open(&decisions_path).map_err(domain)?;
        let decisions = read_decisions(BufReader::new(file)).map_err(domain)?;
        let history = load_events(&self.input(history, None, LABELED_EVENTS)?)?;
        if events.len() != decisions.len() {
            return Err(domain(SimError::LengthMismatch {
                events: events.len(),
                decisions: decisions.len(),
            }));
        }
        let index = build_best_index(&history);
        self.log(format!(
            "best-efficiency index has {} contexts",
            index.len()
        ));

        let mut reports: Vec<SavingsReport> = Vec::new();
        let mut start = 0;
        for run in events.chunk_by(|a, b| a.journey_id == b.journey_id) {
            let end = start + run.len();
            reports.push(simulate_savings(run, &decisions[start..end], &index).map_err(domain)?);
            start = end;
        }
        let overall = combine(&reports);

        #[derive(Serialize)]
        struct Savings<'a> {
            overall: ecodrive_core::simulator::SavingsTotals,
            journeys: &'a [SavingsReport],
        }
        self.write_json(
            SAVINGS,
            &Savings {
                overall,
                journeys: &reports,
            },
        )?;
        let mut table = self.create(SAVINGS_TABLE)?;
        write_savings_table(&mut table, &reports).map_err(domain)?;
        table.flush().map_err(domain)?;

        let pct = |g: Option<f64>| g.map_or("n/a".to_string(), |g| format!("{g:.2}%"));
        for r in &reports {
            println!(
                "{}: actual {:.3} L, adjusted {:.3} L, efficiency gain {} ({} substituted, {} engine stops, {} unmatched)",
                r.journey_id,
                r.totals.actual_total_fuel,
                r.totals.adjusted_total_fuel,
                pct(r.totals.efficiency_gain_percent),
                r.substituted_count,
                r.engine_stopped_count,
                r.unmatched_count
            );
        }
        println!(
            "overall: actual {:.3} L, adjusted {:.3} L, efficiency gain {}",
            overall.actual_total_fuel,
            overall.adjusted_total_fuel,
            pct(overall.efficiency_gain_percent)
        );
        Ok(())
    }

    pub fn generate(
        &self,
        profile: Option<PathBuf>,
        journeys: Option<usize>,
        style: Option<DriverStyle>,
    ) -> Result<(), CliError> {
        let path = profile
            .or_else(|| self.cfg.paths.profile.clone())
            .ok_or_else(|| {
                CliError::Usage("no generator profile: pass --profile or set paths.profile".into())
            })?;
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "profile {} not found",
                path.display()
            )));
        }
        let mut profile = GeneratorProfile::load(&path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Some(s) = style {
            profile.driver_style = s;
        }
        let n = journeys.unwrap_or(self.cfg.generate.journeys);
        if n == 0 {
            return Err(CliError::Usage("--journeys must be positive".into()));
        }
        let base_seed = tree_seed(self.cfg.seed, STREAM_GENERATE);
        let mut records = Vec::new();
        let mut fixture = FixtureProvider::new();
        for i in 0..n {
            let mut p = profile.clone();
            p.departure += chrono::Duration::days(i as i64);
            let recs = generate_journey(&p, tree_seed(base_seed, i as u64)).map_err(domain)?;
            self.log(format!("journey {i}: {} records", recs.len()));
            fixture.merge(weather_fixture(&p, &recs, self.cfg.tz_offset_minutes));
            records.extend(recs);
        }
        write_telemetry(self.create(TELEMETRY)?, &records).map_err(domain)?;
        let mut w = self.create(WEATHER_FIXTURES)?;
        w.write_all(fixture.to_json_string().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .map_err(domain)?;
        println!("{n} journeys, {} records", records.len());
        println!("{} weather fixture entries", fixture.len());
        Ok(())
    }
}

fn load_events(path: &Path) -> Result<Vec<DrivingEvent>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    read_events(BufReader::new(file)).map_err(|e| domain(format!("{}: {e}", path.display())))
}

/// Groups events by journey, journeys in order of first appearance.
fn group_by_journey(events: &[DrivingEvent]) -> Vec<(String, Vec<&DrivingEvent>)> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<&DrivingEvent>)> = Vec::new();
    for e in events {
        let i = *slot.entry(&e.journey_id).or_insert_with(|| {
            groups.push((e.journey_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(e);
    }
    groups
}
