//! Raw tracker records, journey splitting and one-minute aggregation.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Duration, DurationRound, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weather::{WeatherCondition, WeatherProvider, WeatherQuery};

/// Mileage reported for minutes with near-zero consumption is capped here.
pub const MILEAGE_CAP: f64 = 999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub timestamp: DateTime<Utc>,
    pub longitude: f64,
    pub latitude: f64,
    pub bearing: f64,
    pub elevation: f64,
    /// km since the previous record
    pub distance: f64,
    /// km/h
    pub speed: f64,
    /// km/h²
    pub acceleration: f64,
    pub ignition: bool,
    pub battery_voltage: f64,
    /// liters in the tank
    pub fuel_level: f64,
    /// liters since the previous record
    pub fuel_consumed: f64,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub enum EfficiencyLabel {
    Efficient,
    Inefficient,
    #[default]
    Unlabeled,
}

impl fmt::Display for EfficiencyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EfficiencyLabel::Efficient => "Efficient",
            EfficiencyLabel::Inefficient => "Inefficient",
            EfficiencyLabel::Unlabeled => "Unlabeled",
        })
    }
}

impl std::str::FromStr for EfficiencyLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "efficient" => Ok(EfficiencyLabel::Efficient),
            "inefficient" => Ok(EfficiencyLabel::Inefficient),
            "unlabeled" => Ok(EfficiencyLabel::Unlabeled),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One wall-clock minute of driving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingEvent {
    pub journey_id: String,
    pub minute_start: DateTime<Utc>,
    pub avg_speed: f64,
    pub avg_acceleration: f64,
    pub elevation_change: f64,
    pub distance: f64,
    pub fuel_consumed: f64,
    pub is_idling: bool,
    pub hour: u8,
    pub weather: WeatherCondition,
    /// km/L; `None` when nothing was consumed.
    pub fuel_mileage: Option<f64>,
    /// (latitude, longitude) of the minute's first record.
    pub location_anchor: (f64, f64),
    #[serde(default)]
    pub label: EfficiencyLabel,
}

impl DrivingEvent {
    /// Mileage clamped to [`MILEAGE_CAP`] for summaries and reports.
    pub fn capped_mileage(&self) -> Option<f64> {
        self.fuel_mileage.map(|m| m.min(MILEAGE_CAP))
    }
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("reading telemetry: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("events line {line}: {source}")]
    EventLine {
        line: usize,
        source: serde_json::Error,
    },
}

/// A rejected input row. Rejections are collected, never fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowIssue {
    MalformedRow { line: u64, reason: String },
    RangeViolation { line: u64, field: Field },
    OutOfOrder { line: u64 },
}

impl RowIssue {
    pub fn line(&self) -> u64 {
        match self {
            RowIssue::MalformedRow { line, .. }
            | RowIssue::RangeViolation { line, .. }
            | RowIssue::OutOfOrder { line } => *line,
        }
    }
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowIssue::MalformedRow { line, reason } => {
                write!(f, "line {line}: malformed row: {reason}")
            }
            RowIssue::RangeViolation { line, field } => {
                write!(f, "line {line}: {} out of range", field.name())
            }
            RowIssue::OutOfOrder { line } => {
                write!(f, "line {line}: timestamp not after previous record")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Timestamp,
    Longitude,
    Latitude,
    Bearing,
    Elevation,
    Distance,
    Speed,
    Acceleration,
    Ignition,
    BatteryVoltage,
    FuelLevel,
    FuelConsumed,
}

impl Field {
    pub const ALL: [Field; 12] = [
        Field::Timestamp,
        Field::Longitude,
        Field::Latitude,
        Field::Bearing,
        Field::Elevation,
        Field::Distance,
        Field::Speed,
        Field::Acceleration,
        Field::Ignition,
        Field::BatteryVoltage,
        Field::FuelLevel,
        Field::FuelConsumed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Timestamp => "timestamp",
            Field::Longitude => "longitude",
            Field::Latitude => "latitude",
            Field::Bearing => "bearing",
            Field::Elevation => "elevation",
            Field::Distance => "distance",
            Field::Speed => "speed",
            Field::Acceleration => "acceleration",
            Field::Ignition => "ignition",
            Field::BatteryVoltage => "battery_voltage",
            Field::FuelLevel => "fuel_level",
            Field::FuelConsumed => "fuel_consumed",
        }
    }
}

/// Maps record fields to header names and sets the range bounds.
#[derive(Debug, Clone)]
pub struct Schema {
    pub delimiter: u8,
    pub columns: HashMap<Field, String>,
    pub tank_capacity: f64,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            delimiter: b',',
            columns: Field::ALL
                .iter()
                .map(|f| (*f, f.name().to_string()))
                .collect(),
            tank_capacity: 400.0,
        }
    }
}

impl Schema {
    pub fn with_column(mut self, field: Field, header: impl Into<String>) -> Self {
        self.columns.insert(field, header.into());
        self
    }
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawRecord>,
    pub issues: Vec<RowIssue>,
}

impl ParseOutcome {
    pub fn malformed_count(&self) -> usize {
        self.issues
            .iter()
            .filter(|i| matches!(i, RowIssue::MalformedRow { .. }))
            .count()
    }

    pub fn range_violation_count(&self) -> usize {
        self.issues
            .iter()
            .filter(|i| matches!(i, RowIssue::RangeViolation { .. }))
            .count()
    }
}

/// Parses delimiter-separated telemetry. Bad rows are skipped and reported
/// in [`ParseOutcome::issues`]; only I/O failures and a header missing a
/// mapped column are fatal.
pub fn parse_telemetry<R: Read>(
    reader: R,
    schema: &Schema,
) -> Result<ParseOutcome, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut outcome = ParseOutcome::default();
    // An empty stream has no header at all.
    let headers = match rdr.headers() {
        Ok(h) if h.is_empty() => return Ok(outcome),
        Ok(h) => h.clone(),
        Err(e) => return Err(e.into()),
    };
    let mut index = [0usize; 12];
    for (slot, field) in index.iter_mut().zip(Field::ALL) {
        let name = &schema.columns[&field];
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TelemetryError::MissingColumn(name.clone()))?;
    }

    let mut last_ts: Option<DateTime<Utc>> = None;
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                if e.is_io_error() {
                    return Err(e.into());
                }
                outcome.issues.push(RowIssue::MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |f: Field| row.get(index[f as usize]).unwrap_or("");
        let record = match parse_row(&get) {
            Ok(r) => r,
            Err(reason) => {
                outcome.issues.push(RowIssue::MalformedRow { line, reason });
                continue;
            }
        };
        if let Some(field) = range_violation(&record, schema.tank_capacity) {
            outcome
                .issues
                .push(RowIssue::RangeViolation { line, field });
            continue;
        }
        if last_ts.is_some_and(|t| record.timestamp <= t) {
            outcome.issues.push(RowIssue::OutOfOrder { line });
            continue;
        }
        last_ts = Some(record.timestamp);
        outcome.records.push(record);
    }
    Ok(outcome)
}

fn parse_row<'a>(get: &dyn Fn(Field) -> &'a str) -> Result<RawRecord, String> {
    let num = |f: Field| -> Result<f64, String> {
        let raw = get(f);
        let v: f64 = raw
            .parse()
            .map_err(|_| format!("{}: cannot parse {raw:?} as a number", f.name()))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{}: non-finite value", f.name()))
        }
    };
    Ok(RawRecord {
        timestamp: parse_timestamp(get(Field::Timestamp))
            .ok_or_else(|| format!("timestamp: cannot parse {:?}", get(Field::Timestamp)))?,
        longitude: num(Field::Longitude)?,
        latitude: num(Field::Latitude)?,
        bearing: num(Field::Bearing)?,
        elevation: num(Field::Elevation)?,
        distance: num(Field::Distance)?,
        speed: num(Field::Speed)?,
        acceleration: num(Field::Acceleration)?,
        ignition: parse_bool(get(Field::Ignition))
            .ok_or_else(|| format!("ignition: cannot parse {:?}", get(Field::Ignition)))?,
        battery_voltage: num(Field::BatteryVoltage)?,
        fuel_level: num(Field::FuelLevel)?,
        fuel_consumed: num(Field::FuelConsumed)?,
    })
}

/// ISO-8601 with or without offset; a missing offset means UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
    .map(|n| n.and_utc())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "on" | "yes" => Some(true),
        "0" | "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

fn range_violation(r: &RawRecord, tank_capacity: f64) -> Option<Field> {
    if !(-90.0..=90.0).contains(&r.latitude) {
        Some(Field::Latitude)
    } else if !(-180.0..=180.0).contains(&r.longitude) {
        Some(Field::Longitude)
    } else if !(0.0..360.0).contains(&r.bearing) {
        Some(Field::Bearing)
    } else if r.speed < 0.0 {
        Some(Field::Speed)
    } else if r.distance < 0.0 {
        Some(Field::Distance)
    } else if r.fuel_consumed < 0.0 {
        Some(Field::FuelConsumed)
    } else if !(0.0..=tank_capacity).contains(&r.fuel_level) {
        Some(Field::FuelLevel)
    } else {
        None
    }
}

/// Writes records in the same delimited layout [`parse_telemetry`] reads
/// under the default schema.
pub fn write_telemetry<W: Write>(writer: W, records: &[RawRecord]) -> Result<(), TelemetryError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(Field::ALL.iter().map(|f| f.name()))?;
    for r in records {
        w.write_record([
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            r.longitude.to_string(),
            r.latitude.to_string(),
            r.bearing.to_string(),
            r.elevation.to_string(),
            r.distance.to_string(),
            r.speed.to_string(),
            r.acceleration.to_string(),
            u8::from(r.ignition).to_string(),
            r.battery_voltage.to_string(),
            r.fuel_level.to_string(),
            r.fuel_consumed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitOptions {
    /// Any inter-record gap longer than this starts a new journey.
    pub gap_threshold: Duration,
    /// An ignition off→on transition after a gap longer than this also
    /// starts a new journey.
    pub ignition_restart_gap: Duration,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            gap_threshold: Duration::minutes(120),
            ignition_restart_gap: Duration::minutes(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub id: String,
    pub records: Vec<RawRecord>,
}

pub fn journey_id(start: DateTime<Utc>) -> String {
    start.format("J%Y%m%dT%H%M%S").to_string()
}

pub fn split_journeys(records: Vec<RawRecord>, opts: &SplitOptions) -> Vec<Journey> {
    let mut journeys: Vec<Journey> = Vec::new();
    let mut current: Vec<RawRecord> = Vec::new();
    for r in records {
        if let Some(prev) = current.last() {
            let gap = r.timestamp - prev.timestamp;
            let restart = !prev.ignition && r.ignition && gap > opts.ignition_restart_gap;
            if gap > opts.gap_threshold || restart {
                let records = std::mem::take(&mut current);
                journeys.push(Journey {
                    id: journey_id(records[0].timestamp),
                    records,
                });
            }
        }
        current.push(r);
    }
    if !current.is_empty() {
        journeys.push(Journey {
            id: journey_id(current[0].timestamp),
            records: current,
        });
    }
    journeys
}

/// Idling state carried from one minute to the next.
///
/// A minute is idling only if every record in it has zero speed with the
/// ignition on and the previous minute ended in that same state, so the
/// stationary span exceeds one minute.
pub fn derive_is_idling(
    minute: &[RawRecord],
    previous_minute_idle_candidate: bool,
) -> (bool, bool) {
    let stationary = |r: &RawRecord| r.speed == 0.0 && r.ignition;
    let all_stationary = !minute.is_empty() && minute.iter().all(stationary);
    let next_candidate = minute.last().is_some_and(stationary);
    (
        all_stationary && previous_minute_idle_candidate,
        next_candidate,
    )
}

/// Nearest hour of the day; half past rounds up and 23:30 onward wraps to 0.
pub fn derive_hour(timestamp: DateTime<Utc>) -> u8 {
    round_to_hour(timestamp).hour() as u8
}

fn round_to_hour(t: DateTime<Utc>) -> DateTime<Utc> {
    (t + Duration::minutes(30))
        .duration_trunc(Duration::hours(1))
        .expect("hour truncation in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AggregateOptions {
    /// Added to UTC timestamps before deriving the local hour and the
    /// weather query's date and hour.
    pub tz_offset_minutes: i32,
}

#[derive(Debug, Default)]
pub struct Aggregation {
    pub events: Vec<DrivingEvent>,
    /// Minutes whose weather fell back to [`WeatherCondition::FALLBACK`].
    pub weather_fallbacks: usize,
}

/// Collapses a journey into one event per wall-clock minute that has at
/// least one record.
pub fn aggregate_events(
    journey: &Journey,
    weather: &dyn WeatherProvider,
    opts: &AggregateOptions,
) -> Aggregation {
    let mut out = Aggregation::default();
    let offset = Duration::minutes(opts.tz_offset_minutes as i64);
    let mut candidate = false;
    let mut prev_minute: Option<DateTime<Utc>> = None;

    for minute in journey
        .records
        .chunk_by(|a, b| truncate_minute(a.timestamp) == truncate_minute(b.timestamp))
    {
        let first = &minute[0];
        let last = &minute[minute.len() - 1];
        let minute_start = truncate_minute(first.timestamp);
        // Tracker gaps break an idling span.
        if prev_minute.is_some_and(|p| minute_start - p != Duration::minutes(1)) {
            candidate = false;
        }
        let (is_idling, next_candidate) = derive_is_idling(minute, candidate);
        candidate = next_candidate;
        prev_minute = Some(minute_start);

        let n = minute.len() as f64;
        let distance: f64 = minute.iter().map(|r| r.distance).sum();
        let fuel: f64 = minute.iter().map(|r| r.fuel_consumed).sum();
        let local = round_to_hour(minute_start + offset);
        let query = WeatherQuery {
            latitude: first.latitude,
            longitude: first.longitude,
            date: local.date_naive(),
            hour: local.hour() as u8,
        };
        let condition = weather.lookup(&query).unwrap_or_else(|_| {
            out.weather_fallbacks += 1;
            WeatherCondition::FALLBACK
        });
        out.events.push(DrivingEvent {
            journey_id: journey.id.clone(),
            minute_start,
            avg_speed: minute.iter().map(|r| r.speed).sum::<f64>() / n,
            avg_acceleration: minute.iter().map(|r| r.acceleration).sum::<f64>() / n,
            elevation_change: last.elevation - first.elevation,
            distance,
            fuel_consumed: fuel,
            is_idling,
            hour: local.hour() as u8,
            weather: condition,
            fuel_mileage: (fuel > 0.0).then(|| distance / fuel),
            location_anchor: (first.latitude, first.longitude),
            label: EfficiencyLabel::Unlabeled,
        });
    }
    out
}

fn truncate_minute(t: DateTime<Utc>) -> DateTime<Utc> {
    t.duration_trunc(Duration::minutes(1))
        .expect("minute truncation in range")
}

/// Writes events as JSON lines.
pub fn write_events<W: Write>(
    mut writer: W,
    events: &[DrivingEvent],
) -> Result<(), TelemetryError> {
    for e in events {
        serde_json::to_writer(&mut writer, e)
            .map_err(|source| TelemetryError::EventLine { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<DrivingEvent>, TelemetryError> {
    use std::io::BufRead;
    let mut events = Vec::new();
    for (i, line) in std::io::BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&line).map_err(|source| TelemetryError::EventLine {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(events)
}
