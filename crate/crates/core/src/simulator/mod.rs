//! Savings estimate and synthetic data.
//!
//! The estimate replays a journey's decisions: every minute judged
//! inefficient is replaced by the best efficient minute seen historically
//! under the same context (hour, weather, elevation change, location), and
//! idling minutes are assumed to have had the engine switched off.

mod generator;

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::FeedbackDecision;
use crate::telemetry::{DrivingEvent, EfficiencyLabel};
use crate::weather::WeatherCondition;

pub use generator::{
    generate_journey, haversine_km, weather_fixture, DriverStyle, FuelModel, GeneratorProfile,
    IdleStop, StyleParams, Waypoint, WeatherSpan,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid generator profile: {0}")]
    InvalidProfile(String),
    #[error("{events} events but {decisions} decisions")]
    LengthMismatch { events: usize, decisions: usize },
    #[error("decision {index} does not belong to the event at that position")]
    Misaligned { index: usize },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing table: {0}")]
    Csv(#[from] csv::Error),
}

/// Width of an elevation-change bin in meters.
pub const ELEVATION_BIN_M: f64 = 5.0;
/// Location cells per degree.
pub const CELLS_PER_DEGREE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub hour: u8,
    pub weather: WeatherCondition,
    /// `floor(elevation_change / 5 m)`
    pub elevation_bin: i64,
    /// Latitude and longitude in hundredths of a degree, rounded.
    pub location_cell: (i64, i64),
}

impl ContextKey {
    pub fn of(e: &DrivingEvent) -> Self {
        ContextKey {
            hour: e.hour,
            weather: e.weather,
            elevation_bin: (e.elevation_change / ELEVATION_BIN_M).floor() as i64,
            location_cell: (
                (e.location_anchor.0 * CELLS_PER_DEGREE).round() as i64,
                (e.location_anchor.1 * CELLS_PER_DEGREE).round() as i64,
            ),
        }
    }
}

pub type BestIndex = BTreeMap<ContextKey, f64>;

/// Best capped mileage per context over efficient, non-idling events.
pub fn build_best_index(history: &[DrivingEvent]) -> BestIndex {
    let mut index = BestIndex::new();
    for e in history {
        if e.label != EfficiencyLabel::Efficient || e.is_idling {
            continue;
        }
        let Some(m) = e.capped_mileage() else {
            continue;
        };
        index
            .entry(ContextKey::of(e))
            .and_modify(|best: &mut f64| *best = best.max(m))
            .or_insert(m);
    }
    index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Judged efficient; nothing to replace.
    Unchanged,
    /// Idling minute; fuel assumed saved by stopping the engine.
    EngineStopped,
    Substituted,
    /// Inefficient, but no efficient history under this context.
    Unmatched,
    /// Inefficient, but the minute already did at least as well as the
    /// historical best.
    NoBetterHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub event_index: usize,
    pub minute_start: DateTime<Utc>,
    pub location: (f64, f64),
    pub key: ContextKey,
    pub verdict: EfficiencyLabel,
    pub outcome: Outcome,
    pub best_mileage: Option<f64>,
    pub distance: f64,
    pub actual_fuel: f64,
    pub adjusted_fuel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsTotals {
    pub actual_total_fuel: f64,
    pub adjusted_total_fuel: f64,
    pub actual_distance: f64,
    /// Distance over fuel before and after substitution.
    pub actual_mileage: Option<f64>,
    pub adjusted_mileage: Option<f64>,
    /// `100 · (adjusted mileage − actual mileage) / actual mileage`; `None`
    /// when either mileage is undefined or all fuel was saved.
    pub efficiency_gain_percent: Option<f64>,
}

impl SavingsTotals {
    fn new(actual_total_fuel: f64, adjusted_total_fuel: f64, actual_distance: f64) -> Self {
        let mileage = |fuel: f64| (fuel > 0.0).then(|| actual_distance / fuel);
        let actual_mileage = mileage(actual_total_fuel);
        let adjusted_mileage = mileage(adjusted_total_fuel);
        // Distance cancels: the gain is a ratio of fuel totals.
        let efficiency_gain_percent = (actual_mileage.is_some_and(|m| m > 0.0)
            && adjusted_total_fuel > 0.0)
            .then(|| 100.0 * (actual_total_fuel / adjusted_total_fuel - 1.0));
        SavingsTotals {
            actual_total_fuel,
            adjusted_total_fuel,
            actual_distance,
            actual_mileage,
            adjusted_mileage,
            efficiency_gain_percent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub journey_id: String,
    #[serde(flatten)]
    pub totals: SavingsTotals,
    pub substituted_count: usize,
    pub engine_stopped_count: usize,
    pub unmatched_count: usize,
    pub events: Vec<Substitution>,
}

pub fn simulate_savings(
    events: &[DrivingEvent],
    decisions: &[FeedbackDecision],
    index: &BestIndex,
) -> Result<SavingsReport, SimError> {
    if events.len() != decisions.len() {
        return Err(SimError::LengthMismatch {
            events: events.len(),
            decisions: decisions.len(),
        });
    }
    let mut rows = Vec::with_capacity(events.len());
    let (mut substituted, mut stopped, mut unmatched) = (0, 0, 0);
    for (i, (e, d)) in events.iter().zip(decisions).enumerate() {
        if d.journey_id != e.journey_id || d.minute_start != e.minute_start {
            return Err(SimError::Misaligned { index: i });
        }
        let key = ContextKey::of(e);
        let best = index.get(&key).copied();
        let (outcome, adjusted) = match d.verdict {
            EfficiencyLabel::Inefficient if e.is_idling => (Outcome::EngineStopped, 0.0),
            EfficiencyLabel::Inefficient => match best {
                None => (Outcome::Unmatched, e.fuel_consumed),
                Some(b) if e.fuel_consumed > 0.0 && e.capped_mileage().is_some_and(|m| b > m) => {
                    (Outcome::Substituted, e.distance / b)
                }
                Some(_) => (Outcome::NoBetterHistory, e.fuel_consumed),
            },
            _ => (Outcome::Unchanged, e.fuel_consumed),
        };
        match outcome {
            Outcome::Substituted => substituted += 1,
            Outcome::EngineStopped => stopped += 1,
            Outcome::Unmatched => unmatched += 1,
            _ => {}
        }
        rows.push(Substitution {
            event_index: i,
            minute_start: e.minute_start,
            location: e.location_anchor,
            key,
            verdict: d.verdict,
            outcome,
            best_mileage: best,
            distance: e.distance,
            actual_fuel: e.fuel_consumed,
            adjusted_fuel: adjusted,
        });
    }
    let totals = SavingsTotals::new(
        rows.iter().map(|r| r.actual_fuel).sum(),
        rows.iter().map(|r| r.adjusted_fuel).sum(),
        rows.iter().map(|r| r.distance).sum(),
    );
    Ok(SavingsReport {
        journey_id: events
            .first()
            .map(|e| e.journey_id.clone())
            .unwrap_or_default(),
        totals,
        substituted_count: substituted,
        engine_stopped_count: stopped,
        unmatched_count: unmatched,
        events: rows,
    })
}

/// Totals over several journeys.
pub fn combine(reports: &[SavingsReport]) -> SavingsTotals {
    SavingsTotals::new(
        reports.iter().map(|r| r.totals.actual_total_fuel).sum(),
        reports.iter().map(|r| r.totals.adjusted_total_fuel).sum(),
        reports.iter().map(|r| r.totals.actual_distance).sum(),
    )
}

/// Per-minute actual vs adjusted fuel by location, for plotting.
pub fn write_savings_table<W: Write>(w: W, reports: &[SavingsReport]) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "journey_id",
        "minute_start",
        "latitude",
        "longitude",
        "actual_fuel_l",
        "adjusted_fuel_l",
        "outcome",
    ])?;
    for r in reports {
        for s in &r.events {
            let outcome = serde_json::to_value(s.outcome).expect("outcome serializes");
            out.write_record([
                r.journey_id.clone(),
                s.minute_start.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                s.location.0.to_string(),
                s.location.1.to_string(),
                s.actual_fuel.to_string(),
                s.adjusted_fuel.to_string(),
                outcome.as_str().unwrap_or_default().to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
