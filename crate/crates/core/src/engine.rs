//! Per-minute decision flow: classify, short-circuit on idling, otherwise
//! ask the fuzzy controller what the driver should do.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ForestModel};
use crate::fuzzy::{advise, ControlAction, FuzzyConfig, FuzzyError};
use crate::telemetry::{DrivingEvent, EfficiencyLabel};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("writing decision: {0}")]
    Io(#[from] std::io::Error),
    #[error("decision log line {line}: {source}")]
    DecisionLine {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Idling,
    DrivingPattern,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDecision {
    pub journey_id: String,
    pub minute_start: DateTime<Utc>,
    /// Position of the event in the replayed stream.
    pub event_index: usize,
    pub verdict: EfficiencyLabel,
    pub vote_fraction: f64,
    pub action: Option<ControlAction>,
    pub reason: Reason,
    /// Defuzzified advice value on `[0, 100]`, for fuzzy actions only.
    pub advice_value: Option<f64>,
    pub message: String,
}

pub fn evaluate_event(
    event: &DrivingEvent,
    event_index: usize,
    model: &ForestModel,
    fuzzy: &FuzzyConfig,
) -> Result<FeedbackDecision, EngineError> {
    let verdict = model.predict(event)?;
    let (action, reason, advice_value) = match verdict.label {
        EfficiencyLabel::Inefficient if event.is_idling => {
            (Some(ControlAction::StopEngine), Reason::Idling, None)
        }
        EfficiencyLabel::Inefficient => {
            let advice = advise(event.avg_speed, event.avg_acceleration, fuzzy)?;
            (
                Some(advice.action),
                Reason::DrivingPattern,
                Some(advice.crisp),
            )
        }
        _ => (None, Reason::None, None),
    };
    let mut decision = FeedbackDecision {
        journey_id: event.journey_id.clone(),
        minute_start: event.minute_start,
        event_index,
        verdict: verdict.label,
        vote_fraction: verdict.vote_fraction,
        action,
        reason,
        advice_value,
        message: String::new(),
    };
    decision.message = format_feedback(&decision);
    Ok(decision)
}

pub fn format_feedback(decision: &FeedbackDecision) -> String {
    let Some(action) = decision.action else {
        return String::new();
    };
    match action {
        ControlAction::StopEngine => "Excessive idling detected: please stop the engine.",
        ControlAction::Break => "Speed is high: please brake.",
        ControlAction::BreakSmoothly => "Sharp deceleration at high speed: please brake smoothly.",
        ControlAction::KeepTheSpeed => "Speed is in the economical range: please keep the speed.",
        ControlAction::AccelerateSmoothly => "Speed is low: please accelerate smoothly.",
        ControlAction::Accelerate => "Speed is low: please accelerate.",
    }
    .to_string()
}

/// Evaluates `events` in order, handing each decision to `sink` as soon as
/// it is made. Idling was already resolved during aggregation, so no state
/// is carried between events here.
pub fn run_stream<F>(
    events: &[DrivingEvent],
    model: &ForestModel,
    fuzzy: &FuzzyConfig,
    mut sink: F,
) -> Result<Vec<FeedbackDecision>, EngineError>
where
    F: FnMut(&FeedbackDecision) -> std::io::Result<()>,
{
    let mut out = Vec::with_capacity(events.len());
    for (i, e) in events.iter().enumerate() {
        let d = evaluate_event(e, i, model, fuzzy)?;
        sink(&d)?;
        out.push(d);
    }
    Ok(out)
}

/// Sink writing one JSON object per line.
pub fn jsonl_sink<W: Write>(mut w: W) -> impl FnMut(&FeedbackDecision) -> std::io::Result<()> {
    move |d| {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")
    }
}

pub fn read_decisions<R: Read>(reader: R) -> Result<Vec<FeedbackDecision>, EngineError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| EngineError::DecisionLine {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{DecisionTree, ForestParams, Node, SCHEMA_VERSION};
    use crate::clustering::FEATURE_NAMES;
    use crate::weather::{SeverityOrder, WeatherCondition};
    use chrono::TimeZone;

    fn stub_model(counts: [u32; 2]) -> ForestModel {
        ForestModel {
            schema_version: SCHEMA_VERSION,
            params: ForestParams {
                ntree: 1,
                ..Default::default()
            },
            feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            severity_order: SeverityOrder::default(),
            oob_error: None,
            training_size: 1,
            trees: vec![DecisionTree {
                root: Node::Leaf { counts },
            }],
        }
    }

    /// Inefficient below 10 km/h, efficient above.
    fn speed_model() -> ForestModel {
        let mut m = stub_model([1, 0]);
        m.trees[0].root = Node::Split {
            feature: 0,
            threshold: 10.0,
            left: Box::new(Node::Leaf { counts: [0, 3] }),
            right: Box::new(Node::Leaf { counts: [3, 0] }),
        };
        m
    }

    fn event(speed: f64, accel: f64, idling: bool) -> DrivingEvent {
        DrivingEvent {
            journey_id: "J1".into(),
            minute_start: Utc.with_ymd_and_hms(2020, 3, 1, 8, 0, 0).unwrap(),
            avg_speed: speed,
            avg_acceleration: accel,
            elevation_change: 0.0,
            distance: speed / 60.0,
            fuel_consumed: 0.05,
            is_idling: idling,
            hour: 8,
            weather: WeatherCondition::Clear,
            fuel_mileage: Some(speed / 3.0),
            location_anchor: (7.0, 80.0),
            label: EfficiencyLabel::Unlabeled,
        }
    }

    #[test]
    fn idling_inefficient_event_stops_engine() {
        let d = evaluate_event(
            &event(0.0, 0.0, true),
            0,
            &stub_model([0, 4]),
            &FuzzyConfig::default(),
        )
        .unwrap();
        assert_eq!(d.action, Some(ControlAction::StopEngine));
        assert_eq!(d.reason, Reason::Idling);
        assert_eq!(
            d.message,
            "Excessive idling detected: please stop the engine."
        );
        assert_eq!(d.advice_value, None);
    }

    #[test]
    fn fast_inefficient_event_brakes() {
        let d = evaluate_event(
            &event(100.0, 0.0, false),
            0,
            &stub_model([0, 4]),
            &FuzzyConfig::default(),
        )
        .unwrap();
        assert_eq!(d.action, Some(ControlAction::Break));
        assert_eq!(d.reason, Reason::DrivingPattern);
        assert_eq!(d.message, "Speed is high: please brake.");
    }

    #[test]
    fn efficient_event_gets_no_action() {
        let d = evaluate_event(
            &event(0.0, 0.0, true),
            0,
            &stub_model([4, 0]),
            &FuzzyConfig::default(),
        )
        .unwrap();
        assert_eq!(d.verdict, EfficiencyLabel::Efficient);
        assert_eq!(
            (d.action, d.reason, d.message.as_str()),
            (None, Reason::None, "")
        );
    }

    #[test]
    fn stream_is_one_to_one_and_repeatable() {
        let fuzzy = FuzzyConfig::default();
        let model = speed_model();
        assert!(run_stream(&[], &model, &fuzzy, |_| Ok(()))
            .unwrap()
            .is_empty());

        let events: Vec<DrivingEvent> = (0..30)
            .map(|i| event((i * 4) as f64, (i as f64 - 15.0) * 300.0, i % 7 == 0))
            .collect();
        let mut buf = Vec::new();
        let first = run_stream(&events, &model, &fuzzy, jsonl_sink(&mut buf)).unwrap();
        assert_eq!(first.len(), events.len());
        for (i, (d, e)) in first.iter().zip(&events).enumerate() {
            assert_eq!(d.event_index, i);
            assert_eq!(
                d.action.is_some(),
                d.verdict == EfficiencyLabel::Inefficient
            );
            assert_eq!(
                d.action == Some(ControlAction::StopEngine),
                d.reason == Reason::Idling
            );
            if d.action.is_some() {
                assert_eq!(d.action == Some(ControlAction::StopEngine), e.is_idling);
            }
        }
        assert_eq!(read_decisions(&buf[..]).unwrap(), first);
        let mut again = Vec::new();
        run_stream(&events, &model, &fuzzy, jsonl_sink(&mut again)).unwrap();
        assert_eq!(buf, again);
    }
}
