//! Fuel-efficiency analytics for vehicle telemetry.
//!
//! The pipeline runs in stages:
//!
//! 1. [`telemetry`] parses tracker records, splits journeys and aggregates
//!    one-minute [`DrivingEvent`]s, with weather from a [`weather`] provider.
//! 2. [`clustering`] groups each journey's events with Ward linkage and
//!    labels the clusters efficient or inefficient.
//! 3. [`classifier`] trains a random forest on labeled events.
//! 4. [`engine`] classifies new events and picks corrective advice, either
//!    stopping the engine for idling or a [`fuzzy`] inference result.
//! 5. [`simulator`] generates synthetic journeys and estimates the savings
//!    of replacing inefficient minutes with the historically best ones.

pub mod classifier;
pub mod clustering;
pub mod engine;
pub mod fuzzy;
pub mod simulator;
pub mod telemetry;
pub mod weather;

pub use telemetry::{DrivingEvent, EfficiencyLabel, RawRecord};
pub use weather::WeatherCondition;
