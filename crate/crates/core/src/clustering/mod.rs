//! Per-journey hierarchical clustering of driving events and cluster
//! labeling.
//!
//! Each journey is clustered on its own: feature vectors are z-scored with
//! the journey's statistics, agglomerated with Ward linkage, cut into flat
//! clusters, summarized, and labeled by rules. Member events inherit their
//! cluster's label.

mod labeling;
mod ward;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{DrivingEvent, EfficiencyLabel};
use crate::weather::{SeverityOrder, WeatherCondition};

pub use labeling::{
    label_clusters, LabelRuleConfig, Op, Operand, Overrides, Predicate, Rule, SummaryField,
    BENIGN_SEVERITY_MAX, CONGESTION_SPEED, ECONOMY_FLOOR, PEAK_HOURS,
};
pub use ward::{cut_dendrogram, cut_effective, euclidean, ward_cluster, Cut, Dendrogram, Merge};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least {needed} items, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("cluster count {k} invalid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("cut height {0} invalid")]
    InvalidHeight(f64),
    #[error("points have differing dimensions")]
    DimensionMismatch,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("label rules: {0}")]
    Config(String),
}

pub const FEATURE_DIMS: usize = 6;

/// Feature order shared by clustering and classification.
pub const FEATURE_NAMES: [&str; FEATURE_DIMS] = [
    "avg_speed",
    "avg_acceleration",
    "is_idling",
    "elevation_change",
    "hour",
    "weather_severity",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIMS]);

impl FeatureVector {
    pub fn from_event(e: &DrivingEvent, order: &SeverityOrder) -> Self {
        FeatureVector([
            e.avg_speed,
            e.avg_acceleration,
            if e.is_idling { 1.0 } else { 0.0 },
            e.elevation_change,
            e.hour as f64,
            order.rank(e.weather) as f64,
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; FEATURE_DIMS],
    /// Sample standard deviation; 0 marks a constant dimension.
    pub std_dev: [f64; FEATURE_DIMS],
}

impl Standardization {
    pub fn apply(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_DIMS];
        for (d, slot) in out.iter_mut().enumerate() {
            if self.std_dev[d] > 0.0 {
                *slot = (v.0[d] - self.mean[d]) / self.std_dev[d];
            }
        }
        FeatureVector(out)
    }

    pub fn invert(&self, z: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_DIMS];
        for (d, slot) in out.iter_mut().enumerate() {
            *slot = self.mean[d] + z.0[d] * self.std_dev[d];
        }
        FeatureVector(out)
    }
}

/// Z-scores every dimension with its mean and sample (n-1) standard
/// deviation. Constant dimensions map to zero.
pub fn standardize(
    vectors: &[FeatureVector],
) -> Result<(Vec<FeatureVector>, Standardization), ClusterError> {
    let n = vectors.len();
    if n < 2 {
        return Err(ClusterError::InsufficientData { needed: 2, got: n });
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let mut stats = Standardization {
        mean: [0.0; FEATURE_DIMS],
        std_dev: [0.0; FEATURE_DIMS],
    };
    for d in 0..FEATURE_DIMS {
        let col = vectors.iter().map(|v| v.0[d]);
        let (lo, hi) = col
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        let mean = col.clone().sum::<f64>() / n as f64;
        stats.mean[d] = mean;
        // Exact constancy check; the computed mean of equal values may be
        // off by an ulp and would otherwise yield noise z-scores.
        if lo < hi {
            let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            stats.std_dev[d] = var.sqrt();
        }
    }
    Ok((vectors.iter().map(|v| stats.apply(v)).collect(), stats))
}

/// One row of the cluster report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub journey_id: String,
    pub cluster_id: usize,
    pub n_members: usize,
    pub mean_speed: f64,
    pub mean_acceleration: f64,
    pub mean_elevation_change: f64,
    pub is_idling_mode: u8,
    pub hour_mode: u8,
    pub weather_mode: WeatherCondition,
    /// Mean capped mileage over members with a defined mileage, else 0.
    pub mean_fuel_economy: f64,
    pub label: EfficiencyLabel,
}

/// Most frequent value; ties go to the smallest.
fn mode<T: Ord + Copy>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // max_by_key returns the last maximum; iterate in reverse for smallest.
    counts
        .into_iter()
        .rev()
        .max_by_key(|(_, c)| *c)
        .map(|(v, _)| v)
}

pub fn summarize_cluster(
    journey_id: &str,
    cluster_id: usize,
    members: &[&DrivingEvent],
) -> ClusterSummary {
    assert!(!members.is_empty(), "a cluster has at least one member");
    let n = members.len() as f64;
    let mean = |f: fn(&DrivingEvent) -> f64| members.iter().map(|e| f(e)).sum::<f64>() / n;
    let mileages: Vec<f64> = members.iter().filter_map(|e| e.capped_mileage()).collect();
    ClusterSummary {
        journey_id: journey_id.to_string(),
        cluster_id,
        n_members: members.len(),
        mean_speed: mean(|e| e.avg_speed),
        mean_acceleration: mean(|e| e.avg_acceleration),
        mean_elevation_change: mean(|e| e.elevation_change),
        is_idling_mode: mode(members.iter().map(|e| u8::from(e.is_idling))).unwrap_or(0),
        hour_mode: mode(members.iter().map(|e| e.hour)).unwrap_or(0),
        weather_mode: mode(members.iter().map(|e| e.weather)).unwrap_or(WeatherCondition::FALLBACK),
        mean_fuel_economy: if mileages.is_empty() {
            0.0
        } else {
            mileages.iter().sum::<f64>() / mileages.len() as f64
        },
        label: EfficiencyLabel::Unlabeled,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub cut: Cut,
    /// Journeys with fewer events are left unlabeled.
    pub min_events: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            cut: Cut::Clusters(7),
            min_events: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JourneyClustering {
    /// Input events with labels attached.
    pub events: Vec<DrivingEvent>,
    /// 1-based cluster of each event; empty when skipped.
    pub assignment: Vec<usize>,
    pub summaries: Vec<ClusterSummary>,
    pub dendrogram: Option<Dendrogram>,
    pub warning: Option<String>,
}

/// Standardize, agglomerate, cut, summarize, label, and propagate labels
/// for one journey's events.
pub fn cluster_journey(
    journey_id: &str,
    events: &[DrivingEvent],
    params: &ClusterParams,
    rules: &LabelRuleConfig,
    overrides: &Overrides,
) -> Result<JourneyClustering, ClusterError> {
    let min_events = params.min_events.max(2);
    if events.len() < min_events {
        return Ok(JourneyClustering {
            events: events
                .iter()
                .map(|e| DrivingEvent {
                    label: EfficiencyLabel::Unlabeled,
                    ..e.clone()
                })
                .collect(),
            assignment: Vec::new(),
            summaries: Vec::new(),
            dendrogram: None,
            warning: Some(format!(
                "journey {journey_id}: {} events below minimum of {min_events}, left unlabeled",
                events.len()
            )),
        });
    }
    let raw: Vec<FeatureVector> = events
        .iter()
        .map(|e| FeatureVector::from_event(e, &rules.severity_order))
        .collect();
    let (z, _) = standardize(&raw)?;
    let dendrogram = ward_cluster(&z)?;
    let cut = match params.cut {
        Cut::Clusters(k) => Cut::Clusters(k.min(events.len())),
        h => h,
    };
    let assignment = cut_effective(&dendrogram, cut)?;
    let k = assignment.iter().copied().max().unwrap_or(0);
    let mut members: Vec<Vec<&DrivingEvent>> = vec![Vec::new(); k];
    for (e, &c) in events.iter().zip(&assignment) {
        members[c - 1].push(e);
    }
    let summaries: Vec<ClusterSummary> = members
        .iter()
        .enumerate()
        .map(|(i, m)| summarize_cluster(journey_id, i + 1, m))
        .collect();
    let summaries = label_clusters(&summaries, rules, overrides);
    let labeled = events
        .iter()
        .zip(&assignment)
        .map(|(e, &c)| DrivingEvent {
            label: summaries[c - 1].label,
            ..e.clone()
        })
        .collect();
    Ok(JourneyClustering {
        events: labeled,
        assignment,
        summaries,
        dendrogram: Some(dendrogram),
        warning: None,
    })
}

/// Writes summaries as a tab-separated table with Table-I style columns.
pub fn write_cluster_report<W: Write>(
    mut w: W,
    summaries: &[ClusterSummary],
) -> std::io::Result<()> {
    writeln!(
        w,
        "journey_id\tcluster\tmean_speed_kmh\tmean_acceleration_kmh2\tmean_elevation_change_m\tis_idling_mode\thour_mode\tweather_mode\tmean_fuel_economy_kml\tfuel_efficiency\tn_members"
    )?;
    for s in summaries {
        writeln!(
            w,
            "{}\t{}\t{:.2}\t{:.2}\t{:.3}\t{}\t{:02}:00\t{}\t{:.2}\t{}\t{}",
            s.journey_id,
            s.cluster_id,
            s.mean_speed,
            s.mean_acceleration,
            s.mean_elevation_change,
            s.is_idling_mode,
            s.hour_mode,
            s.weather_mode,
            s.mean_fuel_economy,
            s.label,
            s.n_members
        )?;
    }
    w.flush()
}
